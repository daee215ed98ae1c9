//! Couplings of two copies of a chain, exact expected drifts under them,
//! variance-floor witnesses and coalescence-time estimation.
//!
//! Every coupling here chooses the same vertex in both copies and relates
//! the two proposed colors by a transposition: with a reference vertex `u`,
//! the first copy proposing `σ_u` makes the second propose `τ_u` and vice
//! versa, every other color is shared. The kinds differ only in how `u` is
//! picked.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_traits::{Signed, ToPrimitive, Zero};

use crate::domain::{enumerate_colorings, optimal_heights, Color, Coloring, Graph, VertexWeights};
use crate::dynamics::{glauber_draw, scan_draw, update_in_place, BaseChain, ChainSpec, RandomTape, TapeRow};
use crate::error::invalid;
use crate::{Error, Exact, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CouplingKind {
    IdentityGlauber,
    IdentityScan,
    /// Glauber: swap the two colors of a disagreeing neighbor.
    Q4Glauber,
    /// Scan: swap the two colors of the left neighbor if it disagrees,
    /// otherwise of the right neighbor if that one does.
    Q4Scan,
    /// Scan: always swap the colors of the previously updated neighbor.
    SwitchScan,
    /// Glauber: swap the colors of a prescribed neighbor per vertex.
    SwitchGlauber,
}

impl CouplingKind {
    pub const ALL: [CouplingKind; 6] = [
        CouplingKind::IdentityGlauber,
        CouplingKind::IdentityScan,
        CouplingKind::Q4Glauber,
        CouplingKind::Q4Scan,
        CouplingKind::SwitchScan,
        CouplingKind::SwitchGlauber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CouplingKind::IdentityGlauber => "identity_glauber",
            CouplingKind::IdentityScan => "identity_scan",
            CouplingKind::Q4Glauber => "q4_glauber",
            CouplingKind::Q4Scan => "q4_scan",
            CouplingKind::SwitchScan => "switch_scan",
            CouplingKind::SwitchGlauber => "switch_glauber_important_neighbor",
        }
    }

    pub fn is_glauber(self) -> bool {
        matches!(
            self,
            CouplingKind::IdentityGlauber | CouplingKind::Q4Glauber | CouplingKind::SwitchGlauber
        )
    }
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CouplingKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "switch_glauber" && *k == CouplingKind::SwitchGlauber))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown coupling kind {s:?}")))
    }
}

/// Branch of the transposition taken at one vertex update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SwitchOption {
    /// First copy proposed its own reference color.
    A,
    /// First copy proposed the other copy's reference color.
    B,
    /// Shared proposal.
    C,
}

/// One coupled vertex update, as seen by an observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateEvent {
    pub vertex: usize,
    pub reference: Option<usize>,
    /// Whether the reference vertex disagreed just before the update.
    pub reference_disagreed: bool,
    pub option: SwitchOption,
}

#[inline]
fn transpose(c: Color, a: Color, b: Color) -> (Color, SwitchOption) {
    if a == b {
        (c, SwitchOption::C)
    } else if c == a {
        (b, SwitchOption::A)
    } else if c == b {
        (a, SwitchOption::B)
    } else {
        (c, SwitchOption::C)
    }
}

/// Two copies of a chain (the second possibly clamped) and the rule tying
/// their proposals together.
#[derive(Clone, Debug)]
pub struct Coupler {
    kind: CouplingKind,
    first: ChainSpec,
    second: ChainSpec,
    important: Vec<Option<usize>>,
}

impl Coupler {
    pub fn new(kind: CouplingKind, spec: &ChainSpec) -> Result<Self> {
        let glauber = spec.base() == BaseChain::Glauber;
        if kind.is_glauber() != glauber {
            return invalid(format!("coupling {kind} does not fit {}", spec.describe()));
        }
        let path_clique = spec.graph().is_path() && spec.target().is_clique();
        match kind {
            CouplingKind::Q4Glauber | CouplingKind::Q4Scan if !(path_clique && spec.h() >= 4) => {
                return invalid(format!("coupling {kind} needs proper colorings of a path with q >= 4"));
            }
            CouplingKind::SwitchScan | CouplingKind::SwitchGlauber if !path_clique => {
                return invalid(format!("coupling {kind} needs proper colorings of a path"));
            }
            _ => {}
        }
        Ok(Coupler {
            kind,
            first: spec.clone(),
            second: spec.clone(),
            important: vec![None; spec.n()],
        })
    }

    /// Replaces the chain run by the second copy; only the clamp set may
    /// differ.
    pub fn with_second(mut self, spec: ChainSpec) -> Result<Self> {
        if spec.graph() != self.first.graph()
            || spec.target() != self.first.target()
            || spec.base() != self.first.base()
            || spec.is_lazy() != self.first.is_lazy()
        {
            return invalid("both copies must run the same chain up to clamping");
        }
        self.second = spec;
        Ok(self)
    }

    /// Per-vertex reference neighbors for [`CouplingKind::SwitchGlauber`].
    pub fn with_important(mut self, important: Vec<Option<usize>>) -> Result<Self> {
        if important.len() != self.first.n() {
            return Err(Error::LengthMismatch {
                expected: self.first.n(),
                got: important.len(),
            });
        }
        for (v, w) in important.iter().enumerate() {
            if let Some(w) = *w {
                if !self.first.graph().neighbors(v).contains(&w) {
                    return invalid(format!("important neighbor {} of {} is not adjacent", w + 1, v + 1));
                }
            }
        }
        self.important = important;
        Ok(self)
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn first(&self) -> &ChainSpec {
        &self.first
    }

    pub fn second(&self) -> &ChainSpec {
        &self.second
    }

    pub fn n(&self) -> usize {
        self.first.n()
    }

    fn reference(&self, sigma: &[Color], tau: &[Color], v: usize) -> Option<usize> {
        let n = sigma.len();
        match self.kind {
            CouplingKind::IdentityGlauber | CouplingKind::IdentityScan => None,
            CouplingKind::Q4Glauber | CouplingKind::Q4Scan => {
                if v > 0 && sigma[v - 1] != tau[v - 1] {
                    Some(v - 1)
                } else if v + 1 < n && sigma[v + 1] != tau[v + 1] {
                    Some(v + 1)
                } else {
                    None
                }
            }
            CouplingKind::SwitchScan => match self.first.base() {
                BaseChain::ReverseScan => (v + 1 < n).then_some(v + 1),
                _ => v.checked_sub(1),
            },
            CouplingKind::SwitchGlauber => self.important[v],
        }
    }

    /// Coupled Metropolis update at `v`, the first copy proposing `c`.
    pub fn update(&self, sigma: &mut [Color], tau: &mut [Color], v: usize, c: Color) -> UpdateEvent {
        let reference = self.reference(sigma, tau, v);
        let (c2, option, reference_disagreed) = match reference {
            Some(u) => {
                let (c2, opt) = transpose(c, sigma[u], tau[u]);
                (c2, opt, sigma[u] != tau[u])
            }
            None => (c, SwitchOption::C, false),
        };
        update_in_place(&self.first, sigma, v, c);
        update_in_place(&self.second, tau, v, c2);
        UpdateEvent {
            vertex: v,
            reference,
            reference_disagreed,
            option,
        }
    }

    /// One coupled Glauber step or sweep, reporting each vertex update.
    pub fn step_observed<F: FnMut(UpdateEvent)>(
        &self,
        sigma: &mut Coloring,
        tau: &mut Coloring,
        tape: &RandomTape,
        replicate: u64,
        t: u64,
        mut observe: F,
    ) {
        if self.kind.is_glauber() {
            let d = glauber_draw(&self.first, tape, replicate, t);
            if !d.stay {
                observe(self.update(&mut sigma.0, &mut tau.0, d.vertex, d.color));
            }
        } else {
            let row = tape.row(replicate, t);
            self.sweep_row(sigma, tau, &row, &mut observe);
        }
    }

    fn sweep_row<F: FnMut(UpdateEvent)>(&self, sigma: &mut Coloring, tau: &mut Coloring, row: &TapeRow, observe: &mut F) {
        let h = self.first.h();
        for v in self.first.sweep_order() {
            let c = scan_draw(row, v, h);
            observe(self.update(&mut sigma.0, &mut tau.0, v, c));
        }
    }

    pub fn step(&self, sigma: &mut Coloring, tau: &mut Coloring, tape: &RandomTape, replicate: u64, t: u64) {
        self.step_observed(sigma, tau, tape, replicate, t, |_| {});
    }

    /// Exact joint outcomes of one step, weights over [`Coupler::denominator`].
    pub fn outcomes(&self, sigma: &Coloring, tau: &Coloring) -> Vec<((Coloring, Coloring), u64)> {
        self.outcomes_from(sigma, tau, 0)
    }

    /// As [`Coupler::outcomes`] for a sweep that skips the first `skip`
    /// vertices of the sweep order; the denominator is then `h^(n-skip)`.
    pub fn outcomes_from(&self, sigma: &Coloring, tau: &Coloring, skip: usize) -> Vec<((Coloring, Coloring), u64)> {
        let n = self.n();
        let h = self.first.h();
        if self.kind.is_glauber() {
            let mut out = Vec::with_capacity(n * h + 1);
            if self.first.is_lazy() {
                out.push(((sigma.clone(), tau.clone()), (n * h) as u64));
            }
            for v in 0..n {
                for c in 0..h as Color {
                    let (mut s, mut t) = (sigma.clone(), tau.clone());
                    self.update(&mut s.0, &mut t.0, v, c);
                    out.push(((s, t), 1));
                }
            }
            return out;
        }
        let mut dist: HashMap<(Coloring, Coloring), u64> = HashMap::new();
        dist.insert((sigma.clone(), tau.clone()), 1);
        for v in self.first.sweep_order().skip(skip) {
            let mut next: HashMap<(Coloring, Coloring), u64> = HashMap::with_capacity(dist.len() * 2);
            for ((s, t), w) in dist {
                for c in 0..h as Color {
                    let (mut s2, mut t2) = (s.clone(), t.clone());
                    self.update(&mut s2.0, &mut t2.0, v, c);
                    *next.entry((s2, t2)).or_insert(0) += w;
                }
            }
            dist = next;
        }
        let mut out: Vec<_> = dist.into_iter().collect();
        out.sort();
        out
    }

    pub fn denominator(&self) -> Result<u64> {
        self.denominator_from(0)
    }

    pub fn denominator_from(&self, skip: usize) -> Result<u64> {
        let n = self.n() as u64;
        let h = self.first.h() as u64;
        if self.kind.is_glauber() {
            let base = n * h;
            Ok(if self.first.is_lazy() { 2 * base } else { base })
        } else {
            h.checked_pow((self.n().saturating_sub(skip)) as u32)
                .ok_or(Error::Overflow("coupled sweep denominator"))
        }
    }

    fn check_pair(&self, sigma: &Coloring, tau: &Coloring) -> Result<()> {
        for c in [sigma, tau] {
            if c.len() != self.n() {
                return Err(Error::LengthMismatch {
                    expected: self.n(),
                    got: c.len(),
                });
            }
            if c.0.iter().any(|&x| x as usize >= self.first.h()) {
                return Err(Error::InvalidColoring(format!("{c} uses a color outside 1..={}", self.first.h())));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// metrics

/// Distance used for drift computations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Metric {
    Hamming,
    /// Weighted height distance; both colorings must be proper 3-colorings.
    D2(VertexWeights),
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Hamming => "hamming",
            Metric::D2(_) => "d2",
        }
    }

    pub fn eval(&self, sigma: &Coloring, tau: &Coloring) -> Result<Exact> {
        match self {
            Metric::Hamming => Ok(Exact::from_integer(sigma.hamming(tau) as i128)),
            Metric::D2(w) => {
                let fast = ScaledWeights::new(w);
                fast.d2(&sigma.0, &tau.0)
            }
        }
    }
}

/// Weights over a common denominator, for fast repeated d2 evaluation.
#[derive(Clone, Debug)]
struct ScaledWeights {
    w: Vec<i128>,
    denom: i128,
}

impl ScaledWeights {
    fn new(weights: &VertexWeights) -> Self {
        let denom = weights
            .as_slice()
            .iter()
            .fold(1i128, |acc, x| num_integer_lcm(acc, *x.denom()));
        let w = weights
            .as_slice()
            .iter()
            .map(|x| (x * Exact::from_integer(denom)).to_integer())
            .collect();
        ScaledWeights { w, denom }
    }

    fn d2(&self, sigma: &[Color], tau: &[Color]) -> Result<Exact> {
        if sigma.len() != self.w.len() || tau.len() != self.w.len() {
            return Err(Error::LengthMismatch {
                expected: self.w.len(),
                got: sigma.len().min(tau.len()),
            });
        }
        let hs = heights(sigma)?;
        let ht = heights(tau)?;
        let diffs: Vec<i64> = hs.iter().zip(&ht).map(|(a, b)| b - a).collect();
        let lo = diffs.iter().min().copied().unwrap_or(0).div_euclid(6) * 6;
        let hi = diffs.iter().max().copied().unwrap_or(0);
        let mut best = i128::MAX;
        let mut s = lo;
        while s <= hi + 6 {
            let cost: i128 = diffs
                .iter()
                .zip(&self.w)
                .map(|(&d, &w)| w * (d - s).abs() as i128)
                .sum();
            best = best.min(cost);
            s += 6;
        }
        Ok(Exact::new(best, 2 * self.denom))
    }
}

fn num_integer_lcm(a: i128, b: i128) -> i128 {
    let g = crate::exact_analysis::gcd(a.unsigned_abs() as u64, b.unsigned_abs() as u64) as i128;
    a / g * b
}

fn heights(colors: &[Color]) -> Result<Vec<i64>> {
    let mut h = Vec::with_capacity(colors.len());
    let c0 = *colors.first().ok_or_else(|| Error::InvalidColoring("empty".into()))? as i64;
    if c0 >= 3 {
        return Err(Error::InvalidColoring("d2 needs 3-colorings".into()));
    }
    // odd and congruent to the first color mod 3
    h.push([3, 1, 5][c0 as usize]);
    for pair in colors.windows(2) {
        let (a, b) = (pair[0] as i64, pair[1] as i64);
        if b >= 3 || a == b {
            return Err(Error::InvalidColoring("d2 needs proper 3-colorings".into()));
        }
        let up = (b - a).rem_euclid(3) == 1;
        h.push(h.last().unwrap() + if up { 1 } else { -1 });
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// exact drift

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DriftReport {
    pub sigma: Coloring,
    pub tau: Coloring,
    pub kind: CouplingKind,
    pub metric: &'static str,
    /// Number of leading sweep positions skipped (0 for Glauber).
    pub start: usize,
    pub before: Exact,
    pub expected_after: Exact,
}

impl DriftReport {
    pub fn drift(&self) -> Exact {
        self.expected_after - self.before
    }
}

/// Exact expected metric after one coupled step, or after a sweep that
/// starts at sweep position `start`.
pub fn exact_drift(coupler: &Coupler, sigma: &Coloring, tau: &Coloring, metric: &Metric, start: usize) -> Result<DriftReport> {
    coupler.check_pair(sigma, tau)?;
    if coupler.kind.is_glauber() && start != 0 {
        return invalid("a Glauber step has no start vertex");
    }
    if start > coupler.n() {
        return invalid(format!("start {start} beyond the last vertex"));
    }
    let before = metric.eval(sigma, tau)?;
    let denom = coupler.denominator_from(start)?;
    let mut total = Exact::zero();
    match metric {
        Metric::D2(w) => {
            let fast = ScaledWeights::new(w);
            for ((s, t), k) in coupler.outcomes_from(sigma, tau, start) {
                total += fast.d2(&s.0, &t.0)? * Exact::from_integer(k as i128);
            }
        }
        Metric::Hamming => {
            for ((s, t), k) in coupler.outcomes_from(sigma, tau, start) {
                total += Exact::from_integer((s.hamming(&t) as u64 * k) as i128);
            }
        }
    }
    Ok(DriftReport {
        sigma: sigma.clone(),
        tau: tau.clone(),
        kind: coupler.kind,
        metric: metric.name(),
        start,
        before,
        expected_after: total / Exact::from_integer(denom as i128),
    })
}

/// Expected Hamming distance after a left-to-right q4 scan coupling from
/// vertex `start`, on all `q`-colorings (proper or not) of the path.
///
/// After vertex `j` is processed only `(σ'_j, τ'_j)` and the untouched
/// suffix matter, so the joint law is carried as a `q × q` table.
pub fn q4_scan_expected_hamming(sigma: &[Color], tau: &[Color], q: usize, start: usize) -> Result<Exact> {
    let n = sigma.len();
    if tau.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: tau.len() });
    }
    if sigma.iter().chain(tau).any(|&c| c as usize >= q) || start > n {
        return invalid("colors or start out of range");
    }
    let none = q * q;
    let mut dist = vec![0u64; q * q + 1];
    if start == 0 {
        dist[none] = 1;
    } else {
        dist[sigma[start - 1] as usize * q + tau[start - 1] as usize] = 1;
    }
    let mut expected = Exact::from_integer(sigma[..start].iter().zip(&tau[..start]).filter(|(a, b)| a != b).count() as i128);
    let mut scale: i128 = 1;
    for j in start..n {
        let right = (j + 1 < n).then(|| (sigma[j + 1], tau[j + 1]));
        let mut next = vec![0u64; q * q + 1];
        let mut disagree = 0u64;
        for (state, &count) in dist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let left = (state != none).then(|| ((state / q) as Color, (state % q) as Color));
            let reference = match (left, right) {
                (Some((a, b)), _) if a != b => Some((a, b)),
                (_, Some((a, b))) if a != b => Some((a, b)),
                _ => None,
            };
            for c in 0..q as Color {
                let c2 = reference.map_or(c, |(a, b)| transpose(c, a, b).0);
                let ok = |x: Color, l: Option<Color>, r: Option<Color>| l != Some(x) && r != Some(x);
                let s = if ok(c, left.map(|p| p.0), right.map(|p| p.0)) { c } else { sigma[j] };
                let t = if ok(c2, left.map(|p| p.1), right.map(|p| p.1)) { c2 } else { tau[j] };
                next[s as usize * q + t as usize] += count;
                if s != t {
                    disagree += count;
                }
            }
        }
        scale = scale.checked_mul(q as i128).ok_or(Error::Overflow("hamming dp"))?;
        expected += Exact::new(disagree as i128, scale);
        dist = next;
    }
    Ok(expected)
}

// ---------------------------------------------------------------------------
// drift ledger

/// One checked instance of a drift bound.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerRow {
    pub lemma: &'static str,
    pub n: usize,
    pub q: usize,
    pub pair_index: usize,
    /// 0-based vertex of the disagreement the row is about.
    pub vertex: usize,
    pub sigma: Coloring,
    pub tau: Coloring,
    /// Either the drift (`relative`) or the expected distance afterwards.
    pub value: Exact,
    pub relative: bool,
    pub bound: Exact,
}

impl LedgerRow {
    pub fn pass(&self) -> bool {
        self.value <= self.bound
    }
}

fn ex(a: i128, b: i128) -> Exact {
    Exact::new(a, b)
}

/// Pairs of proper 3-colorings differing at exactly one vertex, as
/// `(vertex, σ, τ)`.
fn single_disagreements(proper: &[Coloring], q: usize) -> Vec<(usize, Coloring, Coloring)> {
    let mut out = Vec::new();
    for s in proper {
        let n = s.len();
        for i in 0..n {
            for c in 0..q as Color {
                if c == s.0[i] || (i > 0 && s.0[i - 1] == c) || (i + 1 < n && s.0[i + 1] == c) {
                    continue;
                }
                let mut t = s.clone();
                t.0[i] = c;
                out.push((i, s.clone(), t));
            }
        }
    }
    out
}

/// Ledger rows for `q = 3` (identity couplings, d2) or `q >= 4` (q4 scan,
/// Hamming on all colorings).
pub fn lemma_ledger(n: usize, q: usize) -> Result<Vec<LedgerRow>> {
    if n < 4 {
        return invalid("the ledger needs n >= 4");
    }
    match q {
        3 => ledger_q3(n),
        4.. => ledger_hamming(n, q),
        _ => invalid("q must be at least 3"),
    }
}

fn ledger_q3(n: usize) -> Result<Vec<LedgerRow>> {
    let g = Graph::path(n)?;
    let proper = enumerate_colorings(&g, 3, true, crate::domain::DEFAULT_BUDGET)?;
    let glauber = Coupler::new(CouplingKind::IdentityGlauber, &ChainSpec::path_q(n, 3, BaseChain::Glauber)?)?;
    let scan = Coupler::new(CouplingKind::IdentityScan, &ChainSpec::path_q(n, 3, BaseChain::Scan)?)?;
    let wg = Metric::D2(VertexWeights::glauber_q3(n)?);
    let ws = Metric::D2(VertexWeights::scan_q3(n)?);
    let mut rows = Vec::new();
    let mut counts: HashMap<&'static str, usize> = HashMap::new();
    let mut push = |lemma: &'static str, vertex, s: &Coloring, t: &Coloring, value, relative, bound| {
        let slot = counts.entry(lemma).or_insert(0);
        let pair_index = *slot;
        *slot += 1;
        rows.push(LedgerRow {
            lemma,
            n,
            q: 3,
            pair_index,
            vertex,
            sigma: s.clone(),
            tau: t.clone(),
            value,
            relative,
            bound,
        });
    };
    let singles = single_disagreements(&proper, 3);
    for (i, s, t) in &singles {
        let r = exact_drift(&glauber, s, t, &wg, 0)?;
        push("L4", *i, s, t, r.drift(), true, Exact::zero());
    }
    for (i, s, t) in &singles {
        let r = exact_drift(&scan, s, t, &ws, 0)?;
        let (lemma, bound) = match *i {
            0 => ("L8", ex(1, 4)),
            1 => ("L9", ex(1, 1)),
            i if i == n - 1 => ("L11", ex(3, 4)),
            _ => ("L10", ex(1, 1)),
        };
        push(lemma, *i, s, t, r.expected_after, false, bound);
    }
    for s in &proper {
        for t in &proper {
            let Some(i) = (0..n).rev().find(|&v| s.0[v] != t.0[v]) else {
                continue;
            };
            if i + 1 >= n {
                continue;
            }
            let r = exact_drift(&scan, s, t, &ws, i + 1)?;
            push("L7", i, s, t, r.drift(), true, ex(1, 2));
        }
    }
    rows.sort_by(|a, b| lemma_order(a.lemma).cmp(&lemma_order(b.lemma)).then(a.pair_index.cmp(&b.pair_index)));
    Ok(rows)
}

fn lemma_order(id: &str) -> u32 {
    id.trim_start_matches('L').parse().unwrap_or(u32::MAX)
}

/// Pairs up to color permutation: `σ` is free on `window..n` (zero before
/// it), `τ` differs from `σ` exactly on `diff`.
fn canonical_pairs(n: usize, q: usize, window: usize, diff: &[usize]) -> Vec<(Coloring, Coloring)> {
    fn grow(
        pos: usize,
        n: usize,
        q: usize,
        used: usize,
        sigma: &mut Vec<Color>,
        diff: &[usize],
        out: &mut Vec<(Coloring, Coloring)>,
    ) {
        if pos == n {
            let mut tau = sigma.clone();
            fill_tau(0, q, used, sigma, &mut tau, diff, out);
            return;
        }
        for c in 0..(used + 1).min(q) {
            sigma.push(c as Color);
            grow(pos + 1, n, q, used.max(c + 1), sigma, diff, out);
            sigma.pop();
        }
    }
    fn fill_tau(
        k: usize,
        q: usize,
        used: usize,
        sigma: &[Color],
        tau: &mut Vec<Color>,
        diff: &[usize],
        out: &mut Vec<(Coloring, Coloring)>,
    ) {
        if k == diff.len() {
            out.push((Coloring(sigma.to_vec()), Coloring(tau.clone())));
            return;
        }
        let v = diff[k];
        for c in 0..(used + 1).min(q) {
            if c as Color == sigma[v] {
                continue;
            }
            tau[v] = c as Color;
            fill_tau(k + 1, q, used.max(c + 1), sigma, tau, diff, out);
        }
        tau[v] = sigma[v];
    }
    let mut out = Vec::new();
    let mut sigma = vec![0 as Color; window];
    grow(window, n, q, usize::from(window > 0), &mut sigma, diff, &mut out);
    out
}

fn ledger_hamming(n: usize, q: usize) -> Result<Vec<LedgerRow>> {
    let qm1 = q as i128 - 1;
    let mut rows = Vec::new();
    let mut counts: HashMap<&'static str, usize> = HashMap::new();
    let mut run = |lemma: &'static str,
                   i: usize,
                   start: usize,
                   diff: &[usize],
                   relative: bool,
                   keep: &dyn Fn(&[Color], &[Color]) -> bool,
                   bound: &dyn Fn(&[Color]) -> Exact|
     -> Result<()> {
        let window = start.saturating_sub(1);
        for (s, t) in canonical_pairs(n, q, window, diff) {
            if !keep(&s.0, &t.0) {
                continue;
            }
            let after = q4_scan_expected_hamming(&s.0, &t.0, q, start)?;
            let value = if relative {
                after - Exact::from_integer(s.hamming(&t) as i128)
            } else {
                after
            };
            let slot = counts.entry(lemma).or_insert(0);
            let pair_index = *slot;
            *slot += 1;
            rows.push(LedgerRow {
                lemma,
                n,
                q,
                pair_index,
                vertex: i,
                bound: bound(&s.0),
                sigma: s,
                tau: t,
                value,
                relative,
            });
        }
        Ok(())
    };
    let all = |_: &[Color], _: &[Color]| true;
    for i in 0..n - 1 {
        run("L13", i, i + 1, &[i], true, &all, &|_| ex(1, qm1))?;
    }
    for i in 0..n {
        let c_bound = move |s: &[Color]| {
            let mut nb: Vec<Color> = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)]
                .into_iter()
                .flatten()
                .map(|v| s[v])
                .collect();
            nb.sort();
            nb.dedup();
            ex(nb.len() as i128, qm1)
        };
        run("L14", i, i, &[i], false, &all, &c_bound)?;
    }
    for i in 1..n {
        run("L15", i, i, &[i - 1, i], false, &all, &|_| ex(1, 1) + ex(3, qm1))?;
    }
    for i in 0..n {
        run("L16", i, i.saturating_sub(1), &[i], false, &all, &|_| ex(3, qm1))?;
    }
    if q == 4 {
        for i in 0..n - 1 {
            let l17 = move |s: &[Color], t: &[Color]| {
                s[i + 1] != s[i] && s[i + 1] != t[i] && (i < 2 || s[i + 1] != s[i - 2])
            };
            run("L17", i, i.saturating_sub(1), &[i], false, &l17, &|_| ex(11, 12))?;
            let l18 = move |s: &[Color], t: &[Color]| {
                s[i + 1] == s[i] && (i < 2 || (s[i] != s[i - 2] && t[i] != s[i - 2]))
            };
            run("L18", i, i.saturating_sub(1), &[i], false, &l18, &|_| ex(11, 12))?;
            let l20 = move |s: &[Color], t: &[Color]| s[i + 1] != s[i] && s[i + 1] != t[i];
            run("L20", i, 0, &[i], false, &l20, &|_| ex(47, 48))?;
            let l21 = move |s: &[Color], _: &[Color]| s[i + 1] == s[i];
            run("L21", i, 0, &[i], false, &l21, &|_| ex(191, 192))?;
        }
        run("L19", n - 1, 0, &[n - 1], false, &all, &|_| ex(11, 16))?;
    }
    rows.sort_by(|a, b| lemma_order(a.lemma).cmp(&lemma_order(b.lemma)).then(a.pair_index.cmp(&b.pair_index)));
    Ok(rows)
}

/// Writes ledger rows as CSV.
pub fn write_ledger_csv<W: Write>(mut out: W, rows: &[LedgerRow]) -> Result<()> {
    writeln!(
        out,
        "lemma_id,n,pair_index,exact_drift_num,exact_drift_den,bound,pass,q,vertex,quantity,sigma,tau"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.lemma,
            r.n,
            r.pair_index,
            r.value.numer(),
            r.value.denom(),
            r.bound,
            r.pass(),
            r.q,
            r.vertex + 1,
            if r.relative { "drift" } else { "expected" },
            r.sigma.0.iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join(""),
            r.tau.0.iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join(""),
        )?;
    }
    Ok(())
}

/// Largest expected Hamming distance after one full q4 scan from a pair
/// differing at one vertex (all colorings, `q` colors).
pub fn q4_scan_contraction(n: usize, q: usize) -> Result<Exact> {
    max_single_hamming(n, q, |_| 0)
}

/// As [`q4_scan_contraction`] but each sweep starts just left of the
/// disagreement.
pub fn near_start_contraction(n: usize, q: usize) -> Result<Exact> {
    max_single_hamming(n, q, |i| i.saturating_sub(1))
}

fn max_single_hamming(n: usize, q: usize, start: impl Fn(usize) -> usize) -> Result<Exact> {
    if q < 4 || n < 2 {
        return invalid("needs q >= 4 and n >= 2");
    }
    let mut best = Exact::zero();
    for i in 0..n {
        let s0 = start(i);
        for (s, t) in canonical_pairs(n, q, s0.saturating_sub(1), &[i]) {
            best = best.max(q4_scan_expected_hamming(&s.0, &t.0, q, s0)?);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// super-martingale check

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupermartingaleReport {
    pub n: usize,
    pub pairs: usize,
    pub max_drift: Exact,
    pub violations: usize,
}

/// Exact one-step drift of d2 under the identity coupling from every pair
/// of proper 3-colorings, with the weights matched to the chain.
pub fn supermartingale_check(n: usize, base: BaseChain) -> Result<SupermartingaleReport> {
    let (kind, weights) = match base {
        BaseChain::Glauber => (CouplingKind::IdentityGlauber, VertexWeights::glauber_q3(n)?),
        BaseChain::Scan => (CouplingKind::IdentityScan, VertexWeights::scan_q3(n)?),
        BaseChain::ReverseScan => return invalid("weights are tuned for the left-to-right scan"),
    };
    let coupler = Coupler::new(kind, &ChainSpec::path_q(n, 3, base)?)?;
    let proper = enumerate_colorings(&Graph::path(n)?, 3, true, crate::domain::DEFAULT_BUDGET)?;
    let metric = Metric::D2(weights);
    let mut max_drift: Option<Exact> = None;
    let mut violations = 0;
    let mut pairs = 0;
    for s in &proper {
        for t in &proper {
            if s == t {
                continue;
            }
            pairs += 1;
            let d = exact_drift(&coupler, s, t, &metric, 0)?.drift();
            if d > Exact::zero() {
                violations += 1;
            }
            max_drift = Some(max_drift.map_or(d, |m| m.max(d)));
        }
    }
    Ok(SupermartingaleReport {
        n,
        pairs,
        max_drift: max_drift.unwrap_or_else(Exact::zero),
        violations,
    })
}

// ---------------------------------------------------------------------------
// variance-floor witnesses

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WitnessSetting {
    GlauberQ3,
    ScanQ3,
}

/// A single vertex/color choice that brings two 3-colorings closer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlauberWitness {
    pub vertex: usize,
    pub color: Color,
    /// Which configuration of the maximal set forced the choice (1, 2 or 3).
    pub case: u8,
    /// Verified decrease of d2.
    pub drop: Exact,
    /// Smallest vertex weight.
    pub min_weight: Exact,
}

impl GlauberWitness {
    /// Implied lower bound on the one-step conditional variance of d2.
    pub fn implied_variance(&self, n: usize) -> Exact {
        self.min_weight * self.min_weight / Exact::from_integer(3 * n as i128)
    }
}

/// The scan refinement: colors for the neighbors of `vertex` that freeze
/// them, and a color that freezes `vertex` itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanWitness {
    /// Witness from the Glauber case analysis.
    pub glauber: GlauberWitness,
    /// Vertex and second color actually used.
    pub vertex: usize,
    pub color: Color,
    /// Whether the Glauber choice failed and another one was searched.
    pub searched: bool,
    pub left: Option<Color>,
    /// `right[c]`: the color for the right neighbor when `c` is tried at
    /// the vertex.
    pub right: Option<[Color; 3]>,
    pub keep: Color,
    /// Probability of the freezing event on the neighbors.
    pub event_probability: Exact,
    /// Verified lower bound on `|Δd2|` on that event for the better of the
    /// two colors at the vertex.
    pub min_deviation: Exact,
}

impl ScanWitness {
    /// Implied lower bound on `E[(ΔD)²]`: the freezing event, the right
    /// color at the vertex (1/3), and the deviation squared.
    pub fn implied_variance(&self) -> Exact {
        self.event_probability * ex(1, 3) * self.min_deviation * self.min_deviation
    }
}

/// Color the Metropolis update at `z` lands on when `c` is tried, given
/// the neighbor colors.
fn try_color(cur: Color, left: Option<Color>, right: Option<Color>, c: Color) -> Color {
    if left == Some(c) || right == Some(c) {
        cur
    } else {
        c
    }
}

fn unused_color(colors: &[Color]) -> Color {
    (0..3).find(|c| !colors.contains(c)).expect("at most two colors around a local extremum")
}

fn around(s: &[Color], z: usize) -> Vec<Color> {
    let mut v = vec![s[z]];
    if z > 0 {
        v.push(s[z - 1]);
    }
    if z + 1 < s.len() {
        v.push(s[z + 1]);
    }
    v
}

fn check_q3_pair(sigma: &Coloring, tau: &Coloring) -> Result<()> {
    if sigma.len() != tau.len() {
        return Err(Error::LengthMismatch {
            expected: sigma.len(),
            got: tau.len(),
        });
    }
    if sigma == tau {
        return invalid("witnesses need two different colorings");
    }
    heights(&sigma.0)?;
    heights(&tau.0)?;
    Ok(())
}

/// Picks `(z, C)` by the case analysis on the set where `h − h*` is
/// maximal, then checks the d2 decrease by applying the move.
pub fn glauber_witness(sigma: &Coloring, tau: &Coloring, weights: &VertexWeights) -> Result<GlauberWitness> {
    check_q3_pair(sigma, tau)?;
    let (h0, hs0, before) = optimal_heights(sigma, tau, weights)?;
    let n = sigma.len();
    // orient so that h exceeds h* somewhere
    let flip = h0.iter().zip(&hs0).all(|(a, b)| a <= b);
    let (s, t, h, hs) = if flip { (tau, sigma, hs0, h0) } else { (sigma, tau, h0, hs0) };
    let diff: Vec<i64> = h.iter().zip(&hs).map(|(a, b)| a - b).collect();
    let m = *diff.iter().max().expect("nonempty");
    let in_r: Vec<bool> = diff.iter().map(|&d| d == m).collect();
    let nbrs = |z: usize| [z.checked_sub(1), (z + 1 < n).then_some(z + 1)].into_iter().flatten();
    let local_max = |hh: &[i64], z: usize| nbrs(z).all(|u| hh[u] < hh[z]);
    let (z, color, case) = if in_r.iter().all(|&b| b) {
        let z = (0..n).find(|&z| local_max(&h, z)).expect("a global maximum exists");
        (z, unused_color(&around(&s.0, z)), 1)
    } else if let Some(z) = (0..n).find(|&z| in_r[z] && nbrs(z).all(|u| !in_r[u])) {
        (z, unused_color(&around(&s.0, z)), 2)
    } else {
        let z = (0..n)
            .find(|&z| in_r[z] && nbrs(z).any(|u| !in_r[u]) && nbrs(z).any(|u| in_r[u]))
            .ok_or_else(|| Error::Witness(format!("no boundary vertex for {sigma} / {tau}")))?;
        let r = nbrs(z).find(|&u| in_r[u]).expect("checked");
        if h[r] < h[z] {
            (z, unused_color(&around(&s.0, z)), 3)
        } else {
            // z is a local minimum of h*: push h* up instead
            (z, unused_color(&around(&t.0, z)), 3)
        }
    };
    let apply = |c: &Coloring| {
        let mut out = c.clone();
        let left = z.checked_sub(1).map(|u| c.0[u]);
        let right = (z + 1 < n).then(|| c.0[z + 1]);
        out.0[z] = try_color(c.0[z], left, right, color);
        out
    };
    let after = crate::domain::d2(&apply(sigma), &apply(tau), weights)?;
    let drop = before - after;
    let min_weight = weights.min();
    if drop < min_weight {
        return Err(Error::Witness(format!(
            "vertex {} color {} lowers d2 by only {drop} for {sigma} / {tau}",
            z + 1,
            color + 1
        )));
    }
    Ok(GlauberWitness {
        vertex: z,
        color,
        case,
        drop,
        min_weight,
    })
}

fn smallest_common(a: &[Color], b: &[Color]) -> Option<Color> {
    (0..3).find(|c| a.contains(c) && b.contains(c))
}

/// Colors valid as the frozen choices around a vertex, given the three
/// colors `σ_{z-1..=z+1}` and `τ_{z-1..=z+1}` (interior vertex):
/// `(keep colors, right-neighbor colors for each trial color)`.
pub fn local_choices(s: [Color; 3], t: [Color; 3]) -> (Vec<Color>, [Vec<Color>; 3]) {
    let keep: Vec<Color> = (0..3).filter(|c| s.contains(c) && t.contains(c)).collect();
    let right = [0, 1, 2].map(|c: Color| {
        let sz = try_color(s[1], Some(s[0]), Some(s[2]), c);
        let tz = try_color(t[1], Some(t[0]), Some(t[2]), c);
        (0..3).filter(|x| [sz, s[2]].contains(x) && [tz, t[2]].contains(x)).collect()
    });
    (keep, right)
}

/// Scan witness: freezes the neighbors of a vertex and checks, over every
/// proposal at the remaining vertices, that one of the keep color and a
/// second color moves d2 by at least half the smallest weight.
///
/// The vertex and color of the Glauber witness are tried first. Updates
/// elsewhere in the sweep can shift the optimal height alignment so that
/// this move no longer helps; the remaining `(vertex, color)` choices are
/// then searched and the result is marked `searched`.
pub fn scan_witness(sigma: &Coloring, tau: &Coloring) -> Result<ScanWitness> {
    let n = sigma.len();
    let weights = VertexWeights::scan_q3(n)?;
    let g = glauber_witness(sigma, tau, &weights)?;
    let spec = ChainSpec::path_q(n, 3, BaseChain::Scan)?;
    let coupler = Coupler::new(CouplingKind::IdentityScan, &spec)?;
    let fast = ScaledWeights::new(&weights);
    let half = weights.min() / Exact::from_integer(2);
    let candidates = std::iter::once((g.vertex, g.color))
        .chain((0..n).flat_map(|z| (0..3).map(move |c| (z, c))));
    for (k, (z, color)) in candidates.enumerate() {
        if let Some(mut w) = scan_choice(&sigma.0, &tau.0, z, color, &coupler, &fast)? {
            if w.min_deviation >= half {
                w.glauber = g;
                w.searched = k > 0;
                return Ok(w);
            }
        }
    }
    Err(Error::Witness(format!("no freezing choice for {sigma} / {tau}")))
}

/// Evaluates the freezing construction around `z` with second color `color`;
/// `None` when some required color does not exist or a frozen vertex moves.
fn scan_choice(
    s: &[Color],
    t: &[Color],
    z: usize,
    color: Color,
    coupler: &Coupler,
    fast: &ScaledWeights,
) -> Result<Option<ScanWitness>> {
    let n = s.len();
    let lz = z.checked_sub(1);
    let rz = (z + 1 < n).then_some(z + 1);
    let left = match lz {
        Some(l) => match smallest_common(&[s[l], s[z]], &[t[l], t[z]]) {
            Some(c) => Some(c),
            None => return Ok(None),
        },
        None => None,
    };
    let Some(keep) = smallest_common(&around(s, z), &around(t, z)) else {
        return Ok(None);
    };
    if keep == color {
        return Ok(None);
    }
    let right = match rz {
        Some(r) => {
            let mut out = [0; 3];
            for c in 0..3 {
                let sz = try_color(s[z], lz.map(|u| s[u]), Some(s[r]), c);
                let tz = try_color(t[z], lz.map(|u| t[u]), Some(t[r]), c);
                match smallest_common(&[sz, s[r]], &[tz, t[r]]) {
                    Some(x) => out[c as usize] = x,
                    None => return Ok(None),
                }
            }
            Some(out)
        }
        None => None,
    };
    let before = fast.d2(s, t)?;
    let free: Vec<usize> = (0..n).filter(|&v| Some(v) != lz && v != z && Some(v) != rz).collect();
    let mut min_dev: Option<Exact> = None;
    for code in 0..3usize.pow(free.len() as u32) {
        let mut props = vec![0 as Color; n];
        let mut x = code;
        for &v in &free {
            props[v] = (x % 3) as Color;
            x /= 3;
        }
        let mut best = Exact::zero();
        for c in [keep, color] {
            props[z] = c;
            if let (Some(l), Some(lc)) = (lz, left) {
                props[l] = lc;
            }
            if let (Some(r), Some(rc)) = (rz, right) {
                props[r] = rc[c as usize];
            }
            let (mut a, mut b) = (s.to_vec(), t.to_vec());
            for v in 0..n {
                coupler.update(&mut a, &mut b, v, props[v]);
                let frozen = Some(v) == lz || Some(v) == rz || (v == z && c == keep);
                if frozen && (a[v] != s[v] || b[v] != t[v]) {
                    return Ok(None);
                }
            }
            best = best.max((fast.d2(&a, &b)? - before).abs());
        }
        min_dev = Some(min_dev.map_or(best, |m| m.min(best)));
    }
    let event_probability = ex(1, 3i128.pow(u32::from(lz.is_some()) + u32::from(rz.is_some())));
    Ok(Some(ScanWitness {
        glauber: GlauberWitness {
            vertex: z,
            color,
            case: 0,
            drop: Exact::zero(),
            min_weight: Exact::zero(),
        },
        vertex: z,
        color,
        searched: false,
        left,
        right,
        keep,
        event_probability,
        min_deviation: min_dev.expect("at least one proposal vector"),
    }))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WitnessSummary {
    pub n: usize,
    pub pairs: usize,
    /// Scan pairs that needed a searched choice.
    pub searched: usize,
    /// Smallest implied variance bound over all pairs.
    pub min_variance: Exact,
}

/// Builds and verifies a witness for every ordered pair of distinct proper
/// 3-colorings of the path.
pub fn exhaustive_witnesses(n: usize, setting: WitnessSetting) -> Result<WitnessSummary> {
    let proper = enumerate_colorings(&Graph::path(n)?, 3, true, crate::domain::DEFAULT_BUDGET)?;
    let weights = VertexWeights::glauber_q3(n)?;
    let mut min_variance: Option<Exact> = None;
    let mut pairs = 0;
    let mut searched = 0;
    for s in &proper {
        for t in &proper {
            if s == t {
                continue;
            }
            let v = match setting {
                WitnessSetting::GlauberQ3 => glauber_witness(s, t, &weights)?.implied_variance(n),
                WitnessSetting::ScanQ3 => {
                    let w = scan_witness(s, t)?;
                    searched += usize::from(w.searched);
                    w.implied_variance()
                }
            };
            pairs += 1;
            min_variance = Some(min_variance.map_or(v, |m| m.min(v)));
        }
    }
    Ok(WitnessSummary {
        n,
        pairs,
        searched,
        min_variance: min_variance.unwrap_or_else(Exact::zero),
    })
}

// ---------------------------------------------------------------------------
// coalescence times

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingStats {
    pub kind: CouplingKind,
    pub n: usize,
    pub horizon: u64,
    /// First time the copies agree, `None` if censored at the horizon.
    pub times: Vec<Option<u64>>,
    pub censored: usize,
    pub mean: f64,
    pub std_error: f64,
    pub median: Option<f64>,
    pub q10: Option<f64>,
    pub q90: Option<f64>,
    /// `Σ Ham(X_1, Y_1) / Σ Ham(X_0, Y_0)` over replicates.
    pub contraction: f64,
    /// Largest one-step change of d2 seen (3-colorings only).
    pub max_d2_step: Option<f64>,
    /// Steps where the d2 change exceeded 2 (Glauber) or `2n` (sweep).
    pub d2_step_violations: usize,
}

/// Empirical quantile with censored values treated as `+∞`.
fn quantile(sorted: &[Option<u64>], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx].map(|x| x as f64)
}

/// Runs `replicates` coupled pairs, cycling through `starts`, until they
/// agree or `horizon` steps/sweeps elapse.
pub fn coupling_time(
    coupler: &Coupler,
    starts: &[(Coloring, Coloring)],
    replicates: u64,
    horizon: u64,
    tape: &RandomTape,
) -> Result<CouplingStats> {
    if starts.is_empty() {
        return invalid("need at least one starting pair");
    }
    for (s, t) in starts {
        coupler.check_pair(s, t)?;
    }
    let n = coupler.n();
    let track_d2 = coupler.first.h() == 3
        && coupler.first.target().is_clique()
        && coupler.first.graph().is_path()
        && starts.iter().all(|(s, t)| heights(&s.0).is_ok() && heights(&t.0).is_ok());
    let weights = if coupler.kind.is_glauber() {
        VertexWeights::glauber_q3(n.max(2))?
    } else {
        VertexWeights::scan_q3(n.max(2))?
    };
    let fast = ScaledWeights::new(&weights);
    let limit = if coupler.kind.is_glauber() { 2.0 } else { 2.0 * n as f64 };
    let mut times = Vec::with_capacity(replicates as usize);
    let (mut ham0, mut ham1) = (0u64, 0u64);
    let mut max_step: Option<f64> = None;
    let mut violations = 0;
    for rep in 0..replicates {
        let (s0, t0) = &starts[(rep % starts.len() as u64) as usize];
        let (mut s, mut t) = (s0.clone(), t0.clone());
        ham0 += s.hamming(&t) as u64;
        let mut d_prev = if track_d2 { fast.d2(&s.0, &t.0)?.to_f64() } else { None };
        let mut hit = (s == t).then_some(0);
        let mut step = 0;
        while hit.is_none() && step < horizon {
            coupler.step(&mut s, &mut t, tape, rep, step);
            step += 1;
            if step == 1 {
                ham1 += s.hamming(&t) as u64;
            }
            if let Some(prev) = d_prev {
                let d = fast.d2(&s.0, &t.0)?.to_f64().unwrap_or(f64::NAN);
                let delta = (d - prev).abs();
                max_step = Some(max_step.map_or(delta, |m: f64| m.max(delta)));
                if delta > limit {
                    violations += 1;
                }
                d_prev = Some(d);
            }
            if s == t {
                hit = Some(step);
            }
        }
        times.push(hit);
    }
    let done: Vec<f64> = times.iter().flatten().map(|&x| x as f64).collect();
    let mean = if done.is_empty() { f64::NAN } else { done.iter().sum::<f64>() / done.len() as f64 };
    let std_error = if done.len() > 1 {
        let var = done.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (done.len() - 1) as f64;
        (var / done.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    let mut sorted = times.clone();
    sorted.sort_by_key(|x| x.unwrap_or(u64::MAX));
    Ok(CouplingStats {
        kind: coupler.kind,
        n,
        horizon,
        censored: times.iter().filter(|x| x.is_none()).count(),
        mean,
        std_error,
        median: quantile(&sorted, 0.5),
        q10: quantile(&sorted, 0.1),
        q90: quantile(&sorted, 0.9),
        contraction: if ham0 == 0 { 0.0 } else { ham1 as f64 / ham0 as f64 },
        max_d2_step: max_step,
        d2_step_violations: violations,
        times,
    })
}

/// A far-apart starting pair for proper colorings of a path: for q = 3 the
/// two monotone colorings (height functions going opposite ways), for
/// larger q two colorings disagreeing everywhere.
pub fn extremal_pair(spec: &ChainSpec) -> Result<(Coloring, Coloring)> {
    if !(spec.graph().is_path() && spec.target().is_clique()) {
        return invalid("extremal pairs are defined for proper colorings of a path");
    }
    let n = spec.n();
    let q = spec.h();
    if q == 3 {
        let up = (0..n).map(|i| (i % 3) as Color).collect();
        let down = (0..n).map(|i| ((3 - i % 3) % 3) as Color).collect();
        Ok((Coloring(up), Coloring(down)))
    } else {
        let a = (0..n).map(|i| (i % 2) as Color).collect();
        let b = (0..n).map(|i| (2 + i % 2) as Color).collect();
        Ok((Coloring(a), Coloring(b)))
    }
}

/// Uniform proper coloring of a path: first color uniform, each next one
/// uniform among the `q − 1` colors differing from its predecessor.
pub fn random_proper(n: usize, q: usize, tape: &RandomTape, replicate: u64) -> Result<Coloring> {
    if n == 0 || q < 2 {
        return invalid("need n >= 1 and q >= 2");
    }
    let row = tape.row(replicate, 0);
    let mut out = Vec::with_capacity(n);
    out.push(row.below(0, q as u64) as Color);
    for v in 1..n {
        let prev = out[v - 1];
        let k = row.below(v as u64, q as u64 - 1) as Color;
        out.push(if k >= prev { k + 1 } else { k });
    }
    Ok(Coloring(out))
}

/// Exact expected coalescence time from `(σ, τ)`, by solving the hitting
/// equations of the joint chain on the pairs reachable from it.
pub fn expected_coalescence(coupler: &Coupler, sigma: &Coloring, tau: &Coloring, budget: usize) -> Result<f64> {
    coupler.check_pair(sigma, tau)?;
    if sigma == tau {
        return Ok(0.0);
    }
    let denom = coupler.denominator()? as f64;
    let mut index: HashMap<(Coloring, Coloring), usize> = HashMap::new();
    let mut states = vec![(sigma.clone(), tau.clone())];
    index.insert(states[0].clone(), 0);
    let mut rows: Vec<Vec<(usize, u64)>> = Vec::new();
    let mut k = 0;
    while k < states.len() {
        let (s, t) = states[k].clone();
        let mut row = Vec::new();
        for (pair, w) in coupler.outcomes(&s, &t) {
            if pair.0 == pair.1 {
                continue;
            }
            let j = match index.get(&pair) {
                Some(&j) => j,
                None => {
                    if states.len() >= budget.min(crate::exact_analysis::DENSE_LIMIT) {
                        return Err(Error::BudgetExceeded { cap: budget.min(crate::exact_analysis::DENSE_LIMIT) });
                    }
                    index.insert(pair.clone(), states.len());
                    states.push(pair);
                    states.len() - 1
                }
            };
            row.push((j, w));
        }
        rows.push(row);
        k += 1;
    }
    let m = states.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    for (i, row) in rows.iter().enumerate() {
        for &(j, w) in row {
            a[(i, j)] -= w as f64 / denom;
        }
    }
    let b = DVector::<f64>::from_element(m, 1.0);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NotErgodic("the copies never coalesce from this pair".into()))?;
    Ok(x[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::d2;

    fn col(s: &str) -> Coloring {
        s.parse().unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CouplingKind::ALL {
            assert_eq!(k.name().parse::<CouplingKind>().unwrap(), k);
        }
        assert!("nope".parse::<CouplingKind>().is_err());
    }

    #[test]
    fn kind_model_mismatch_rejected() {
        let scan3 = ChainSpec::path_q(4, 3, BaseChain::Scan).unwrap();
        assert!(Coupler::new(CouplingKind::Q4Scan, &scan3).is_err());
        assert!(Coupler::new(CouplingKind::IdentityGlauber, &scan3).is_err());
        let scan4 = ChainSpec::path_q(4, 4, BaseChain::Scan).unwrap();
        assert!(Coupler::new(CouplingKind::Q4Scan, &scan4).is_ok());
    }

    #[test]
    fn fast_d2_matches_domain() {
        let n = 5;
        let proper = enumerate_colorings(&Graph::path(n).unwrap(), 3, true, 1000).unwrap();
        for w in [VertexWeights::glauber_q3(n).unwrap(), VertexWeights::scan_q3(n).unwrap()] {
            let fast = ScaledWeights::new(&w);
            for s in &proper {
                for t in &proper {
                    assert_eq!(fast.d2(&s.0, &t.0).unwrap(), d2(s, t, &w).unwrap());
                }
            }
        }
    }

    #[test]
    fn diagonal_stays_diagonal() {
        let tape = RandomTape::new(3);
        for kind in CouplingKind::ALL {
            let base = if kind.is_glauber() { BaseChain::Glauber } else { BaseChain::Scan };
            let spec = ChainSpec::path_q(5, 4, base).unwrap();
            let c = Coupler::new(kind, &spec).unwrap();
            let mut s = col("0,1,0,2,3");
            let mut t = s.clone();
            for step in 0..50 {
                c.step(&mut s, &mut t, &tape, 0, step);
                assert_eq!(s, t);
            }
        }
    }

    /// Each copy's one-step law must equal the uncoupled chain's.
    fn assert_marginals(c: &Coupler, s: &Coloring, t: &Coloring) {
        let joint = c.outcomes(s, t);
        let denom = c.denominator().unwrap();
        for (copy, start, spec) in [(0, s, c.first()), (1, t, c.second())] {
            let mut got: HashMap<Coloring, u64> = HashMap::new();
            for ((a, b), w) in &joint {
                *got.entry(if copy == 0 { a.clone() } else { b.clone() }).or_insert(0) += w;
            }
            let mut want: HashMap<Coloring, u64> = HashMap::new();
            let d2 = crate::dynamics::step_denominator(spec).unwrap();
            assert_eq!(d2, denom);
            for (x, w) in crate::dynamics::step_outcomes(spec, start) {
                *want.entry(x).or_insert(0) += w;
            }
            assert_eq!(got, want, "{} copy {copy} from {s} / {t}", c.kind());
        }
    }

    #[test]
    fn q4_scan_marginals_n3() {
        let spec = ChainSpec::path_q(3, 4, BaseChain::Scan).unwrap();
        let c = Coupler::new(CouplingKind::Q4Scan, &spec).unwrap();
        let all = enumerate_colorings(&Graph::path(3).unwrap(), 4, false, 1000).unwrap();
        for s in &all {
            for t in &all {
                assert_marginals(&c, s, t);
            }
        }
    }

    #[test]
    fn every_kind_has_correct_marginals() {
        for kind in CouplingKind::ALL {
            let base = if kind.is_glauber() { BaseChain::Glauber } else { BaseChain::Scan };
            for q in [3usize, 4] {
                let spec = ChainSpec::path_q(4, q, base).unwrap();
                let Ok(mut c) = Coupler::new(kind, &spec) else {
                    assert!(q == 3 && matches!(kind, CouplingKind::Q4Glauber | CouplingKind::Q4Scan));
                    continue;
                };
                if kind == CouplingKind::SwitchGlauber {
                    c = c.with_important(vec![None, Some(0), Some(1), Some(2)]).unwrap();
                }
                let clamped = c.clone().with_second(spec.clone().with_clamp(&[0, 3]).unwrap()).unwrap();
                let all = enumerate_colorings(&Graph::path(4).unwrap(), q, true, 1000).unwrap();
                for s in all.iter().step_by(3) {
                    for t in all.iter().step_by(5) {
                        assert_marginals(&c, s, t);
                        assert_marginals(&clamped, s, t);
                    }
                }
            }
        }
    }

    #[test]
    fn hamming_dp_matches_full_enumeration() {
        for (n, q) in [(4, 4), (5, 4), (4, 5)] {
            let spec = ChainSpec::path_q(n, q, BaseChain::Scan).unwrap();
            let c = Coupler::new(CouplingKind::Q4Scan, &spec).unwrap();
            let pairs = canonical_pairs(n, q, 0, &[1]).into_iter().chain(canonical_pairs(n, q, 0, &[0, 1]));
            for (s, t) in pairs.step_by(7) {
                for start in 0..n {
                    let a = q4_scan_expected_hamming(&s.0, &t.0, q, start).unwrap();
                    let b = exact_drift(&c, &s, &t, &Metric::Hamming, start).unwrap().expected_after;
                    assert_eq!(a, b, "{s} / {t} from {start}");
                }
            }
        }
    }

    #[test]
    fn glauber_weighted_drift_is_zero() {
        let n = 5;
        let spec = ChainSpec::path_q(n, 3, BaseChain::Glauber).unwrap();
        let c = Coupler::new(CouplingKind::IdentityGlauber, &spec).unwrap();
        let m = Metric::D2(VertexWeights::glauber_q3(n).unwrap());
        let r = exact_drift(&c, &col("0,1,0,1,2"), &col("0,1,2,1,2"), &m, 0).unwrap();
        assert_eq!(r.before, ex(1, 1));
        assert_eq!(r.drift(), Exact::zero());
    }

    #[test]
    fn scan_drift_at_first_vertex() {
        let n = 6;
        let spec = ChainSpec::path_q(n, 3, BaseChain::Scan).unwrap();
        let c = Coupler::new(CouplingKind::IdentityScan, &spec).unwrap();
        let m = Metric::D2(VertexWeights::scan_q3(n).unwrap());
        let r = exact_drift(&c, &col("0,1,2,0,1,2"), &col("2,1,2,0,1,2"), &m, 0).unwrap();
        assert!(r.expected_after <= ex(1, 4));
    }

    #[test]
    fn q5_drift_at_last_interior_vertex() {
        // disagreement at n-1 (1-based), scan from n: only vertex n can be
        // spoiled, with probability 1/q
        for n in [4usize, 6] {
            let s: Vec<Color> = (0..n).map(|i| (i % 2) as Color).collect();
            let mut t = s.clone();
            t[n - 2] = 4;
            let after = q4_scan_expected_hamming(&s, &t, 5, n - 1).unwrap();
            assert_eq!(after - Exact::from_integer(1), ex(1, 5));
            // brute force over the full joint sweep
            let spec = ChainSpec::path_q(n, 5, BaseChain::Scan).unwrap();
            let c = Coupler::new(CouplingKind::Q4Scan, &spec).unwrap();
            let r = exact_drift(&c, &Coloring(s), &Coloring(t), &Metric::Hamming, n - 1).unwrap();
            assert_eq!(r.drift(), ex(1, 5));
        }
    }

    #[test]
    fn ledger_n4_all_pass() {
        for q in [3, 4, 5] {
            let rows = lemma_ledger(4, q).unwrap();
            assert!(!rows.is_empty());
            for r in &rows {
                assert!(r.pass(), "{} {} / {}: {} > {}", r.lemma, r.sigma, r.tau, r.value, r.bound);
            }
        }
    }

    #[test]
    fn ledger_csv_header() {
        let rows = lemma_ledger(4, 3).unwrap();
        let mut buf = Vec::new();
        write_ledger_csv(&mut buf, &rows[..2]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lemma_id,n,pair_index,exact_drift_num,exact_drift_den,bound,pass"));
        assert!(text.lines().nth(1).unwrap().starts_with("L4,4,0,0,1,0,true"));
    }

    #[test]
    fn canonical_pairs_cover_orbits() {
        // relabel colors by first appearance in σ, then in τ's differing entries
        fn canon(s: &[Color], t: &[Color], diff: &[usize]) -> (Vec<Color>, Vec<Color>) {
            let mut map: HashMap<Color, Color> = HashMap::new();
            for &c in s.iter().chain(diff.iter().map(|&v| &t[v])) {
                let k = map.len() as Color;
                map.entry(c).or_insert(k);
            }
            (s.iter().map(|c| map[c]).collect(), t.iter().map(|c| map[c]).collect())
        }
        let (n, q) = (4, 4);
        let all = enumerate_colorings(&Graph::path(n).unwrap(), q, false, 1000).unwrap();
        for diff in [vec![1usize], vec![2, 3]] {
            let mut want = std::collections::BTreeSet::new();
            for s in &all {
                for t in &all {
                    let d: Vec<usize> = (0..n).filter(|&v| s.0[v] != t.0[v]).collect();
                    if d == diff {
                        want.insert(canon(&s.0, &t.0, &diff));
                    }
                }
            }
            let got: std::collections::BTreeSet<_> =
                canonical_pairs(n, q, 0, &diff).into_iter().map(|(s, t)| (s.0, t.0)).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn table_rows_are_valid_choices() {
        let rows: [([Color; 3], [Color; 3], Color, [Color; 3]); 5] = [
            ([0, 1, 0], [1, 2, 1], 1, [0, 1, 2]),
            ([0, 1, 0], [2, 0, 2], 0, [0, 1, 2]),
            ([0, 1, 0], [1, 0, 1], 0, [0, 0, 2]),
            ([0, 1, 0], [2, 1, 2], 1, [0, 1, 2]),
            ([0, 1, 0], [0, 2, 0], 0, [0, 0, 2]),
        ];
        for (s, t, keep, right) in rows {
            let (k, r) = local_choices(s, t);
            assert!(k.contains(&keep), "{s:?} {t:?}");
            for c in 0..3 {
                assert!(r[c].contains(&right[c]), "{s:?} {t:?} c={c}");
            }
        }
        // first row: the smallest valid choice is the listed one
        let (k, r) = local_choices([0, 1, 0], [1, 2, 1]);
        assert_eq!(k[0], 1);
        assert_eq!([r[0][0], r[1][0], r[2][0]], [0, 1, 2]);
    }

    #[test]
    fn shifted_pair_uses_first_case() {
        let s = col("0,1,2,0,1");
        let t = s.shifted(1, 3);
        let w = VertexWeights::glauber_q3(5).unwrap();
        let g = glauber_witness(&s, &t, &w).unwrap();
        assert_eq!(g.case, 1);
        assert_eq!(g.drop, w.get(g.vertex));
    }

    #[test]
    fn witnesses_n4_exhaustive() {
        let g = exhaustive_witnesses(4, WitnessSetting::GlauberQ3).unwrap();
        assert_eq!(g.min_variance, ex(1, 48));
        let s = exhaustive_witnesses(4, WitnessSetting::ScanQ3).unwrap();
        assert!(s.min_variance >= ex(1, 27) * ex(1, 64));
    }

    #[test]
    fn supermartingale_small() {
        for base in [BaseChain::Glauber, BaseChain::Scan] {
            let r = supermartingale_check(4, base).unwrap();
            assert_eq!(r.violations, 0, "{base:?} max drift {}", r.max_drift);
        }
    }

    #[test]
    fn identical_starts_coalesce_at_zero() {
        let spec = ChainSpec::path_q(5, 3, BaseChain::Glauber).unwrap();
        let c = Coupler::new(CouplingKind::IdentityGlauber, &spec).unwrap();
        let s = col("0,1,2,0,1");
        let st = coupling_time(&c, &[(s.clone(), s)], 5, 10, &RandomTape::new(1)).unwrap();
        assert!(st.times.iter().all(|t| *t == Some(0)));
    }

    #[test]
    fn glauber_coalescence_matches_exact_oracle() {
        let spec = ChainSpec::path_q(4, 3, BaseChain::Glauber).unwrap();
        let c = Coupler::new(CouplingKind::IdentityGlauber, &spec).unwrap();
        let (s, t) = extremal_pair(&spec).unwrap();
        let exact = expected_coalescence(&c, &s, &t, 10_000).unwrap();
        let st = coupling_time(&c, &[(s, t)], 4000, 1_000_000, &RandomTape::new(11)).unwrap();
        assert_eq!(st.censored, 0);
        assert!((st.mean - exact).abs() <= 3.0 * st.std_error, "mean {} exact {exact}", st.mean);
        assert_eq!(st.d2_step_violations, 0);
    }

    #[test]
    fn random_proper_is_proper() {
        let tape = RandomTape::new(5);
        for rep in 0..50 {
            let c = random_proper(9, 4, &tape, rep).unwrap();
            assert!(c.0.windows(2).all(|w| w[0] != w[1] && w[0] < 4));
        }
    }
}
