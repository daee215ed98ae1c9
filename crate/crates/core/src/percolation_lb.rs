//! Lower-bound experiments for proper `q`-colorings of a path (`q >= 3`):
//! transfer-matrix counts, the segment layout with its `Z` statistic, the
//! anchored start distribution, and switch-coupled free/clamped runs.

use std::io::Write;

use num_traits::Zero;

use crate::coupling_lab::{Coupler, CouplingKind, SwitchOption};
use crate::domain::{Color, Coloring};
use crate::dynamics::{BaseChain, ChainSpec, RandomTape};
use crate::error::invalid;
use crate::exact_analysis::build_kernel;
use crate::{Error, Exact, Result};

fn check_q(q: usize) -> Result<()> {
    if q < 3 {
        return invalid("transfer counts need q >= 3");
    }
    Ok(())
}

/// The `q × q` transfer matrix `J − I`.
pub fn transfer_matrix(q: usize) -> Vec<Vec<i64>> {
    (0..q).map(|i| (0..q).map(|j| i64::from(i != j)).collect()).collect()
}

/// Number of proper colorings of an `s`-edge path whose end vertices get
/// colors `i` and `j`. Even `s` uses the closed forms, odd `s` a matrix
/// power.
pub fn transfer_count(q: usize, s: u32, i: Color, j: Color) -> Result<u128> {
    check_q(q)?;
    if i as usize >= q || j as usize >= q {
        return invalid("color out of range");
    }
    if s % 2 == 0 {
        let p = (q as u128 - 1).checked_pow(s).ok_or(Error::Overflow("transfer count"))?;
        let num = if i == j { p + q as u128 - 1 } else { p - 1 };
        Ok(num / q as u128)
    } else {
        Ok(transfer_power(q, s)?[i as usize][j as usize])
    }
}

/// `(J − I)^s` by repeated squaring in exact integers.
pub fn transfer_power(q: usize, s: u32) -> Result<Vec<Vec<u128>>> {
    check_q(q)?;
    let mul = |a: &Vec<Vec<u128>>, b: &Vec<Vec<u128>>| -> Result<Vec<Vec<u128>>> {
        let mut c = vec![vec![0u128; q]; q];
        for i in 0..q {
            for k in 0..q {
                for j in 0..q {
                    let t = a[i][k].checked_mul(b[k][j]).ok_or(Error::Overflow("transfer power"))?;
                    c[i][j] = c[i][j].checked_add(t).ok_or(Error::Overflow("transfer power"))?;
                }
            }
        }
        Ok(c)
    };
    let mut result: Vec<Vec<u128>> = (0..q).map(|i| (0..q).map(|j| u128::from(i == j)).collect()).collect();
    let mut base: Vec<Vec<u128>> = transfer_matrix(q)
        .into_iter()
        .map(|r| r.into_iter().map(|x| x as u128).collect())
        .collect();
    let mut e = s;
    while e > 0 {
        if e & 1 == 1 {
            result = mul(&result, &base)?;
        }
        e >>= 1;
        if e > 0 {
            base = mul(&base, &base)?;
        }
    }
    Ok(result)
}

/// Direct enumeration of the colorings counted by [`transfer_count`].
pub fn brute_force_count(q: usize, s: u32, i: Color, j: Color) -> u128 {
    fn go(q: usize, left: u32, cur: Color, j: Color) -> u128 {
        if left == 0 {
            return u128::from(cur == j);
        }
        (0..q as Color).filter(|&c| c != cur).map(|c| go(q, left - 1, c, j)).sum()
    }
    go(q, s, i, j)
}

/// Probability that the vertex `ℓ` edges from the left end has color `j`,
/// for uniform proper colorings of an `(ℓ + r)`-edge path with both ends
/// colored `j`.
pub fn mid_color_prob(q: usize, ell: u32, r: u32) -> Result<Exact> {
    if ell == 0 || r == 0 || ell % 2 == 1 || r % 2 == 1 {
        return invalid("ℓ and r must be positive and even");
    }
    let a = transfer_count(q, r, 0, 0)?;
    let b = transfer_count(q, ell, 0, 0)?;
    let c = transfer_count(q, ell + r, 0, 0)?;
    let num = a.checked_mul(b).ok_or(Error::Overflow("mid color probability"))?;
    let p = Exact::new(
        i128::try_from(num).map_err(|_| Error::Overflow("mid color probability"))?,
        i128::try_from(c).map_err(|_| Error::Overflow("mid color probability"))?,
    );
    debug_assert!(p >= mid_color_lower_bound(q, r));
    Ok(p)
}

/// `q⁻¹(1 + (q−1)^{−(r−1)})`.
pub fn mid_color_lower_bound(q: usize, r: u32) -> Exact {
    let d = (q as i128 - 1).pow(r - 1);
    Exact::new(d + 1, q as i128 * d)
}

/// `T_d(c, 0) / (q−1)^d`: completions over `d` edges ending at color 0.
fn completion_weight(q: usize, d: usize, c: Color) -> f64 {
    let qf = q as f64;
    let decay = (-1.0 / (qf - 1.0)).powi(d as i32);
    if c == 0 {
        (1.0 + (qf - 1.0) * decay) / qf
    } else {
        (1.0 - decay) / qf
    }
}

/// Same quantity as [`mid_color_prob`] in floating point, for long segments.
pub fn mid_color_prob_f64(q: usize, ell: usize, r: usize) -> f64 {
    completion_weight(q, r, 0) * completion_weight(q, ell, 0) / completion_weight(q, ell + r, 0)
}

/// Anchors, mid vertices and the symmetric clamp set on the path. Vertex
/// positions are 0-based here and 1-based in printed output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentLayout {
    pub n: usize,
    pub q: usize,
    pub r: usize,
    pub ell: usize,
    pub k: usize,
    pub m: usize,
    pub anchors: Vec<usize>,
    pub mids: Vec<usize>,
    pub gamma: Vec<usize>,
    pub overridden: bool,
}

/// Layout from `n` and `q`, or from an explicit `(r, ℓ)`.
pub fn segment_layout(n: usize, q: usize, overrides: Option<(usize, usize)>) -> Result<SegmentLayout> {
    check_q(q)?;
    if n < 2 {
        return invalid("n must be at least 2");
    }
    let (r, ell) = match overrides {
        Some((r, ell)) => {
            if r == 0 || ell == 0 || r % 2 == 1 || ell % 2 == 1 {
                return invalid("overridden r and ℓ must be positive and even");
            }
            (r, ell)
        }
        None => {
            let x = (n as f64).ln() / ((q - 1) as f64).ln() / 3.0;
            let r = (x.floor() as usize) / 2 * 2;
            let ell = (48.0 * (n as f64).ln()).ceil() as usize;
            let ell = ell + ell % 2;
            if r == 0 {
                return invalid(format!("r = 0 for n = {n}, q = {q}; supply (r, ℓ) overrides"));
            }
            (r, ell)
        }
    };
    let k = r + ell;
    let m = (n - 1) / k;
    if m == 0 {
        return invalid(format!("no complete segment fits: n = {n}, k = {k}"));
    }
    let anchors: Vec<usize> = (0..=m).map(|i| i * k).collect();
    let mids: Vec<usize> = (0..m).map(|i| i * k + ell).collect();
    let gamma: Vec<usize> = mids.iter().map(|x| x + k / 2).filter(|&x| x < n).collect();
    Ok(SegmentLayout {
        n,
        q,
        r,
        ell,
        k,
        m,
        anchors,
        mids,
        gamma,
        overridden: overrides.is_some(),
    })
}

fn one_based(v: &[usize]) -> String {
    v.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(",")
}

impl SegmentLayout {
    /// `q⁻¹m + (1/2)·m·n^{−1/3}`; the tail event is `Z >= threshold`.
    pub fn threshold(&self) -> f64 {
        let m = self.m as f64;
        m / self.q as f64 + 0.5 * m * (self.n as f64).powf(-1.0 / 3.0)
    }

    /// Smallest integer value of `Z` in the tail event.
    pub fn threshold_count(&self) -> usize {
        self.threshold().ceil() as usize
    }

    fn log_term(&self) -> f64 {
        (self.n as f64).ln() / ((self.q - 1) as f64).ln() / 3.0 - 2.0
    }

    /// Sweeps below which the scan chain has not mixed (large-n statement).
    pub fn scan_target(&self) -> f64 {
        0.5 * self.log_term()
    }

    /// Glauber steps below which the chain has not mixed (large-n statement).
    pub fn glauber_target(&self) -> f64 {
        let q = self.q as f64;
        q * self.n as f64 * self.log_term() / (2.0 * std::f64::consts::E * (q - 1.0))
    }

    /// Glauber horizon `q·n·r / (2e(q − 1))` for this layout's `r`.
    pub fn glauber_horizon(&self) -> u64 {
        let q = self.q as f64;
        (q * self.n as f64 * self.r as f64 / (2.0 * std::f64::consts::E * (q - 1.0))).floor() as u64
    }

    /// Segment index whose left part `(L_i, M_i]` contains `v`.
    fn left_part(&self, v: usize) -> Option<usize> {
        let i = v / self.k;
        (i < self.m && v % self.k != 0 && v <= self.mids[i]).then_some(i)
    }

    /// Reference neighbor of each vertex for the Glauber switch coupling:
    /// the left neighbor strictly between an anchor and its mid vertex, the
    /// right neighbor from the mid vertex up to the next anchor.
    pub fn important_neighbors(&self) -> Vec<Option<usize>> {
        let last = self.anchors[self.m];
        (0..self.n)
            .map(|v| {
                if v >= last || v % self.k == 0 {
                    None
                } else if v < self.mids[v / self.k] {
                    Some(v - 1)
                } else {
                    Some(v + 1)
                }
            })
            .collect()
    }

    pub fn write_header<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# n={} q={} r={} ell={} k={} m={}", self.n, self.q, self.r, self.ell, self.k, self.m)?;
        writeln!(out, "# overridden={}", self.overridden)?;
        writeln!(out, "# anchors={}", one_based(&self.anchors))?;
        writeln!(out, "# mids={}", one_based(&self.mids))?;
        writeln!(out, "# gamma={}", one_based(&self.gamma))?;
        writeln!(out, "# threshold={:.6}", self.threshold())?;
        writeln!(out, "# scan_target={:.6} glauber_target={:.6}", self.scan_target(), self.glauber_target())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ZStatistic {
    pub value: usize,
    pub indicators: Vec<bool>,
}

/// Indicators of color 0 at the mid vertices.
pub fn z_statistic(layout: &SegmentLayout, sigma: &Coloring) -> ZStatistic {
    let indicators: Vec<bool> = layout.mids.iter().map(|&v| sigma.0[v] == 0).collect();
    ZStatistic {
        value: indicators.iter().filter(|&&b| b).count(),
        indicators,
    }
}

/// Uniform sample from proper colorings with every anchor colored 0.
/// Each color is drawn with weight proportional to the number of
/// completions up to the next anchor.
pub fn sample_pi0(layout: &SegmentLayout, tape: &RandomTape, replicate: u64) -> Coloring {
    let q = layout.q;
    let row = tape.row(replicate, 0);
    let last = layout.anchors[layout.m];
    let mut colors = vec![0 as Color; layout.n];
    let mut weights = vec![0.0; q];
    for v in 1..layout.n {
        if v % layout.k == 0 && v <= last {
            continue;
        }
        let prev = colors[v - 1];
        let u = row.unit(v as u64);
        if v > last {
            let k = (u * (q - 1) as f64) as usize;
            let k = k.min(q - 2) as Color;
            colors[v] = if k >= prev { k + 1 } else { k };
            continue;
        }
        let d = layout.k - v % layout.k;
        for (c, w) in weights.iter_mut().enumerate() {
            *w = if c as Color == prev { 0.0 } else { completion_weight(q, d, c as Color) };
        }
        let total: f64 = weights.iter().sum();
        let mut x = u * total;
        let mut pick = q - 1;
        for (c, &w) in weights.iter().enumerate() {
            if w > 0.0 && x < w {
                pick = c;
                break;
            }
            x -= w;
        }
        if weights[pick] == 0.0 {
            pick = (0..q).rev().find(|&c| weights[c] > 0.0).expect("some color is allowed");
        }
        colors[v] = pick as Color;
    }
    Coloring(colors)
}

/// Law of `Z` under uniform proper colorings: the mid-vertex colors form a
/// two-state chain (color 0 or not) with `k`-step transitions.
pub fn stationary_z_law(layout: &SegmentLayout) -> Vec<f64> {
    let q = layout.q as f64;
    let stay = completion_weight(layout.q, layout.k, 0);
    let enter = completion_weight(layout.q, layout.k, 1);
    // law[z][state]: state 1 when the current mid vertex has color 0
    let mut law = vec![[0.0f64; 2]; layout.m + 1];
    law[1][1] = 1.0 / q;
    law[0][0] = 1.0 - 1.0 / q;
    for _ in 1..layout.m {
        let mut next = vec![[0.0f64; 2]; layout.m + 1];
        for z in 0..=layout.m {
            let [off, on] = law[z];
            if off + on == 0.0 {
                continue;
            }
            // from a zero-colored mid: stays zero with `stay`
            if z < layout.m {
                next[z + 1][1] += on * stay + off * enter;
            }
            next[z][0] += on * (1.0 - stay) + off * (1.0 - enter);
        }
        law = next;
    }
    law.iter().map(|[a, b]| a + b).collect()
}

/// Law of `Z` under the anchored start: independent segments.
pub fn anchored_z_law(layout: &SegmentLayout) -> Vec<f64> {
    let p = mid_color_prob_f64(layout.q, layout.ell, layout.r);
    let mut law = vec![0.0f64; layout.m + 1];
    law[0] = 1.0;
    for _ in 0..layout.m {
        for z in (0..=layout.m).rev() {
            law[z] = law[z] * (1.0 - p) + if z > 0 { law[z - 1] * p } else { 0.0 };
        }
    }
    law
}

pub fn upper_tail(law: &[f64], from: usize) -> f64 {
    law.iter().skip(from).sum::<f64>().min(1.0)
}

/// Upper-tail estimate for uniform colorings with an independent
/// Bernoulli surrogate: returns `(event level (1+ε)mp, exact probability
/// of Z >= level, exp(−ε²mp/3))` with `ε = m^{−3/8}`.
pub fn chernoff_check(layout: &SegmentLayout) -> (f64, f64, f64) {
    let q = layout.q as f64;
    let m = layout.m as f64;
    let p = (1.0 + (q - 1.0).powi(-(layout.k as i32 - 1))) / q;
    let eps = m.powf(-3.0 / 8.0);
    let level = (1.0 + eps) * m * p;
    let law = stationary_z_law(layout);
    (level, upper_tail(&law, level.ceil() as usize), (-eps * eps * m * p / 3.0).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbReport {
    pub t: u64,
    pub base: BaseChain,
    pub replicates: u64,
    pub threshold: f64,
    pub free_tail: f64,
    pub clamped_tail: f64,
    /// Fraction of replicates with some mid vertex colored differently.
    pub disagreement_rate: f64,
    pub mid_disagreements: u64,
    /// Exact `Pr(Z >= threshold)` under uniform proper colorings.
    pub stationary_tail: f64,
    /// Exact `Pr(Z >= threshold)` under the anchored start.
    pub anchored_tail: f64,
    pub tv_lower_estimate: f64,
    /// Scan only: mid disagreements reached with at least `t` interrupting
    /// vertices in their segment while `t < r`.
    pub percolation_violations: u64,
    pub within_t_below_r: bool,
    pub within_t_half_r: bool,
}

impl LbReport {
    pub fn write_csv_header<W: Write>(mut out: W) -> Result<()> {
        writeln!(out, "t,free_tail,clamped_tail,disagreement_rate,tv_lower_estimate,stationary_tail,anchored_tail,percolation_violations")?;
        Ok(())
    }

    pub fn write_csv_row<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.t,
            self.free_tail,
            self.clamped_tail,
            self.disagreement_rate,
            self.tv_lower_estimate,
            self.stationary_tail,
            self.anchored_tail,
            self.percolation_violations
        )?;
        Ok(())
    }
}

fn check_spec(spec: &ChainSpec, layout: &SegmentLayout) -> Result<()> {
    if !(spec.graph().is_path() && spec.target().is_clique()) {
        return invalid("the experiment needs proper colorings of a path");
    }
    if spec.n() != layout.n || spec.h() != layout.q {
        return invalid("layout does not match the chain");
    }
    if spec.base() == BaseChain::ReverseScan || spec.is_lazy() || !spec.clamped().is_empty() {
        return invalid("the experiment runs the plain Glauber or left-to-right scan chain");
    }
    Ok(())
}

/// Free and anchor-clamped copies from the same anchored start, run `t`
/// steps (Glauber) or sweeps (scan) under the switch coupling.
pub fn lb_experiment(spec: &ChainSpec, layout: &SegmentLayout, t: u64, replicates: u64, tape: &RandomTape) -> Result<LbReport> {
    check_spec(spec, layout)?;
    if replicates == 0 {
        return invalid("need at least one replicate");
    }
    let clamped = spec.clone().with_clamp(&layout.anchors)?;
    let coupler = match spec.base() {
        BaseChain::Glauber => Coupler::new(CouplingKind::SwitchGlauber, spec)?
            .with_important(layout.important_neighbors())?,
        _ => Coupler::new(CouplingKind::SwitchScan, spec)?,
    }
    .with_second(clamped)?;
    let scan = spec.base() == BaseChain::Scan;
    let thr = layout.threshold_count();
    let start_tape = tape.substream(1);
    let run_tape = tape.substream(2);
    let (mut free_hits, mut clamped_hits, mut disagree, mut mids_off, mut violations) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut seen = vec![false; layout.n];
    let mut interrupts = vec![0u64; layout.m];
    for rep in 0..replicates {
        let mut s = sample_pi0(layout, &start_tape, rep);
        let mut c = s.clone();
        seen.iter_mut().for_each(|x| *x = false);
        interrupts.iter_mut().for_each(|x| *x = 0);
        for step in 0..t {
            coupler.step_observed(&mut s, &mut c, &run_tape, rep, step, |e| {
                if !scan || !e.reference_disagreed || e.reference != e.vertex.checked_sub(1) {
                    return;
                }
                if let Some(i) = layout.left_part(e.vertex) {
                    if !seen[e.vertex] {
                        seen[e.vertex] = true;
                        if e.option != SwitchOption::B {
                            interrupts[i] += 1;
                        }
                    }
                }
            });
        }
        let zs = z_statistic(layout, &s);
        let zc = z_statistic(layout, &c);
        free_hits += u64::from(zs.value >= thr);
        clamped_hits += u64::from(zc.value >= thr);
        let off: Vec<usize> = (0..layout.m).filter(|&i| s.0[layout.mids[i]] != c.0[layout.mids[i]]).collect();
        mids_off += off.len() as u64;
        disagree += u64::from(!off.is_empty());
        if scan && (t as usize) < layout.r {
            violations += off.iter().filter(|&&i| interrupts[i] >= t).count() as u64;
        }
    }
    let reps = replicates as f64;
    let free_tail = free_hits as f64 / reps;
    let disagreement_rate = disagree as f64 / reps;
    let stationary_tail = upper_tail(&stationary_z_law(layout), thr);
    Ok(LbReport {
        t,
        base: spec.base(),
        replicates,
        threshold: layout.threshold(),
        free_tail,
        clamped_tail: clamped_hits as f64 / reps,
        disagreement_rate,
        mid_disagreements: mids_off,
        stationary_tail,
        anchored_tail: upper_tail(&anchored_z_law(layout), thr),
        tv_lower_estimate: (free_tail - disagreement_rate - stationary_tail).max(0.0),
        percolation_violations: violations,
        within_t_below_r: (t as usize) < layout.r,
        within_t_half_r: 2 * t as usize <= layout.r,
    })
}

/// Exact `Pr(Z >= threshold)` after `t` steps of the free and of the
/// anchor-clamped chain from the anchored start (small `n` only).
pub fn exact_tails(spec: &ChainSpec, layout: &SegmentLayout, t: u64, budget: usize) -> Result<(f64, f64)> {
    check_spec(spec, layout)?;
    let thr = layout.threshold_count();
    let mut tails = [0.0; 2];
    for (slot, chain) in [spec.clone(), spec.clone().with_clamp(&layout.anchors)?].into_iter().enumerate() {
        let kernel = build_kernel(&chain, budget)?;
        let states = kernel.states();
        let anchored: Vec<bool> = states.iter().map(|s| layout.anchors.iter().all(|&a| s.0[a] == 0)).collect();
        let count = anchored.iter().filter(|&&b| b).count() as f64;
        let mut dist: Vec<f64> = anchored.iter().map(|&b| if b { 1.0 / count } else { 0.0 }).collect();
        let denom = kernel.denom() as f64;
        for _ in 0..t {
            let mut next = vec![0.0; dist.len()];
            for (i, &p) in dist.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for &(j, w) in kernel.row(i) {
                    next[j] += p * w as f64 / denom;
                }
            }
            dist = next;
        }
        tails[slot] = states
            .iter()
            .zip(&dist)
            .filter(|(s, _)| z_statistic(layout, s).value >= thr)
            .map(|(_, p)| p)
            .sum();
    }
    Ok((tails[0], tails[1]))
}

/// Exact stationary tail by enumerating all proper colorings (small `n`).
pub fn stationary_tail_by_enumeration(layout: &SegmentLayout, budget: usize) -> Result<f64> {
    let g = crate::domain::Graph::path(layout.n)?;
    let all = crate::domain::enumerate_colorings(&g, layout.q, true, budget)?;
    let thr = layout.threshold_count();
    let hits = all.iter().filter(|s| z_statistic(layout, s).value >= thr).count();
    Ok(hits as f64 / all.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceReport {
    pub m: usize,
    pub t: u64,
    pub replicates: u64,
    pub gamma_clamped: bool,
    pub max_abs_cov: f64,
    /// Largest `cov_ij − z·se_ij` over pairs; compare with `1/m`.
    pub max_excess: f64,
    /// Largest `|cov_ij| / se_ij`.
    pub max_abs_z: f64,
    /// Multiplier applied to each standard error (at least 3, widened for
    /// the number of pairs).
    pub z: f64,
    pub bound: f64,
    pub var_z: f64,
    pub var_z_se: f64,
    pub cov_ok: bool,
    pub var_ok: bool,
}

/// Sample covariances of the mid-vertex indicators after `t` Glauber steps
/// (or sweeps) from the anchored start; optionally with `Γ` clamped.
pub fn covariance_probe(
    layout: &SegmentLayout,
    spec: &ChainSpec,
    t: u64,
    replicates: u64,
    tape: &RandomTape,
    clamp_gamma: bool,
) -> Result<CovarianceReport> {
    check_spec(spec, layout)?;
    if replicates < 2 {
        return invalid("need at least two replicates");
    }
    let chain = if clamp_gamma { spec.clone().with_clamp(&layout.gamma)? } else { spec.clone() };
    let m = layout.m;
    let start_tape = tape.substream(1);
    let run_tape = tape.substream(3);
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(replicates as usize);
    for rep in 0..replicates {
        let mut s = sample_pi0(layout, &start_tape, rep);
        for step in 0..t {
            crate::dynamics::advance(&mut s, &chain, &run_tape, rep, step);
        }
        samples.push(z_statistic(layout, &s).indicators.iter().map(|&b| f64::from(u8::from(b))).collect());
    }
    let r = replicates as f64;
    let mean: Vec<f64> = (0..m).map(|i| samples.iter().map(|x| x[i]).sum::<f64>() / r).collect();
    let pairs = (m * (m - 1) / 2).max(1) as f64;
    let z = (2.0 * (2.0 * pairs / 0.01).ln()).sqrt().max(3.0);
    let bound = 1.0 / m as f64;
    let (mut max_abs_cov, mut max_excess, mut max_abs_z) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for i in 0..m {
        for j in i + 1..m {
            let prods: Vec<f64> = samples.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).collect();
            let cov = prods.iter().sum::<f64>() / (r - 1.0);
            let var = prods.iter().map(|p| (p - cov).powi(2)).sum::<f64>() / (r - 1.0);
            let se = (var / r).sqrt().max(1e-12);
            max_abs_cov = max_abs_cov.max(cov.abs());
            max_excess = max_excess.max(cov - z * se);
            max_abs_z = max_abs_z.max(cov.abs() / se);
        }
    }
    let zs: Vec<f64> = samples.iter().map(|x| x.iter().sum()).collect();
    let zm = zs.iter().sum::<f64>() / r;
    let var_z = zs.iter().map(|x| (x - zm).powi(2)).sum::<f64>() / (r - 1.0);
    let m4 = zs.iter().map(|x| (x - zm).powi(4)).sum::<f64>() / r;
    let var_z_se = ((m4 - var_z * var_z).max(0.0) / r).sqrt();
    Ok(CovarianceReport {
        m,
        t,
        replicates,
        gamma_clamped: clamp_gamma,
        max_abs_cov,
        max_excess: if m > 1 { max_excess } else { 0.0 },
        max_abs_z,
        z,
        bound,
        var_z,
        var_z_se,
        cov_ok: m < 2 || max_excess <= bound,
        var_ok: var_z - 3.0 * var_z_se <= 2.0 * m as f64,
    })
}

/// Whether all clamped-scan transitions keep the anchored set and preserve
/// its uniform distribution (small `n`).
pub fn clamped_preserves_anchored(spec: &ChainSpec, layout: &SegmentLayout, budget: usize) -> Result<bool> {
    check_spec(spec, layout)?;
    let clamped = spec.clone().with_clamp(&layout.anchors)?;
    let g = crate::domain::Graph::path(layout.n)?;
    let states: Vec<Coloring> = crate::domain::enumerate_colorings(&g, layout.q, true, budget)?
        .into_iter()
        .filter(|s| layout.anchors.iter().all(|&a| s.0[a] == 0))
        .collect();
    let kernel = crate::exact_analysis::build_kernel_on(&clamped, states)?;
    Ok(kernel.is_row_stochastic() && kernel.preserves_uniform())
}

/// Exact `Pr(Z >= threshold)` under a law over `0..=m`.
pub fn tail_exact(law: &[Exact], from: usize) -> Exact {
    law.iter().skip(from).fold(Exact::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_match_enumeration() {
        for q in 3..=6usize {
            for s in 0..=8u32 {
                for (i, j) in [(0, 0), (0, 1), (2, 1)] {
                    assert_eq!(transfer_count(q, s, i, j).unwrap(), brute_force_count(q, s, i, j), "q={q} s={s}");
                    assert_eq!(transfer_power(q, s).unwrap()[i as usize][j as usize], brute_force_count(q, s, i, j));
                }
            }
        }
        assert_eq!(transfer_count(4, 2, 0, 1).unwrap(), 2);
        assert_eq!(transfer_count(3, 2, 1, 1).unwrap(), 2);
        assert_eq!(transfer_count(5, 0, 1, 1).unwrap(), 1);
        assert_eq!(transfer_count(5, 0, 1, 2).unwrap(), 0);
    }

    #[test]
    fn eigenvectors_of_transfer_matrix() {
        for q in 3..=6usize {
            let a = transfer_matrix(q);
            let ones = vec![1i64; q];
            let av: Vec<i64> = a.iter().map(|r| r.iter().zip(&ones).map(|(x, y)| x * y).sum()).collect();
            assert!(av.iter().all(|&x| x == q as i64 - 1));
            for j in 0..q {
                let v: Vec<i64> = (0..q).map(|i| if i == j { q as i64 - 1 } else { -1 }).collect();
                let av: Vec<i64> = a.iter().map(|r| r.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
                assert_eq!(av, v.iter().map(|x| -x).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn mid_color_examples() {
        assert_eq!(mid_color_prob(4, 2, 2).unwrap(), Exact::new(3, 7));
        assert_eq!(mid_color_prob(3, 2, 2).unwrap(), Exact::new(2, 3));
        assert!(mid_color_prob(4, 3, 2).is_err());
        assert!((mid_color_prob_f64(4, 2, 2) - 3.0 / 7.0).abs() < 1e-12);
        for q in 3..=6 {
            for ell in [2, 4, 6, 8] {
                for r in [2, 4, 6, 8] {
                    assert!(mid_color_prob(q, ell, r).unwrap() >= mid_color_lower_bound(q, r));
                }
            }
        }
    }

    #[test]
    fn mid_color_by_enumeration() {
        // 5-vertex path, ends colored 0, q = 4: count middle-vertex color 0
        let (q, k, ell) = (4usize, 4u32, 2usize);
        let mut hits = 0;
        let mut total = 0;
        for code in 0..q.pow(k - 1) {
            let mut c = vec![0 as Color];
            let mut x = code;
            for _ in 0..k - 1 {
                c.push((x % q) as Color);
                x /= q;
            }
            c.push(0);
            if c.windows(2).all(|w| w[0] != w[1]) {
                total += 1;
                hits += usize::from(c[ell] == 0);
            }
        }
        assert_eq!(Exact::new(hits as i128, total as i128), Exact::new(3, 7));
    }

    #[test]
    fn layout_examples() {
        let l = segment_layout(25, 4, Some((2, 4))).unwrap();
        assert_eq!(l.m, 4);
        assert_eq!(one_based(&l.anchors), "1,7,13,19,25");
        assert_eq!(one_based(&l.mids), "5,11,17,23");
        assert_eq!(one_based(&l.gamma), "8,14,20");
        assert_eq!(segment_layout(1_000_000_000, 4, None).unwrap().r, 6);
        assert!(segment_layout(100, 4, None).is_err());
        assert!(segment_layout(5, 4, Some((2, 4))).is_err());
    }

    #[test]
    fn important_neighbors_point_towards_anchors() {
        let l = segment_layout(14, 4, Some((2, 4))).unwrap();
        let imp = l.important_neighbors();
        // anchors 1, 7, 13; mids 5, 11 (1-based)
        assert_eq!(imp[0], None);
        assert_eq!(imp[1], Some(0));
        assert_eq!(imp[3], Some(2));
        assert_eq!(imp[4], Some(5));
        assert_eq!(imp[5], Some(6));
        assert_eq!(imp[6], None);
        assert_eq!(imp[12], None);
        assert_eq!(imp[13], None);
    }

    #[test]
    fn anchored_samples_are_valid() {
        let l = segment_layout(40, 4, Some((2, 4))).unwrap();
        let tape = RandomTape::new(9);
        for rep in 0..200 {
            let s = sample_pi0(&l, &tape, rep);
            assert!(l.anchors.iter().all(|&a| s.0[a] == 0));
            assert!(s.0.windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn anchored_sampler_is_uniform() {
        let l = segment_layout(9, 3, Some((2, 2))).unwrap();
        let g = crate::domain::Graph::path(9).unwrap();
        let states: Vec<Coloring> = crate::domain::enumerate_colorings(&g, 3, true, 10_000)
            .unwrap()
            .into_iter()
            .filter(|s| l.anchors.iter().all(|&a| s.0[a] == 0))
            .collect();
        let reps = 40_000u64;
        let tape = RandomTape::new(17);
        let mut counts = std::collections::HashMap::new();
        for rep in 0..reps {
            *counts.entry(sample_pi0(&l, &tape, rep)).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), states.len());
        let e = reps as f64 / states.len() as f64;
        let chi2: f64 = states.iter().map(|s| (counts[s] as f64 - e).powi(2) / e).sum();
        let df = states.len() as f64 - 1.0;
        assert!(chi2 < df + 5.0 * (2.0 * df).sqrt(), "chi2={chi2} df={df}");
    }

    #[test]
    fn mid_frequency_matches_closed_form() {
        let l = segment_layout(25, 4, Some((2, 4))).unwrap();
        let tape = RandomTape::new(23);
        let reps = 100_000u64;
        let hits: usize = (0..reps).map(|rep| z_statistic(&l, &sample_pi0(&l, &tape, rep)).value).sum();
        let trials = (reps as usize * l.m) as f64;
        let p = mid_color_prob_f64(4, 4, 2);
        let se = (p * (1.0 - p) / trials).sqrt();
        assert!((hits as f64 / trials - p).abs() < 3.0 * se);
    }

    #[test]
    fn stationary_law_matches_enumeration() {
        for (n, q, r, ell) in [(9usize, 3usize, 2usize, 2usize), (13, 3, 2, 4), (9, 4, 2, 2)] {
            let l = segment_layout(n, q, Some((r, ell))).unwrap();
            let law = stationary_z_law(&l);
            assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let by_count = stationary_tail_by_enumeration(&l, 1_000_000).unwrap();
            assert!((upper_tail(&law, l.threshold_count()) - by_count).abs() < 1e-12, "n={n} q={q}");
        }
    }

    #[test]
    fn first_step_experiment_is_trivial_at_zero() {
        let l = segment_layout(61, 4, Some((2, 4))).unwrap();
        let spec = ChainSpec::path_q(61, 4, BaseChain::Scan).unwrap();
        let r = lb_experiment(&spec, &l, 0, 100, &RandomTape::new(2)).unwrap();
        assert_eq!(r.free_tail, r.clamped_tail);
        assert_eq!(r.mid_disagreements, 0);
    }

    #[test]
    fn clamped_scan_keeps_anchored_uniform() {
        let l = segment_layout(9, 3, Some((2, 2))).unwrap();
        for base in [BaseChain::Scan, BaseChain::Glauber] {
            let spec = ChainSpec::path_q(9, 3, base).unwrap();
            assert!(clamped_preserves_anchored(&spec, &l, 100_000).unwrap());
        }
    }

    #[test]
    fn clamped_exact_tail_is_anchored_tail() {
        let l = segment_layout(9, 3, Some((2, 2))).unwrap();
        let spec = ChainSpec::path_q(9, 3, BaseChain::Scan).unwrap();
        let (_, clamped) = exact_tails(&spec, &l, 2, 1_000_000).unwrap();
        let anchored = upper_tail(&anchored_z_law(&l), l.threshold_count());
        assert!((clamped - anchored).abs() < 1e-12);
    }

    #[test]
    fn scan_percolation_instrumentation_holds() {
        let l = segment_layout(300, 4, Some((4, 4))).unwrap();
        let spec = ChainSpec::path_q(300, 4, BaseChain::Scan).unwrap();
        for t in 1..4 {
            let r = lb_experiment(&spec, &l, t, 300, &RandomTape::new(4)).unwrap();
            assert_eq!(r.percolation_violations, 0, "t={t}");
            assert!(r.mid_disagreements > 0 || t == 1);
        }
    }
}
