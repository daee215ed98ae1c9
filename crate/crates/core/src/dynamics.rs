//! Single-site Metropolis dynamics and the ± chains of 3-colorings.

use std::io::Write;

use crate::domain::{Color, Coloring, Graph, SignConfig, TargetGraph};
use crate::error::invalid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseChain {
    Glauber,
    Scan,
    ReverseScan,
}

/// A fully specified chain: graph, target graph, update order, laziness
/// and clamped vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainSpec {
    graph: Graph,
    target: TargetGraph,
    base: BaseChain,
    lazy: bool,
    clamp: Vec<bool>,
}

impl ChainSpec {
    pub fn new(graph: Graph, target: TargetGraph, base: BaseChain) -> Result<Self> {
        let n = graph.n();
        Ok(ChainSpec {
            graph,
            target,
            base,
            lazy: false,
            clamp: vec![false; n],
        })
    }

    /// Proper `q`-colorings of the path on `n` vertices.
    pub fn path_q(n: usize, q: usize, base: BaseChain) -> Result<Self> {
        ChainSpec::new(Graph::path(n)?, TargetGraph::clique(q)?, base)
    }

    pub fn lazy(mut self) -> Result<Self> {
        if self.base != BaseChain::Glauber {
            return invalid("only Glauber dynamics has a lazy version");
        }
        self.lazy = true;
        Ok(self)
    }

    /// Clamps the given 0-based vertices: every move at them is rejected.
    pub fn with_clamp(mut self, vertices: &[usize]) -> Result<Self> {
        for &v in vertices {
            if v >= self.clamp.len() {
                return invalid(format!("clamped vertex {v} out of range"));
            }
            self.clamp[v] = true;
        }
        Ok(self)
    }

    pub fn with_base(mut self, base: BaseChain) -> Self {
        self.base = base;
        if base != BaseChain::Glauber {
            self.lazy = false;
        }
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn target(&self) -> &TargetGraph {
        &self.target
    }

    pub fn base(&self) -> BaseChain {
        self.base
    }

    pub fn is_lazy(&self) -> bool {
        self.lazy
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Number of colors (vertices of H).
    pub fn h(&self) -> usize {
        self.target.h()
    }

    pub fn is_clamped(&self, v: usize) -> bool {
        self.clamp[v]
    }

    pub fn clamped(&self) -> Vec<usize> {
        (0..self.clamp.len()).filter(|&v| self.clamp[v]).collect()
    }

    /// Vertex order of one sweep (scan chains).
    pub fn sweep_order(&self) -> Box<dyn Iterator<Item = usize>> {
        let n = self.n();
        match self.base {
            BaseChain::ReverseScan => Box::new((0..n).rev()),
            _ => Box::new(0..n),
        }
    }

    pub fn describe(&self) -> String {
        let base = match self.base {
            BaseChain::Glauber if self.lazy => "lazy",
            BaseChain::Glauber => "glauber",
            BaseChain::Scan => "scan",
            BaseChain::ReverseScan => "reverse",
        };
        format!(
            "chain={base} n={} h={} clamp=[{}]",
            self.n(),
            self.h(),
            self.clamped()
                .iter()
                .map(|v| (v + 1).to_string())
                .collect::<Vec<_>>()
                .join(",")
        )
    }
}

/// Metropolis acceptance for recoloring `v` with `c`: every edge at `v`
/// must map to an edge of H. Edges are oriented from the smaller vertex to
/// the larger one, which only matters for directed H.
#[inline]
pub fn accepts(graph: &Graph, target: &TargetGraph, colors: &[Color], v: usize, c: Color) -> bool {
    graph.neighbors(v).iter().all(|&u| {
        if u < v {
            target.allows(colors[u], c)
        } else {
            target.allows(c, colors[u])
        }
    })
}

/// Applies Metropolis(v) with proposal `c` in place; returns whether the
/// color changed. Clamped vertices never change.
#[inline]
pub(crate) fn update_in_place(spec: &ChainSpec, colors: &mut [Color], v: usize, c: Color) -> bool {
    if spec.clamp[v] || colors[v] == c {
        return false;
    }
    if accepts(&spec.graph, &spec.target, colors, v, c) {
        colors[v] = c;
        true
    } else {
        false
    }
}

pub fn metropolis_update(sigma: &Coloring, v: usize, c: Color, spec: &ChainSpec) -> Result<Coloring> {
    if sigma.len() != spec.n() {
        return Err(Error::LengthMismatch {
            expected: spec.n(),
            got: sigma.len(),
        });
    }
    if v >= spec.n() {
        return invalid(format!("vertex {v} out of range"));
    }
    if c as usize >= spec.h() {
        return invalid(format!("color {c} out of range"));
    }
    let mut out = sigma.clone();
    update_in_place(spec, &mut out.0, v, c);
    Ok(out)
}

const TAPE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    // SplitMix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based randomness: every draw is a pure function of the seed and
/// its coordinates `(replicate, step, slot)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomTape {
    seed: u64,
}

/// Draws for one `(replicate, step)` row of a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeRow {
    key: u64,
}

impl RandomTape {
    pub fn new(seed: u64) -> Self {
        RandomTape { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent tape derived from this one, for auxiliary purposes.
    pub fn substream(&self, tag: u64) -> RandomTape {
        RandomTape {
            seed: mix64(self.seed ^ mix64(tag.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    #[inline]
    pub fn row(&self, replicate: u64, step: u64) -> TapeRow {
        let k = mix64(self.seed.wrapping_add(TAPE_SALT));
        let k = mix64(k ^ replicate.wrapping_mul(0xd1b5_4a32_d192_ed03));
        TapeRow {
            key: mix64(k ^ step.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7)),
        }
    }

    #[inline]
    pub fn word(&self, replicate: u64, step: u64, slot: u64) -> u64 {
        self.row(replicate, step).word(slot)
    }
}

impl TapeRow {
    #[inline]
    pub fn word(&self, slot: u64) -> u64 {
        mix64(self.key ^ mix64(slot.wrapping_add(TAPE_SALT)))
    }

    /// Uniform integer in `0..bound` (multiply-shift reduction).
    #[inline]
    pub fn below(&self, slot: u64, bound: u64) -> u64 {
        ((self.word(slot) as u128 * bound as u128) >> 64) as u64
    }

    /// Uniform real in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn unit(&self, slot: u64) -> f64 {
        (self.word(slot) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Tape slots used by one Glauber step.
pub const LAZY_SLOT: u64 = 0;
pub const VERTEX_SLOT: u64 = 1;
pub const COLOR_SLOT: u64 = 2;

/// The random choices of one Glauber step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlauberDraw {
    pub stay: bool,
    pub vertex: usize,
    pub color: Color,
}

pub fn glauber_draw(spec: &ChainSpec, tape: &RandomTape, replicate: u64, step: u64) -> GlauberDraw {
    let row = tape.row(replicate, step);
    GlauberDraw {
        stay: spec.lazy && row.below(LAZY_SLOT, 2) == 0,
        vertex: row.below(VERTEX_SLOT, spec.n() as u64) as usize,
        color: row.below(COLOR_SLOT, spec.h() as u64) as Color,
    }
}

/// Color proposed at vertex `v` during sweep `sweep`.
#[inline]
pub fn scan_draw(row: &TapeRow, v: usize, h: usize) -> Color {
    row.below(v as u64, h as u64) as Color
}

/// One Glauber step in place.
pub fn glauber_step(sigma: &mut Coloring, spec: &ChainSpec, tape: &RandomTape, replicate: u64, step: u64) {
    let d = glauber_draw(spec, tape, replicate, step);
    if !d.stay {
        update_in_place(spec, &mut sigma.0, d.vertex, d.color);
    }
}

/// One full sweep in the chain's vertex order. Clamped vertices still
/// consume their draw.
pub fn scan_sweep(sigma: &mut Coloring, spec: &ChainSpec, tape: &RandomTape, replicate: u64, sweep: u64) {
    let row = tape.row(replicate, sweep);
    let h = spec.h();
    for v in spec.sweep_order() {
        let c = scan_draw(&row, v, h);
        update_in_place(spec, &mut sigma.0, v, c);
    }
}

/// One step of a Glauber chain or one sweep of a scan chain.
pub fn advance(sigma: &mut Coloring, spec: &ChainSpec, tape: &RandomTape, replicate: u64, t: u64) {
    match spec.base {
        BaseChain::Glauber => glauber_step(sigma, spec, tape, replicate, t),
        _ => scan_sweep(sigma, spec, tape, replicate, t),
    }
}

/// All `(next state, weight)` outcomes of one step, with weights over the
/// common denominator [`step_denominator`]. Outcomes may repeat.
pub fn step_outcomes(spec: &ChainSpec, sigma: &Coloring) -> Vec<(Coloring, u64)> {
    let n = spec.n();
    let h = spec.h();
    match spec.base {
        BaseChain::Glauber => {
            let mut out = Vec::with_capacity(n * h + 1);
            if spec.lazy {
                out.push((sigma.clone(), (n * h) as u64));
            }
            for v in 0..n {
                for c in 0..h as Color {
                    let mut next = sigma.clone();
                    update_in_place(spec, &mut next.0, v, c);
                    out.push((next, 1));
                }
            }
            out
        }
        _ => {
            let mut dist: Vec<(Coloring, u64)> = vec![(sigma.clone(), 1)];
            for v in spec.sweep_order() {
                let mut next: std::collections::HashMap<Coloring, u64> = Default::default();
                for (s, w) in dist {
                    for c in 0..h as Color {
                        let mut t = s.clone();
                        update_in_place(spec, &mut t.0, v, c);
                        *next.entry(t).or_insert(0) += w;
                    }
                }
                dist = next.into_iter().collect();
            }
            dist.sort();
            dist
        }
    }
}

/// Common denominator of the weights returned by [`step_outcomes`].
pub fn step_denominator(spec: &ChainSpec) -> Result<u64> {
    let n = spec.n() as u64;
    let h = spec.h() as u64;
    match spec.base {
        BaseChain::Glauber => Ok(n * h * if spec.lazy { 2 } else { 1 }),
        _ => h
            .checked_pow(spec.n() as u32)
            .ok_or(Error::Overflow("scan kernel denominator")),
    }
}

/// The two ± chains on sign vectors of 3-colorings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SignKind {
    Glauber,
    Scan,
}

/// The sign move triggered by an accepted proposal at vertex `v` of a path
/// with `n` vertices: the end vertices flip their only coordinate, an
/// interior vertex swaps the two coordinates around it.
pub fn apply_sign_move(x: &mut SignConfig, v: usize) {
    let m = x.len();
    let n = m + 1;
    if v == 0 {
        x.0[0] = -x.0[0];
    } else if v == n - 1 {
        x.0[m - 1] = -x.0[m - 1];
    } else {
        x.0.swap(v - 1, v);
    }
}

/// One sweep of the scan sign chain with explicit move decisions.
pub fn sign_sweep_with(x: &SignConfig, decisions: &[bool]) -> Result<SignConfig> {
    if decisions.len() != x.len() + 1 {
        return Err(Error::LengthMismatch {
            expected: x.len() + 1,
            got: decisions.len(),
        });
    }
    let mut y = x.clone();
    for (v, &d) in decisions.iter().enumerate() {
        if d {
            apply_sign_move(&mut y, v);
        }
    }
    Ok(y)
}

/// One step (Glauber) or sweep (scan) of the sign chain. Each move fires
/// with probability 1/3.
pub fn sign_step(x: &mut SignConfig, kind: SignKind, tape: &RandomTape, replicate: u64, t: u64) {
    let n = x.len() + 1;
    let row = tape.row(replicate, t);
    match kind {
        SignKind::Glauber => {
            let v = row.below(VERTEX_SLOT, n as u64) as usize;
            if row.below(COLOR_SLOT, 3) == 0 {
                apply_sign_move(x, v);
            }
        }
        SignKind::Scan => {
            for v in 0..n {
                if row.below(v as u64, 3) == 0 {
                    apply_sign_move(x, v);
                }
            }
        }
    }
}

/// Exact outcomes of one sign-chain step, weights over denominator `3n`
/// (Glauber) or `3^n` (scan).
pub fn sign_outcomes(kind: SignKind, x: &SignConfig) -> Vec<(SignConfig, u64)> {
    let n = x.len() + 1;
    match kind {
        SignKind::Glauber => {
            let mut out = vec![(x.clone(), 2 * n as u64)];
            for v in 0..n {
                let mut y = x.clone();
                apply_sign_move(&mut y, v);
                out.push((y, 1));
            }
            out
        }
        SignKind::Scan => {
            let mut dist = vec![(x.clone(), 1u64)];
            for v in 0..n {
                let mut next = Vec::with_capacity(dist.len() * 2);
                for (y, w) in dist {
                    let mut moved = y.clone();
                    apply_sign_move(&mut moved, v);
                    next.push((y, 2 * w));
                    next.push((moved, w));
                }
                next.sort();
                next.dedup_by(|a, b| {
                    if a.0 == b.0 {
                        b.1 += a.1;
                        true
                    } else {
                        false
                    }
                });
                dist = next;
            }
            dist
        }
    }
}

/// Writes a trajectory: a header line, then one comma-separated state per
/// line.
pub fn write_trajectory<W: Write>(mut out: W, header: &str, states: &[Coloring]) -> Result<()> {
    writeln!(out, "# {header}")?;
    for s in states {
        writeln!(out, "{s}")?;
    }
    Ok(())
}
