//! Exact analysis of small chains.
//!
//! Every kernel built here has entries `count / denom` with one common
//! integer denominator (`n·h` for Glauber, `h^n` for a sweep), so
//! stochasticity, stationarity and the scan/reverse-scan identity are
//! checked in exact integer arithmetic. Spectra and mixing times use `f64`.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::domain::{
    enumerate_h_colorings, Color, Coloring, Component, Graph, SignConfig, TargetGraph,
};
use crate::dynamics::{
    accepts, sign_outcomes, step_denominator, step_outcomes, BaseChain, ChainSpec, SignKind,
};
use crate::error::invalid;
use crate::{Error, Exact, Result};

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Largest state space for dense floating-point work (spectra, powers).
pub const DENSE_LIMIT: usize = 4096;

/// A transition matrix over an enumerated, sorted state list. Entry
/// `(i, j)` is `count / denom`.
#[derive(Clone, Debug)]
pub struct ChainKernel<S> {
    states: Vec<S>,
    rows: Vec<Vec<(usize, u64)>>,
    denom: u64,
}

impl<S: Clone + Ord + Hash> ChainKernel<S> {
    /// Builds a kernel from an outcome function whose weights sum to
    /// `denom` for each state. Outcomes outside `states` are an error.
    pub fn from_outcomes<F>(mut states: Vec<S>, denom: u64, outcomes: F) -> Result<Self>
    where
        F: Fn(&S) -> Vec<(S, u64)>,
    {
        states.sort();
        states.dedup();
        let index: HashMap<&S, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut rows = Vec::with_capacity(states.len());
        for s in &states {
            let mut row: HashMap<usize, u64> = HashMap::new();
            for (t, w) in outcomes(s) {
                let j = *index
                    .get(&t)
                    .ok_or_else(|| Error::InvalidParameter("transition leaves the state space".into()))?;
                *row.entry(j).or_insert(0) += w;
            }
            let mut row: Vec<_> = row.into_iter().filter(|&(_, w)| w > 0).collect();
            row.sort_unstable();
            rows.push(row);
        }
        Ok(ChainKernel { states, rows, denom })
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn denom(&self) -> u64 {
        self.denom
    }

    pub fn index_of(&self, s: &S) -> Option<usize> {
        self.states.binary_search(s).ok()
    }

    /// Nonzero entries of row `i` as `(column, count)`.
    pub fn row(&self, i: usize) -> &[(usize, u64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> Exact {
        let c = self.rows[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|p| self.rows[i][p].1)
            .unwrap_or(0);
        Exact::new(c as i128, self.denom as i128)
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.iter().map(|&(_, w)| w as u128).sum::<u128>() == self.denom as u128)
    }

    /// Column sums equal to one: the uniform distribution is stationary.
    pub fn preserves_uniform(&self) -> bool {
        let mut col = vec![0u128; self.len()];
        for r in &self.rows {
            for &(j, w) in r {
                col[j] += w as u128;
            }
        }
        col.iter().all(|&c| c == self.denom as u128)
    }

    /// Whether `P(x, y) = other(y, x)` for all pairs, exactly.
    pub fn is_transpose_of(&self, other: &ChainKernel<S>) -> bool {
        if self.states != other.states {
            return false;
        }
        let lhs: HashSet<(usize, usize, u128)> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, w)| (i, j, w as u128 * other.denom as u128)))
            .collect();
        let rhs: HashSet<(usize, usize, u128)> = other
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(j, w)| (j, i, w as u128 * self.denom as u128)))
            .collect();
        lhs == rhs
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n > DENSE_LIMIT {
            return Err(Error::BudgetExceeded { cap: DENSE_LIMIT });
        }
        let mut m = DMatrix::zeros(n, n);
        let d = self.denom as f64;
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                m[(i, j)] = w as f64 / d;
            }
        }
        Ok(m)
    }

    /// Strongly connected components of the transition graph, each sorted,
    /// ordered by smallest member.
    pub fn communicating_classes(&self) -> Vec<Vec<usize>> {
        let mut g = DiGraph::<(), ()>::with_capacity(self.len(), 0);
        let nodes: Vec<_> = (0..self.len()).map(|_| g.add_node(())).collect();
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, _) in r {
                if i != j {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
        }
        let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        classes.sort();
        classes
    }

    pub fn is_irreducible(&self) -> bool {
        self.communicating_classes().len() == 1
    }

    /// Period of an irreducible kernel.
    pub fn period(&self) -> u64 {
        let n = self.len();
        let mut level = vec![u64::MAX; n];
        level[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        let mut g = 0u64;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.rows[i] {
                if level[j] == u64::MAX {
                    level[j] = level[i] + 1;
                    queue.push_back(j);
                } else {
                    let d = (level[i] + 1).abs_diff(level[j]);
                    g = gcd(g, d);
                }
            }
        }
        g
    }

    pub fn is_ergodic(&self) -> bool {
        self.is_irreducible() && self.period() == 1
    }

    /// Writes `i j p_num p_den` lines (0-based indices, reduced fractions).
    pub fn export_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                let g = gcd(w, self.denom);
                writeln!(out, "{i} {j} {} {}", w / g, self.denom / g)?;
            }
        }
        Ok(())
    }
}

/// Kernel of `spec` on all valid colorings.
pub fn build_kernel(spec: &ChainSpec, budget: usize) -> Result<ChainKernel<Coloring>> {
    let states = enumerate_h_colorings(spec.graph(), spec.target(), Component::All, budget)?;
    build_kernel_on(spec, states)
}

/// Kernel of `spec` restricted to a closed set of states.
pub fn build_kernel_on(spec: &ChainSpec, states: Vec<Coloring>) -> Result<ChainKernel<Coloring>> {
    let denom = step_denominator(spec)?;
    ChainKernel::from_outcomes(states, denom, |s| step_outcomes(spec, s))
}

/// Exact kernel of a ± chain on all `2^(n-1)` sign vectors.
pub fn sign_kernel(kind: SignKind, n: usize) -> Result<ChainKernel<SignConfig>> {
    if n < 2 {
        return invalid("sign chains need n >= 2");
    }
    if n > 16 {
        return Err(Error::BudgetExceeded { cap: 1 << 15 });
    }
    let m = n - 1;
    let states: Vec<SignConfig> = (0..1usize << m).map(|i| SignConfig::from_index(i, m)).collect();
    let denom = match kind {
        SignKind::Glauber => 3 * n as u64,
        SignKind::Scan => 3u64.pow(n as u32),
    };
    ChainKernel::from_outcomes(states, denom, |x| sign_outcomes(kind, x))
}

fn require_uniform<S: Clone + Ord + Hash>(k: &ChainKernel<S>) -> Result<()> {
    if !k.is_row_stochastic() {
        return invalid("kernel rows do not sum to one");
    }
    if !k.preserves_uniform() {
        return invalid("uniform distribution is not stationary for this kernel");
    }
    Ok(())
}

fn worst_tv(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let u = 1.0 / n as f64;
    (0..n)
        .map(|i| 0.5 * m.row(i).iter().map(|p| (p - u).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Worst-case total variation distance to uniform after `t` steps.
pub fn tv_distance_at<S: Clone + Ord + Hash>(k: &ChainKernel<S>, t: u32) -> Result<f64> {
    require_uniform(k)?;
    let p = k.to_dense()?;
    let mut m = DMatrix::identity(k.len(), k.len());
    for _ in 0..t {
        m = &m * &p;
    }
    Ok(worst_tv(&m))
}

/// `min { t > 0 : max_x d_TV(P^t(x, ·), π) ≤ ε }` for an ergodic kernel
/// with uniform stationary distribution.
pub fn tv_mixing_time<S: Clone + Ord + Hash>(k: &ChainKernel<S>, eps: f64) -> Result<u64> {
    require_uniform(k)?;
    if !k.is_ergodic() {
        let sizes: Vec<usize> = k.communicating_classes().iter().map(Vec::len).collect();
        return Err(Error::NotErgodic(format!(
            "communicating class sizes {sizes:?}, period {}",
            if sizes.len() == 1 { k.period() } else { 0 }
        )));
    }
    if !(eps > 0.0) {
        return invalid("eps must be positive");
    }
    if eps >= 1.0 {
        return Ok(1);
    }
    // doubling: powers[j] = P^(2^j)
    let mut powers = vec![k.to_dense()?];
    if worst_tv(&powers[0]) <= eps {
        return Ok(1);
    }
    loop {
        let last = powers.last().unwrap();
        let next = last * last;
        let done = worst_tv(&next) <= eps;
        powers.push(next);
        if done {
            break;
        }
        if powers.len() > 62 {
            return invalid("mixing time search did not terminate");
        }
    }
    // d(2^(j-1)) > eps >= d(2^j); binary search on the low bits
    let j = powers.len() - 1;
    let mut lo_t: u64 = 1 << (j - 1);
    let mut lo = powers[j - 1].clone();
    for b in (0..j - 1).rev() {
        let cand = &lo * &powers[b];
        if worst_tv(&cand) > eps {
            lo = cand;
            lo_t += 1 << b;
        }
    }
    Ok(lo_t + 1)
}

/// Spectral data of the additive symmetrization `(P + P*)/2`.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    /// Eigenvalues in decreasing order.
    pub eigenvalues: Vec<f64>,
    /// Absolute gap `1 − max(β₁, |β_min|)`.
    pub gap: f64,
    /// Poincaré constant `1 − β₁`.
    pub poincare: f64,
    pub beta_min: f64,
    pub reversible: bool,
    /// Unit eigenvector of `β₁`.
    pub slowest_mode: Vec<f64>,
}

pub fn poincare_constant<S: Clone + Ord + Hash>(k: &ChainKernel<S>) -> Result<SpectralReport> {
    require_uniform(k)?;
    let p = k.to_dense()?;
    let reversible = (0..k.len()).all(|i| k.row(i).iter().all(|&(j, w)| {
        k.row(j)
            .binary_search_by_key(&i, |&(c, _)| c)
            .map(|pos| k.row(j)[pos].1 == w)
            .unwrap_or(false)
    }));
    let s = (&p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..k.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let beta1 = eigenvalues.get(1).copied().unwrap_or(eigenvalues[0]);
    let beta_min = *eigenvalues.last().unwrap();
    let slowest_mode = if k.len() > 1 {
        eig.eigenvectors.column(order[1]).iter().copied().collect()
    } else {
        vec![1.0]
    };
    Ok(SpectralReport {
        gap: 1.0 - beta1.max(beta_min.abs()),
        poincare: 1.0 - beta1,
        beta_min,
        reversible,
        eigenvalues,
        slowest_mode,
    })
}

/// `E(f, f) = ½ Σ π(x) P(x, y) (f(x) − f(y))²` under uniform π.
pub fn dirichlet_form<S: Clone + Ord + Hash>(k: &ChainKernel<S>, f: &[f64]) -> f64 {
    let pi = 1.0 / k.len() as f64;
    let d = k.denom() as f64;
    0.5 * (0..k.len())
        .map(|i| {
            k.row(i)
                .iter()
                .map(|&(j, w)| pi * (w as f64 / d) * (f[i] - f[j]).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
}

pub fn uniform_variance(f: &[f64]) -> f64 {
    let n = f.len() as f64;
    let mean = f.iter().sum::<f64>() / n;
    f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Poincaré constants of Glauber and systematic scan on the same space and
/// the comparison inequalities between them.
#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub n: usize,
    pub h: usize,
    pub max_degree: usize,
    pub states: usize,
    pub glauber_ergodic: bool,
    pub scan_ergodic: bool,
    pub lambda_glauber: f64,
    pub lambda_scan: f64,
    /// `4 h^(Δ+1) λ(scan)`, an upper bound on `λ(Glauber)`.
    pub glauber_upper: f64,
    /// `n² h λ(Glauber)`, an upper bound on `λ(scan)`.
    pub scan_upper: f64,
    pub glauber_bound_holds: bool,
    pub scan_bound_holds: bool,
    pub eps: f64,
    /// `(2 ln(1/ε) + ln(1/π(x))) / λ(scan)`.
    pub continuized_bound: f64,
    /// `n² h ln(1/(ε π(x))) / λ(scan)`.
    pub discrete_bound: f64,
    /// `2 Mix(scan, 1/e)² / (½ − 1/e)²`, an upper bound on `1/λ(scan)`.
    pub inverse_gap_bound: Option<f64>,
}

pub fn verify_comparison(g: &Graph, target: &TargetGraph, eps: f64, budget: usize) -> Result<ComparisonReport> {
    let gl = ChainSpec::new(g.clone(), target.clone(), BaseChain::Glauber)?;
    let sc = gl.clone().with_base(BaseChain::Scan);
    let kg = build_kernel(&gl, budget)?;
    let ks = build_kernel(&sc, budget)?;
    let lg = poincare_constant(&kg)?.poincare.max(0.0);
    let ls = poincare_constant(&ks)?.poincare.max(0.0);
    let (n, h, delta) = (g.n(), target.h(), g.max_degree());
    let glauber_upper = 4.0 * (h as f64).powi(delta as i32 + 1) * ls;
    let scan_upper = (n * n * h) as f64 * lg;
    let tol = 1e-10;
    let ln_states = (kg.len() as f64).ln();
    let scan_ergodic = ks.is_ergodic();
    let inverse_gap_bound = if scan_ergodic {
        let t = tv_mixing_time(&ks, (-1.0f64).exp())? as f64;
        Some(2.0 * t * t / (0.5 - (-1.0f64).exp()).powi(2))
    } else {
        None
    };
    Ok(ComparisonReport {
        n,
        h,
        max_degree: delta,
        states: kg.len(),
        glauber_ergodic: kg.is_ergodic(),
        scan_ergodic,
        lambda_glauber: lg,
        lambda_scan: ls,
        glauber_upper,
        scan_upper,
        glauber_bound_holds: lg <= glauber_upper + tol,
        scan_bound_holds: ls <= scan_upper + tol,
        eps,
        continuized_bound: (2.0 * (1.0 / eps).ln() + ln_states) / ls,
        discrete_bound: (n * n * h) as f64 * (ln_states - eps.ln()) / ls,
        inverse_gap_bound,
    })
}

/// Length `t` of the connecting walk in H between the two colorings
/// joined by a canonical path.
pub fn connector_length(n: usize, target: &TargetGraph) -> usize {
    let h = target.h();
    match (target.is_bipartite(), n % 2 == 0) {
        (false, true) => 4 * h - 1,
        (false, false) => 4 * h,
        (true, true) => 2 * h - 1,
        (true, false) => 2 * h,
    }
}

/// A walk with exactly `t` edges from `a` to `b` in H: shortest path,
/// detour around a shortest odd cycle if the parity is wrong, then
/// back-and-forth on the final edge.
pub fn connector_walk(target: &TargetGraph, a: Color, b: Color, t: usize) -> Result<Vec<Color>> {
    let direct = target
        .shortest_path(a, b)
        .ok_or_else(|| Error::InvalidParameter("target graph is not connected".into()))?;
    let mut walk = direct;
    if (walk.len() - 1) % 2 != t % 2 {
        let cycle = target
            .shortest_odd_cycle()
            .ok_or_else(|| Error::InvalidParameter("no walk of the required parity".into()))?;
        let c = cycle[0];
        let to_c = target.shortest_path(a, c).expect("connected");
        let from_c = target.shortest_path(c, b).expect("connected");
        walk = to_c;
        // going through c with or without the odd cycle: one has the right parity
        if (walk.len() + from_c.len() - 2) % 2 != t % 2 {
            walk.extend_from_slice(&cycle[1..]);
        }
        walk.extend_from_slice(&from_c[1..]);
    }
    if walk.len() == 1 {
        let u = target
            .out_neighbors(b)
            .next()
            .ok_or_else(|| Error::InvalidParameter("isolated target vertex".into()))?;
        walk.extend_from_slice(&[u, b]);
    }
    while walk.len() - 1 < t {
        let u = walk[walk.len() - 2];
        walk.extend_from_slice(&[u, b]);
    }
    if walk.len() - 1 != t {
        return invalid(format!("connector needs more than {t} edges"));
    }
    Ok(walk)
}

/// The canonical path from `sigma` to `tau`: the window of length `n`
/// slides two places at a time along `σ c_1 … c_{t−1} τ`, each slide done
/// vertex by vertex from left to right. Repeated states are dropped, so
/// consecutive entries differ at exactly one vertex.
pub fn canonical_path(sigma: &Coloring, tau: &Coloring, target: &TargetGraph, t: usize) -> Result<Vec<Coloring>> {
    let n = sigma.len();
    if (n + t) % 2 == 0 {
        return invalid("n + t must be odd");
    }
    let conn = connector_walk(target, sigma.0[n - 1], tau.0[0], t)?;
    let mut z: Vec<Color> = sigma.0.clone();
    z.extend_from_slice(&conn[1..t]);
    z.extend_from_slice(&tau.0);
    let mut cur = sigma.clone();
    let mut path = vec![cur.clone()];
    let mut i = 0;
    while i + 2 < n + t {
        for j in 0..n {
            let c = z[i + j + 2];
            if cur.0[j] != c {
                cur.0[j] = c;
                path.push(cur.clone());
            }
        }
        i += 2;
    }
    debug_assert_eq!(&cur, tau);
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct CongestionReport {
    pub n: usize,
    pub h: usize,
    pub t: usize,
    pub states: usize,
    /// Congestion `max_(α,β) Σ π(σ)π(τ)|γ| / (π(α)P(α,β))`; zero when the
    /// state space has no transitions.
    pub congestion: f64,
    pub max_paths_through_edge: usize,
    pub max_path_length: usize,
    /// `((n+t)/2)·n · n·h · max_paths_through_edge / |Ω'|`.
    pub bound_n4: f64,
    pub lambda_glauber: f64,
}

/// Canonical-path congestion of Glauber dynamics on the H-colorings of the
/// path (one compatibility class when H is bipartite).
pub fn canonical_congestion(n: usize, target: &TargetGraph, budget: usize) -> Result<CongestionReport> {
    if !target.is_connected() || target.is_directed() {
        return invalid("canonical paths need a connected undirected target graph");
    }
    let g = Graph::path(n)?;
    let component = if target.is_bipartite() { Component::Side0 } else { Component::All };
    let states = enumerate_h_colorings(&g, target, component, budget)?;
    let spec = ChainSpec::new(g.clone(), target.clone(), BaseChain::Glauber)?;
    let kernel = build_kernel_on(&spec, states)?;
    let t = connector_length(n, target);
    let len_bound = (n + t) / 2 * n;
    let mut load: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    let mut max_len = 0;
    for s in kernel.states() {
        for tau in kernel.states() {
            let path = canonical_path(s, tau, target, t)?;
            let len = path.len() - 1;
            if len > len_bound {
                return invalid(format!("canonical path of length {len} exceeds {len_bound}"));
            }
            max_len = max_len.max(len);
            let mut seen = HashSet::new();
            for w in path.windows(2) {
                let v = (0..n).find(|&v| w[0].0[v] != w[1].0[v]).expect("distinct");
                if !accepts(&g, target, &w[0].0, v, w[1].0[v]) {
                    return invalid("canonical path uses an illegal move");
                }
                let a = kernel.index_of(&w[0]).expect("closed class");
                let b = kernel.index_of(&w[1]).expect("closed class");
                if seen.insert((a, b)) {
                    let e = load.entry((a, b)).or_insert((0, 0));
                    e.0 += len;
                    e.1 += 1;
                }
            }
        }
    }
    let size = kernel.len() as f64;
    let mut congestion = 0.0f64;
    let mut max_paths = 0;
    for (&(a, b), &(total_len, count)) in &load {
        let p = kernel.entry(a, b);
        let p = *p.numer() as f64 / *p.denom() as f64;
        // π uniform: (1/π(α)P) Σ π(σ)π(τ)|γ| = Σ|γ| / (|Ω'| P)
        congestion = congestion.max(total_len as f64 / (size * p));
        max_paths = max_paths.max(count);
    }
    let lambda_glauber = if kernel.len() > 1 {
        poincare_constant(&kernel)?.poincare
    } else {
        0.0
    };
    Ok(CongestionReport {
        n,
        h: target.h(),
        t,
        states: kernel.len(),
        congestion,
        max_paths_through_edge: max_paths,
        max_path_length: max_len,
        bound_n4: len_bound as f64 * (n * target.h()) as f64 * max_paths as f64 / size,
        lambda_glauber,
    })
}

#[derive(Clone, Debug)]
pub struct ErgodicityReport {
    pub states: usize,
    pub classes: Vec<Vec<Coloring>>,
}

impl ErgodicityReport {
    pub fn singleton_classes(&self) -> usize {
        self.classes.iter().filter(|c| c.len() == 1).count()
    }
}

/// Communicating classes of the Glauber move graph on valid colorings.
pub fn ergodicity_report(g: &Graph, target: &TargetGraph, budget: usize) -> Result<ErgodicityReport> {
    let spec = ChainSpec::new(g.clone(), target.clone(), BaseChain::Glauber)?;
    let k = build_kernel(&spec, budget)?;
    let classes = k
        .communicating_classes()
        .into_iter()
        .map(|c| c.into_iter().map(|i| k.states()[i].clone()).collect())
        .collect();
    Ok(ErgodicityReport {
        states: k.len(),
        classes,
    })
}

/// Conductance bottleneck of the directed hub-and-two-cliques target graph.
#[derive(Clone, Debug)]
pub struct BottleneckReport {
    pub k: usize,
    pub n: usize,
    pub states: usize,
    pub a_size: usize,
    pub m_size: usize,
    pub pi_a: Exact,
    pub pi_m: Exact,
    /// `π(A) / (8 π(M))`.
    pub bound: Exact,
    /// No transition joins `A \ M` and its complement outside `M`.
    pub separated: bool,
    pub glauber_ergodic: bool,
}

pub fn bottleneck_report(k: usize, n: usize, budget: usize) -> Result<BottleneckReport> {
    let target = TargetGraph::directed_bottleneck(k)?;
    let spec = ChainSpec::new(Graph::path(n)?, target, BaseChain::Glauber)?;
    let kernel = build_kernel(&spec, budget)?;
    let is_b = |c: Color| c >= 1 && c as usize <= k;
    let is_c = |c: Color| c as usize > k;
    let in_a = |s: &Coloring| s.0.iter().any(|&c| is_b(c)) && !s.0.iter().any(|&c| is_c(c));
    let in_m = |s: &Coloring| s.0.iter().filter(|&&c| c != 0).count() <= 1;
    let states = kernel.states();
    let a_size = states.iter().filter(|s| in_a(s)).count();
    let m_size = states.iter().filter(|s| in_m(s)).count();
    let separated = (0..kernel.len()).all(|i| {
        kernel.row(i).iter().all(|&(j, _)| {
            let (x, y) = (&states[i], &states[j]);
            in_m(x) || in_m(y) || in_a(x) == in_a(y)
        })
    });
    let total = kernel.len() as i128;
    let pi_a = Exact::new(a_size as i128, total);
    let pi_m = Exact::new(m_size as i128, total);
    Ok(BottleneckReport {
        k,
        n,
        states: kernel.len(),
        a_size,
        m_size,
        pi_a,
        pi_m,
        bound: pi_a / (pi_m * Exact::from_integer(8)),
        separated,
        glauber_ergodic: kernel.is_ergodic(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DEFAULT_BUDGET;

    fn path_kernel(n: usize, q: usize, base: BaseChain) -> ChainKernel<Coloring> {
        build_kernel(&ChainSpec::path_q(n, q, base).unwrap(), DEFAULT_BUDGET).unwrap()
    }

    #[test]
    fn glauber_kernel_entries() {
        let k = path_kernel(4, 3, BaseChain::Glauber);
        assert_eq!(k.len(), 24);
        for i in 0..k.len() {
            for j in 0..k.len() {
                if i != j {
                    let e = k.entry(i, j);
                    assert!(e == Exact::from_integer(0) || e == Exact::new(1, 12));
                }
            }
        }
        assert!(k.is_row_stochastic());
        let k1 = path_kernel(1, 3, BaseChain::Glauber);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(k1.entry(i, j), Exact::new(1, 3));
            }
        }
    }

    #[test]
    fn scan_kernel_is_product_of_site_kernels() {
        let spec = ChainSpec::path_q(4, 3, BaseChain::Scan).unwrap();
        let k = build_kernel(&spec, DEFAULT_BUDGET).unwrap();
        assert!(k.is_row_stochastic());
        // multiply single-site kernels in exact rationals
        let states = k.states().to_vec();
        let m = states.len();
        let mut prod = vec![Exact::from_integer(0); m * m];
        for i in 0..m {
            prod[i * m + i] = Exact::from_integer(1);
        }
        for v in 0..4 {
            let mut site = vec![Exact::from_integer(0); m * m];
            for (i, s) in states.iter().enumerate() {
                for c in 0..3 {
                    let t = crate::dynamics::metropolis_update(s, v, c, &spec).unwrap();
                    let j = states.binary_search(&t).unwrap();
                    site[i * m + j] += Exact::new(1, 3);
                }
            }
            let mut next = vec![Exact::from_integer(0); m * m];
            for i in 0..m {
                for l in 0..m {
                    if prod[i * m + l] != Exact::from_integer(0) {
                        for j in 0..m {
                            next[i * m + j] += prod[i * m + l] * site[l * m + j];
                        }
                    }
                }
            }
            prod = next;
        }
        for i in 0..m {
            for j in 0..m {
                assert_eq!(prod[i * m + j], k.entry(i, j));
            }
        }
    }

    #[test]
    fn stationarity_and_reversal() {
        for n in 1..=5 {
            for q in [3, 4] {
                let f = path_kernel(n, q, BaseChain::Scan);
                let r = path_kernel(n, q, BaseChain::ReverseScan);
                assert!(f.preserves_uniform() && r.preserves_uniform());
                assert!(f.is_transpose_of(&r), "n={n} q={q}");
            }
        }
    }

    #[test]
    fn mixing_time_fixture_and_monotonicity() {
        let k = path_kernel(4, 3, BaseChain::Glauber);
        let t = tv_mixing_time(&k, 0.25).unwrap();
        // regression fixture, cross-checked by direct powering below
        assert!(tv_distance_at(&k, t as u32).unwrap() <= 0.25);
        assert!(tv_distance_at(&k, t as u32 - 1).unwrap() > 0.25);
        assert_eq!(t, MIX_FIXTURE_N4_Q3);
        assert_eq!(tv_mixing_time(&k, 1.0).unwrap(), 1);
        let mut prev = u64::MAX;
        for eps in [0.01, 0.05, 0.1, 0.25, 0.5, 0.9] {
            let t = tv_mixing_time(&k, eps).unwrap();
            assert!(t <= prev);
            prev = t;
        }
    }

    // independent numpy powering of the 24-state kernel
    const MIX_FIXTURE_N4_Q3: u64 = 36;

    #[test]
    fn non_ergodic_kernel_is_rejected() {
        let k = build_kernel(
            &ChainSpec::new(Graph::path(4).unwrap(), TargetGraph::single_edge(), BaseChain::Glauber).unwrap(),
            DEFAULT_BUDGET,
        )
        .unwrap();
        assert!(matches!(tv_mixing_time(&k, 0.25), Err(Error::NotErgodic(_))));
    }

    #[test]
    fn poincare_examples() {
        // all-rows-uniform kernel: symmetrized I - P has spectrum {0, 1, ...}
        let states: Vec<u8> = (0..5).collect();
        let k = ChainKernel::from_outcomes(states.clone(), 5, |_| states.iter().map(|&s| (s, 1)).collect()).unwrap();
        let r = poincare_constant(&k).unwrap();
        assert!((r.poincare - 1.0).abs() < 1e-12);
        assert!(r.eigenvalues[1..].iter().all(|e| e.abs() < 1e-12));

        let ks = sign_kernel(SignKind::Glauber, 4).unwrap();
        let r = poincare_constant(&ks).unwrap();
        assert!((r.poincare - 1.0 / 12.0).abs() < 1e-12);
        assert!(r.reversible);
        for n in 2..=5 {
            for base in [BaseChain::Glauber, BaseChain::Scan] {
                let r = poincare_constant(&path_kernel(n, 3, base)).unwrap();
                assert!(r.poincare >= -1e-12 && r.poincare <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn dirichlet_form_matches_spectrum() {
        for base in [BaseChain::Glauber, BaseChain::Scan] {
            let k = path_kernel(4, 3, base);
            let r = poincare_constant(&k).unwrap();
            let f = &r.slowest_mode;
            let ratio = dirichlet_form(&k, f) / uniform_variance(f);
            assert!((ratio - r.poincare).abs() < 1e-10);
            // any other function has a larger Rayleigh quotient
            let g: Vec<f64> = (0..k.len()).map(|i| ((i * 7) % 5) as f64).collect();
            assert!(dirichlet_form(&k, &g) / uniform_variance(&g) >= r.poincare - 1e-12);
        }
    }

    #[test]
    fn comparison_examples() {
        let r = verify_comparison(&Graph::path(4).unwrap(), &TargetGraph::clique(3).unwrap(), 0.25, DEFAULT_BUDGET).unwrap();
        assert!(r.glauber_bound_holds && r.scan_bound_holds);
        assert!(r.lambda_glauber > 0.0 && r.lambda_scan > 0.0);
        let ig = r.inverse_gap_bound.unwrap();
        assert!(1.0 / r.lambda_scan <= ig);
        let star = verify_comparison(&Graph::star(4).unwrap(), &TargetGraph::clique(4).unwrap(), 0.25, DEFAULT_BUDGET).unwrap();
        assert_eq!(star.max_degree, 3);
        assert!((star.glauber_upper - 4.0 * 256.0 * star.lambda_scan).abs() < 1e-9);
        assert!(star.glauber_bound_holds && star.scan_bound_holds);
        for h in [TargetGraph::clique(3).unwrap(), TargetGraph::single_edge(), TargetGraph::cycle(5).unwrap()] {
            let r = verify_comparison(&Graph::path(2).unwrap(), &h, 0.25, DEFAULT_BUDGET).unwrap();
            assert!(r.glauber_bound_holds && r.scan_bound_holds);
        }
    }

    #[test]
    fn connector_table() {
        let k3 = TargetGraph::clique(3).unwrap();
        let e = TargetGraph::single_edge();
        assert_eq!(connector_length(4, &k3), 11);
        assert_eq!(connector_length(5, &k3), 12);
        assert_eq!(connector_length(4, &e), 3);
        assert_eq!(connector_length(5, &e), 4);
        for n in 2..8 {
            assert_eq!((n + connector_length(n, &k3)) % 2, 1);
            assert_eq!((n + connector_length(n, &e)) % 2, 1);
        }
    }

    #[test]
    fn connector_walks_are_walks() {
        for h in [TargetGraph::clique(3).unwrap(), TargetGraph::cycle(5).unwrap(), TargetGraph::clique(4).unwrap()] {
            for a in 0..h.h() as Color {
                for b in 0..h.h() as Color {
                    for t in [4 * h.h() - 1, 4 * h.h()] {
                        let w = connector_walk(&h, a, b, t).unwrap();
                        assert_eq!(w.len(), t + 1);
                        assert_eq!((w[0], w[t]), (a, b));
                        assert!(w.windows(2).all(|p| h.allows(p[0], p[1])));
                    }
                }
            }
        }
    }

    #[test]
    fn congestion_small_cases() {
        let k3 = TargetGraph::clique(3).unwrap();
        let r = canonical_congestion(3, &k3, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.t, 12);
        assert!(r.congestion > 0.0 && r.congestion.is_finite());
        assert!(r.congestion <= r.bound_n4 + 1e-9);
        assert!(1.0 / r.congestion <= r.lambda_glauber + 1e-12);
        let e = canonical_congestion(4, &TargetGraph::single_edge(), DEFAULT_BUDGET).unwrap();
        assert_eq!(e.states, 1);
        assert_eq!(e.congestion, 0.0);
    }

    #[test]
    fn ergodicity_examples() {
        let d3 = TargetGraph::directed_cycle(3).unwrap();
        let r = ergodicity_report(&Graph::path(4).unwrap(), &d3, DEFAULT_BUDGET).unwrap();
        assert_eq!(r.states, 3);
        assert_eq!(r.singleton_classes(), 3);
        let r = ergodicity_report(&Graph::path(4).unwrap(), &TargetGraph::clique(3).unwrap(), DEFAULT_BUDGET).unwrap();
        assert_eq!(r.classes.len(), 1);
        assert_eq!(r.classes[0].len(), 24);
    }

    #[test]
    fn bottleneck_example() {
        let r = bottleneck_report(2, 5, DEFAULT_BUDGET).unwrap();
        assert!(r.pi_a >= Exact::new(1, 3));
        assert!(r.separated);
        assert_eq!(r.states, 2 * r.a_size + 1);
        assert_eq!(r.m_size, 2 * 2 + 1);
        assert!(r.glauber_ergodic);
    }

    #[test]
    fn triplet_export() {
        let k = path_kernel(2, 3, BaseChain::Glauber);
        let mut buf = Vec::new();
        k.export_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, "0 0 2 3");
        assert_eq!(text.lines().count(), k.states().iter().enumerate().map(|(i, _)| k.row(i).len()).sum::<usize>());
    }
}
