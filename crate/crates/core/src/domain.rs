//! Graphs, target graphs, colorings and the metrics built on them.
//!
//! A coloring of a path with 3 colors is encoded two other ways: as a sign
//! vector (the successive color differences mod 3) and as a height function
//! (a lattice path whose residues mod 3 are the colors).

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use num_traits::Zero;

use crate::error::invalid;
use crate::{Error, Exact, Result};

pub type Color = u8;

/// Default cap on enumerated state spaces.
pub const DEFAULT_BUDGET: usize = 2_000_000;

/// Undirected simple graph on vertices `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
    path: bool,
}

impl Graph {
    pub fn path(n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("path needs at least one vertex");
        }
        let adj = (0..n)
            .map(|v| {
                let mut nb = Vec::with_capacity(2);
                if v > 0 {
                    nb.push(v - 1);
                }
                if v + 1 < n {
                    nb.push(v + 1);
                }
                nb
            })
            .collect();
        Ok(Graph { adj, path: true })
    }

    /// Star with vertex 0 as the center and `n - 1` leaves.
    pub fn star(n: usize) -> Result<Self> {
        if n < 2 {
            return invalid("star needs at least two vertices");
        }
        let edges: Vec<_> = (1..n).map(|v| (0, v)).collect();
        Graph::from_edges(n, &edges)
    }

    /// Builds a graph from 0-based edges. Duplicate edges are merged.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return invalid("graph needs at least one vertex");
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return invalid(format!("edge ({u},{v}) out of range for n={n}"));
            }
            if u == v {
                return invalid(format!("self-loop at vertex {u}"));
            }
            if !adj[u].contains(&v) {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for nb in &mut adj {
            nb.sort_unstable();
        }
        let path = (0..n).all(|v| {
            let mut want = Vec::new();
            if v > 0 {
                want.push(v - 1);
            }
            if v + 1 < n {
                want.push(v + 1);
            }
            adj[v] == want
        });
        Ok(Graph { adj, path })
    }

    /// Parses an edge list with one `u v` pair (1-based) per line.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut n = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<_> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&x| x >= 1)
                    .ok_or_else(|| Error::Parse {
                        line: lineno + 1,
                        msg: format!("bad vertex label {s:?}"),
                    })
            };
            match parts.as_slice() {
                [a, b] => {
                    let (u, v) = (parse(a)?, parse(b)?);
                    n = n.max(u).max(v);
                    edges.push((u - 1, v - 1));
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno + 1,
                        msg: "expected two vertex labels".into(),
                    })
                }
            }
        }
        Graph::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn is_path(&self) -> bool {
        self.path
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, nb)| nb.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }
}

/// Which bipartition class the first vertex's color must lie in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    All,
    Side0,
    Side1,
}

/// The target graph H of an H-coloring. Proper q-colorings use the
/// complete graph K_q.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetGraph {
    h: usize,
    adj: Vec<bool>,
    directed: bool,
    sides: Option<Vec<u8>>,
    connected: bool,
}

impl TargetGraph {
    /// Builds H from an adjacency matrix. The graph is directed iff the
    /// matrix is not symmetric.
    pub fn from_matrix(rows: Vec<Vec<bool>>) -> Result<Self> {
        let h = rows.len();
        if h == 0 || h > Color::MAX as usize + 1 {
            return invalid(format!("target graph size {h} unsupported"));
        }
        if rows.iter().any(|r| r.len() != h) {
            return invalid("adjacency matrix is not square");
        }
        let adj: Vec<bool> = rows.into_iter().flatten().collect();
        let directed = (0..h).any(|a| (0..h).any(|b| adj[a * h + b] != adj[b * h + a]));
        let mut t = TargetGraph {
            h,
            adj,
            directed,
            sides: None,
            connected: false,
        };
        t.connected = t.compute_connected();
        if !directed {
            t.sides = t.compute_sides();
        }
        Ok(t)
    }

    /// Complete graph without loops; H-colorings are proper q-colorings.
    pub fn clique(q: usize) -> Result<Self> {
        if q < 2 {
            return invalid("need at least two colors");
        }
        TargetGraph::from_matrix((0..q).map(|a| (0..q).map(|b| a != b).collect()).collect())
    }

    pub fn cycle(k: usize) -> Result<Self> {
        if k < 3 {
            return invalid("cycle needs at least three vertices");
        }
        TargetGraph::from_matrix(
            (0..k)
                .map(|a| (0..k).map(|b| (a + 1) % k == b || (b + 1) % k == a).collect())
                .collect(),
        )
    }

    pub fn single_edge() -> Self {
        TargetGraph::from_matrix(vec![vec![false, true], vec![true, false]])
            .expect("static graph")
    }

    /// Directed cycle `0 -> 1 -> ... -> k-1 -> 0`.
    pub fn directed_cycle(k: usize) -> Result<Self> {
        if k < 2 {
            return invalid("directed cycle needs at least two vertices");
        }
        TargetGraph::from_matrix(
            (0..k)
                .map(|a| (0..k).map(|b| (a + 1) % k == b).collect())
                .collect(),
        )
    }

    /// Directed graph with a hub `0` pointing at every vertex (itself
    /// included) and two directed cliques `1..=k` and `k+1..=2k`, each with
    /// every ordered pair including loops.
    pub fn directed_bottleneck(k: usize) -> Result<Self> {
        if k == 0 {
            return invalid("bottleneck example needs k >= 1");
        }
        let h = 2 * k + 1;
        let block = |v: usize| if v == 0 { 0 } else if v <= k { 1 } else { 2 };
        TargetGraph::from_matrix(
            (0..h)
                .map(|a| {
                    (0..h)
                        .map(|b| a == 0 || (block(a) == block(b)))
                        .collect()
                })
                .collect(),
        )
    }

    /// Parses whitespace-separated 0/1 rows. Rows may also be written
    /// without separators (`011`).
    pub fn parse_adjacency(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Result<Vec<bool>> = line
                .chars()
                .filter(|c| !c.is_whitespace() && *c != ',')
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(Error::Parse {
                        line: lineno + 1,
                        msg: format!("unexpected character {c:?}"),
                    }),
                })
                .collect();
            rows.push(row?);
        }
        TargetGraph::from_matrix(rows)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn is_bipartite(&self) -> bool {
        self.sides.is_some()
    }

    /// Bipartition class of an H-vertex (undirected bipartite H only).
    pub fn side(&self, a: Color) -> Option<u8> {
        self.sides.as_ref().map(|s| s[a as usize])
    }

    /// Whether `(a, b)` is an edge of H.
    #[inline]
    pub fn allows(&self, a: Color, b: Color) -> bool {
        self.adj[a as usize * self.h + b as usize]
    }

    pub fn out_neighbors(&self, a: Color) -> impl Iterator<Item = Color> + '_ {
        (0..self.h as Color).filter(move |&b| self.allows(a, b))
    }

    /// True if H is a complete graph without loops.
    pub fn is_clique(&self) -> bool {
        (0..self.h).all(|a| (0..self.h).all(|b| self.adj[a * self.h + b] == (a != b)))
    }

    fn compute_connected(&self) -> bool {
        // weak connectivity
        let mut seen = vec![false; self.h];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(a) = queue.pop_front() {
            for b in 0..self.h {
                if !seen[b] && (self.adj[a * self.h + b] || self.adj[b * self.h + a]) {
                    seen[b] = true;
                    queue.push_back(b);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    fn compute_sides(&self) -> Option<Vec<u8>> {
        if !self.connected {
            return None;
        }
        let mut side = vec![u8::MAX; self.h];
        side[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(a) = queue.pop_front() {
            for b in 0..self.h {
                if self.adj[a * self.h + b] {
                    if side[b] == u8::MAX {
                        side[b] = 1 - side[a];
                        queue.push_back(b);
                    } else if side[b] == side[a] {
                        return None;
                    }
                }
            }
        }
        Some(side)
    }

    /// Shortest walk from `a` to `b` in H (BFS, smallest labels first).
    pub fn shortest_path(&self, a: Color, b: Color) -> Option<Vec<Color>> {
        let mut prev = vec![usize::MAX; self.h];
        prev[a as usize] = a as usize;
        let mut queue = VecDeque::from([a as usize]);
        while let Some(x) = queue.pop_front() {
            if x == b as usize {
                break;
            }
            for y in 0..self.h {
                if self.adj[x * self.h + y] && prev[y] == usize::MAX {
                    prev[y] = x;
                    queue.push_back(y);
                }
            }
        }
        if prev[b as usize] == usize::MAX {
            return None;
        }
        let mut path = vec![b];
        let mut x = b as usize;
        while x != a as usize {
            x = prev[x];
            path.push(x as Color);
        }
        path.reverse();
        Some(path)
    }

    /// A shortest odd closed walk, returned as the vertex sequence starting
    /// and ending at its smallest possible base vertex. Such a walk is a
    /// simple cycle (or a loop), so it has at most `h` edges.
    pub fn shortest_odd_cycle(&self) -> Option<Vec<Color>> {
        let mut best: Option<Vec<Color>> = None;
        for c in 0..self.h {
            // BFS over the bipartite double cover from (c, 0) to (c, 1)
            let idx = |v: usize, p: usize| v * 2 + p;
            let mut prev = vec![usize::MAX; 2 * self.h];
            prev[idx(c, 0)] = idx(c, 0);
            let mut queue = VecDeque::from([idx(c, 0)]);
            while let Some(s) = queue.pop_front() {
                if s == idx(c, 1) {
                    break;
                }
                let (x, p) = (s / 2, s % 2);
                for y in 0..self.h {
                    let t = idx(y, 1 - p);
                    if self.adj[x * self.h + y] && prev[t] == usize::MAX {
                        prev[t] = s;
                        queue.push_back(t);
                    }
                }
            }
            if prev[idx(c, 1)] == usize::MAX {
                continue;
            }
            let mut walk = vec![c as Color];
            let mut s = idx(c, 1);
            while s != idx(c, 0) {
                s = prev[s];
                walk.push((s / 2) as Color);
            }
            walk.reverse();
            if best.as_ref().map_or(true, |b| walk.len() < b.len()) {
                best = Some(walk);
            }
        }
        best
    }
}

/// A color vector indexed by vertex.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coloring(pub Vec<Color>);

impl Coloring {
    pub fn new(colors: Vec<Color>) -> Self {
        Coloring(colors)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Color] {
        &self.0
    }

    /// Adds `shift` to every color mod `q`.
    pub fn shifted(&self, shift: Color, q: usize) -> Coloring {
        Coloring(
            self.0
                .iter()
                .map(|&c| ((c as usize + shift as usize) % q) as Color)
                .collect(),
        )
    }

    pub fn hamming(&self, other: &Coloring) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl fmt::Display for Coloring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Coloring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|p| {
                p.trim().parse::<Color>().map_err(|_| Error::Parse {
                    line: 1,
                    msg: format!("bad color {p:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Coloring)
    }
}

/// Whether every edge of `g` maps to an edge of `target`. Edges are oriented
/// from the smaller vertex to the larger one when H is directed.
pub fn is_valid(g: &Graph, target: &TargetGraph, sigma: &Coloring) -> bool {
    sigma.len() == g.n()
        && sigma.0.iter().all(|&c| (c as usize) < target.h())
        && g.edges().all(|(u, v)| target.allows(sigma.0[u], sigma.0[v]))
}

/// Whether `sigma` is a proper coloring of `g` (no monochromatic edge).
pub fn is_proper(g: &Graph, sigma: &Coloring) -> bool {
    g.edges().all(|(u, v)| sigma.0[u] != sigma.0[v])
}

/// Lexicographically ordered colorings of `g` with `q` colors. With
/// `proper_only = false` this is the whole space of `q^n` vectors.
pub fn enumerate_colorings(
    g: &Graph,
    q: usize,
    proper_only: bool,
    budget: usize,
) -> Result<Vec<Coloring>> {
    if q < 2 {
        return invalid("q must be at least 2");
    }
    let target = TargetGraph::clique(q)?;
    if proper_only {
        enumerate_valid(g, &target, None, budget)
    } else {
        enumerate_valid(g, &TargetGraph::complete_with_loops(q), None, budget)
    }
}

/// Lexicographically ordered H-colorings of `g`, optionally restricted to
/// one compatibility class of a bipartite H.
pub fn enumerate_h_colorings(
    g: &Graph,
    target: &TargetGraph,
    component: Component,
    budget: usize,
) -> Result<Vec<Coloring>> {
    let first_side = match component {
        Component::All => None,
        Component::Side0 | Component::Side1 => {
            if !target.is_bipartite() {
                return invalid("compatibility classes need a bipartite target graph");
            }
            if !g.is_path() {
                return invalid("compatibility classes are defined for paths");
            }
            Some(if component == Component::Side0 { 0 } else { 1 })
        }
    };
    enumerate_valid(g, target, first_side, budget)
}

impl TargetGraph {
    fn complete_with_loops(q: usize) -> TargetGraph {
        TargetGraph::from_matrix(vec![vec![true; q]; q]).expect("static graph")
    }
}

fn enumerate_valid(
    g: &Graph,
    target: &TargetGraph,
    first_side: Option<u8>,
    budget: usize,
) -> Result<Vec<Coloring>> {
    let n = g.n();
    let h = target.h() as Color;
    let mut out = Vec::new();
    let mut cur = vec![0 as Color; n];
    // depth-first in vertex order keeps the output lexicographic
    fn rec(
        v: usize,
        g: &Graph,
        target: &TargetGraph,
        first_side: Option<u8>,
        h: Color,
        cur: &mut Vec<Color>,
        out: &mut Vec<Coloring>,
        budget: usize,
    ) -> Result<()> {
        if v == g.n() {
            if out.len() >= budget {
                return Err(Error::BudgetExceeded { cap: budget });
            }
            out.push(Coloring(cur.clone()));
            return Ok(());
        }
        for c in 0..h {
            if v == 0 {
                if let Some(s) = first_side {
                    if target.side(c) != Some(s) {
                        continue;
                    }
                }
            }
            let ok = g
                .neighbors(v)
                .iter()
                .filter(|&&u| u < v)
                .all(|&u| target.allows(cur[u], c));
            if ok {
                cur[v] = c;
                rec(v + 1, g, target, first_side, h, cur, out, budget)?;
            }
        }
        Ok(())
    }
    rec(0, g, target, first_side, h, &mut cur, &mut out, budget)?;
    Ok(out)
}

fn check_three_coloring(sigma: &Coloring) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::InvalidColoring("empty coloring".into()));
    }
    if sigma.0.iter().any(|&c| c > 2) {
        return Err(Error::InvalidColoring(format!(
            "{sigma} is not a 3-coloring"
        )));
    }
    if sigma.0.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidColoring(format!("{sigma} is not proper")));
    }
    Ok(())
}

/// Sign vector of the successive differences of a proper 3-coloring:
/// `+1` where `σ_{i+1} − σ_i ≡ 1 (mod 3)`, `−1` where it is `≡ 2`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SignConfig(pub Vec<i8>);

impl SignConfig {
    pub fn all_plus(len: usize) -> Self {
        SignConfig(vec![1; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the sign vector in `0..2^len`, with bit `i` set for `+1`.
    pub fn index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0)
            .map(|(i, _)| 1usize << i)
            .sum()
    }

    pub fn from_index(index: usize, len: usize) -> Self {
        SignConfig(
            (0..len)
                .map(|i| if index >> i & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn hamming(&self, other: &SignConfig) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

pub fn to_signs(sigma: &Coloring) -> Result<SignConfig> {
    check_three_coloring(sigma)?;
    Ok(SignConfig(
        sigma
            .0
            .windows(2)
            .map(|w| if (w[1] + 3 - w[0]) % 3 == 1 { 1 } else { -1 })
            .collect(),
    ))
}

pub fn from_signs(signs: &SignConfig, first: Color) -> Result<Coloring> {
    if first > 2 {
        return Err(Error::InvalidColoring(format!("color {first} out of range")));
    }
    let mut colors = Vec::with_capacity(signs.len() + 1);
    colors.push(first);
    let mut c = first as i32;
    for &s in &signs.0 {
        c = (c + s as i32).rem_euclid(3);
        colors.push(c as Color);
    }
    Ok(Coloring(colors))
}

/// Canonical height function: `h_0` is the value in `0..6` that is odd (the
/// first vertex has label 1) and congruent to `σ_0` mod 3.
pub fn height_of(sigma: &Coloring) -> Result<Vec<i64>> {
    let signs = to_signs(sigma)?;
    let c0 = sigma.0[0] as i64;
    let h0 = (0..6).find(|h| h % 2 == 1 && h % 3 == c0).expect("CRT");
    let mut h = Vec::with_capacity(sigma.len());
    h.push(h0);
    for &s in &signs.0 {
        h.push(h.last().unwrap() + s as i64);
    }
    Ok(h)
}

/// Positive per-vertex weights for the d2 metric.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexWeights(Vec<Exact>);

impl VertexWeights {
    pub fn new(weights: Vec<Exact>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| *w <= Exact::zero()) {
            return invalid("weights must be positive");
        }
        Ok(VertexWeights(weights))
    }

    /// `(1/2, 1, ..., 1, 1/2)`.
    pub fn glauber_q3(n: usize) -> Result<Self> {
        Self::ends(n, Exact::new(1, 2), Exact::new(1, 2))
    }

    /// `(1/4, 1, ..., 1, 3/4)`.
    pub fn scan_q3(n: usize) -> Result<Self> {
        Self::ends(n, Exact::new(1, 4), Exact::new(3, 4))
    }

    fn ends(n: usize, first: Exact, last: Exact) -> Result<Self> {
        if n < 2 {
            return invalid("weight presets need n >= 2");
        }
        let mut w = vec![Exact::from_integer(1); n];
        w[0] = first;
        w[n - 1] = last;
        Ok(VertexWeights(w))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, v: usize) -> Exact {
        self.0[v]
    }

    pub fn as_slice(&self) -> &[Exact] {
        &self.0
    }

    pub fn min(&self) -> Exact {
        *self.0.iter().min().expect("nonempty")
    }
}

fn check_pair(sigma: &Coloring, tau: &Coloring) -> Result<()> {
    if sigma.len() != tau.len() {
        return Err(Error::LengthMismatch {
            expected: sigma.len(),
            got: tau.len(),
        });
    }
    Ok(())
}

/// Hamming distance of the sign vectors.
pub fn d1(sigma: &Coloring, tau: &Coloring) -> Result<usize> {
    check_pair(sigma, tau)?;
    Ok(to_signs(sigma)?.hamming(&to_signs(tau)?))
}

/// Height functions `(h, h*)` of `(σ, τ)` attaining the d2 minimum, together
/// with the value `d2`.
pub fn optimal_heights(
    sigma: &Coloring,
    tau: &Coloring,
    weights: &VertexWeights,
) -> Result<(Vec<i64>, Vec<i64>, Exact)> {
    check_pair(sigma, tau)?;
    if weights.len() != sigma.len() {
        return Err(Error::LengthMismatch {
            expected: sigma.len(),
            got: weights.len(),
        });
    }
    let h = height_of(sigma)?;
    let hs = height_of(tau)?;
    let diffs: Vec<i64> = h.iter().zip(&hs).map(|(a, b)| b - a).collect();
    let cost = |s: i64| -> Exact {
        diffs
            .iter()
            .zip(weights.as_slice())
            .map(|(&d, w)| *w * Exact::from_integer((s - d).abs() as i128))
            .sum::<Exact>()
            / Exact::from_integer(2)
    };
    // weighted median of the differences; the objective is convex in s
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by_key(|&i| diffs[i]);
    let total: Exact = weights.as_slice().iter().copied().sum();
    let mut acc = Exact::zero();
    let mut median = diffs[order[0]];
    for &i in &order {
        acc += weights.get(i);
        if acc * Exact::from_integer(2) >= total {
            median = diffs[i];
            break;
        }
    }
    let lo = median.div_euclid(6) * 6;
    let (best_s, best) = [lo, lo + 6]
        .into_iter()
        .map(|s| (s, cost(s)))
        .min_by(|a, b| a.1.cmp(&b.1).then(a.0.abs().cmp(&b.0.abs())))
        .expect("two candidates");
    // h* shifted by -s realises the minimum: |h_i - (h*_i - s)|
    let shifted: Vec<i64> = hs.iter().map(|x| x - best_s).collect();
    Ok((h, shifted, best))
}

/// Weighted height-function distance between two proper 3-colorings.
pub fn d2(sigma: &Coloring, tau: &Coloring, weights: &VertexWeights) -> Result<Exact> {
    optimal_heights(sigma, tau, weights).map(|(_, _, d)| d)
}

/// A single-vertex recoloring.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Move {
    pub vertex: usize,
    pub from: Color,
    pub to: Color,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geodesic {
    pub cost: Exact,
    pub moves: Vec<Move>,
}

/// Cheapest sequence of single-vertex moves inside the proper 3-colorings of
/// the path, where recoloring vertex `v` costs `weights[v]`.
pub fn geodesic_check(
    sigma: &Coloring,
    tau: &Coloring,
    weights: &VertexWeights,
    budget: usize,
) -> Result<Geodesic> {
    check_pair(sigma, tau)?;
    check_three_coloring(sigma)?;
    check_three_coloring(tau)?;
    let g = Graph::path(sigma.len())?;
    let states = enumerate_colorings(&g, 3, true, budget)?;
    let index: HashMap<&Coloring, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let start = index[sigma];
    let goal = index[tau];
    let mut dist = vec![None::<Exact>; states.len()];
    let mut prev = vec![usize::MAX; states.len()];
    dist[start] = Some(Exact::zero());
    let mut heap = BinaryHeap::from([Reverse((Exact::zero(), start))]);
    while let Some(Reverse((d, s))) = heap.pop() {
        if dist[s].is_some_and(|best| d > best) {
            continue;
        }
        if s == goal {
            break;
        }
        let cur = &states[s];
        for v in 0..cur.len() {
            for c in 0..3 {
                if c == cur.0[v] {
                    continue;
                }
                let mut next = cur.clone();
                next.0[v] = c;
                if let Some(&t) = index.get(&next) {
                    let nd = d + weights.get(v);
                    if dist[t].map_or(true, |old| nd < old) {
                        dist[t] = Some(nd);
                        prev[t] = s;
                        heap.push(Reverse((nd, t)));
                    }
                }
            }
        }
    }
    let cost = dist[goal].ok_or_else(|| Error::InvalidParameter("target unreachable".into()))?;
    let mut moves = Vec::new();
    let mut s = goal;
    while s != start {
        let p = prev[s];
        let v = (0..states[s].len())
            .find(|&v| states[s].0[v] != states[p].0[v])
            .expect("adjacent states differ");
        moves.push(Move {
            vertex: v,
            from: states[p].0[v],
            to: states[s].0[v],
        });
        s = p;
    }
    moves.reverse();
    Ok(Geodesic { cost, moves })
}
