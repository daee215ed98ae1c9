//! Eigenvector lower bounds and coupling upper bounds for the ± chains.
//!
//! The expectation matrix `A` of a sign chain satisfies
//! `E[X(1) | X(0)] = A X(0)`. Its Perron eigenvalue `λ` and positive left
//! eigenvector `w` drive both bounds: `Φ_t = w·X(t)` decays like `λ^t`,
//! and the monotone coupling contracts `w·(Y − X)` by the same factor.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::SignConfig;
use crate::dynamics::{apply_sign_move, RandomTape, SignKind, COLOR_SLOT, VERTEX_SLOT};
use crate::error::invalid;
use crate::{Error, Exact, Result};

/// `A` stored as integer numerators over one denominator (`3n` for
/// Glauber, `3^n` for a sweep).
#[derive(Clone, Debug)]
pub struct ExpectationMatrix {
    kind: SignKind,
    n: usize,
    numer: Vec<i128>,
    denom: i128,
}

impl ExpectationMatrix {
    pub fn kind(&self) -> SignKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of sign coordinates, `n − 1`.
    pub fn dim(&self) -> usize {
        self.n - 1
    }

    pub fn entry(&self, i: usize, j: usize) -> Exact {
        Exact::new(self.numer[i * self.dim() + j], self.denom)
    }

    pub fn is_symmetric(&self) -> bool {
        let m = self.dim();
        (0..m).all(|i| (0..i).all(|j| self.numer[i * m + j] == self.numer[j * m + i]))
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        let m = self.dim();
        let d = self.denom as f64;
        DMatrix::from_fn(m, m, |i, j| self.numer[i * m + j] as f64 / d)
    }
}

/// `3·E_v`, where `E_v = (2/3) I + (1/3) Move_v` is the expected effect of
/// the move attempted at vertex `v`.
fn move_map(n: usize, v: usize) -> Vec<i128> {
    let m = n - 1;
    let mut e = vec![0i128; m * m];
    for i in 0..m {
        e[i * m + i] = 3;
    }
    if v == 0 || v == n - 1 {
        let j = if v == 0 { 0 } else { m - 1 };
        e[j * m + j] = 1;
    } else {
        let (a, b) = (v - 1, v);
        e[a * m + a] = 2;
        e[b * m + b] = 2;
        e[a * m + b] = 1;
        e[b * m + a] = 1;
    }
    e
}

pub fn expectation_matrix(kind: SignKind, n: usize) -> Result<ExpectationMatrix> {
    if n < 3 {
        return invalid("expectation matrix needs n >= 3");
    }
    let m = n - 1;
    match kind {
        SignKind::Glauber => {
            let mut numer = vec![0i128; m * m];
            for v in 0..n {
                for (acc, x) in numer.iter_mut().zip(move_map(n, v)) {
                    *acc += x;
                }
            }
            Ok(ExpectationMatrix {
                kind,
                n,
                numer,
                denom: 3 * n as i128,
            })
        }
        SignKind::Scan => {
            let denom = 3i128
                .checked_pow(n as u32)
                .ok_or(Error::Overflow("scan expectation matrix"))?;
            let mut numer = vec![0i128; m * m];
            for i in 0..m {
                numer[i * m + i] = 1;
            }
            for v in 0..n {
                let e = move_map(n, v);
                let mut next = vec![0i128; m * m];
                for i in 0..m {
                    for k in 0..m {
                        let a = e[i * m + k];
                        if a != 0 {
                            for j in 0..m {
                                next[i * m + j] += a * numer[k * m + j];
                            }
                        }
                    }
                }
                numer = next;
            }
            Ok(ExpectationMatrix {
                kind,
                n,
                numer,
                denom,
            })
        }
    }
}

/// Leading eigenvalue and positive left eigenvector (scaled so its minimum
/// is 1), computed numerically from the exact matrix.
pub fn leading_eigen(a: &ExpectationMatrix) -> Result<(f64, Vec<f64>)> {
    let mat = a.to_f64();
    let m = a.dim();
    let (lambda, mut w): (f64, Vec<f64>) = match a.kind {
        SignKind::Glauber => {
            let eig = SymmetricEigen::new(mat);
            let top = (0..m)
                .max_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]))
                .expect("nonempty");
            (eig.eigenvalues[top], eig.eigenvectors.column(top).iter().copied().collect())
        }
        SignKind::Scan => {
            let lambda = mat
                .complex_eigenvalues()
                .iter()
                .filter(|z| z.im.abs() < 1e-9)
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            let shifted = mat.transpose() - DMatrix::identity(m, m) * lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t.expect("requested");
            let k = (0..m)
                .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
                .expect("nonempty");
            (lambda, v_t.row(k).iter().copied().collect())
        }
    };
    if w.iter().sum::<f64>() < 0.0 {
        w.iter_mut().for_each(|x| *x = -*x);
    }
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::InvalidParameter("leading eigenvector is not positive".into()));
    }
    w.iter_mut().for_each(|x| *x /= min);
    Ok((lambda, w))
}

/// Closed-form eigendata.
#[derive(Clone, Debug)]
pub struct ClosedForm {
    pub lambda: f64,
    /// `w_1..w_{n−1}` with minimum exactly 1.
    pub w: Vec<f64>,
    /// The scale `c_n` applied to the unscaled profile.
    pub scale: f64,
    /// Phase `β` of the scan profile.
    pub phase: Option<f64>,
    /// Growth rate `γ` of the scan profile.
    pub growth: Option<f64>,
}

/// Root of `tan β + 3 tan(β + α)` in `(−α, 0)` by bisection.
fn scan_phase(alpha: f64) -> Result<f64> {
    let f = |b: f64| b.tan() + 3.0 * (b + alpha).tan();
    let (mut lo, mut hi) = (-alpha, 0.0f64);
    let probe = 1e-12 * alpha;
    if !(f(lo + probe) < 0.0 && f(hi - probe) > 0.0) {
        return Err(Error::InvalidParameter("phase root is not bracketed".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn closed_form_eigen(kind: SignKind, n: usize) -> Result<ClosedForm> {
    if n < 3 {
        return invalid("closed form needs n >= 3");
    }
    let nm1 = (n - 1) as f64;
    match kind {
        SignKind::Glauber => {
            let half = PI / (2.0 * nm1);
            let scale = 1.0 / half.sin();
            let w = (1..n)
                .map(|i| scale * (PI * (i as f64 - 0.5) / nm1).sin())
                .collect();
            Ok(ClosedForm {
                lambda: 1.0 - 4.0 * half.sin().powi(2) / (3.0 * n as f64),
                w,
                scale,
                phase: None,
                growth: None,
            })
        }
        SignKind::Scan => {
            let alpha = PI / nm1;
            let growth = ((3.0 + alpha.cos().powi(2)).sqrt() - alpha.cos()).ln();
            let phase = scan_phase(alpha)?;
            let raw: Vec<f64> = (1..n)
                .map(|i| (growth * i as f64).exp() * (alpha * i as f64 + phase).sin())
                .collect();
            let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let scale = 1.0 / min;
            Ok(ClosedForm {
                lambda: (-2.0 * growth).exp(),
                w: raw.iter().map(|x| x * scale).collect(),
                scale,
                phase: Some(phase),
                growth: Some(growth),
            })
        }
    }
}

/// `c_n cosec(π/(2(n−1)))`, the Glauber value of `Φ₀` at the all-plus
/// state.
pub fn glauber_phi0_closed(n: usize) -> f64 {
    let s = (PI / (2.0 * (n - 1) as f64)).sin();
    1.0 / (s * s)
}

/// Largest step of the weight profile padded with `w_0 = w_n = 0`.
pub fn max_weight_step(w: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut best = 0.0f64;
    for &x in w.iter().chain(std::iter::once(&0.0)) {
        best = best.max((x - prev).abs());
        prev = x;
    }
    best
}

/// `2 max_i (w_i − w_{i−1})²` for the Glauber profile.
pub fn glauber_rho(n: usize) -> Result<f64> {
    let cf = closed_form_eigen(SignKind::Glauber, n)?;
    Ok(2.0 * max_weight_step(&cf.w).powi(2))
}

#[derive(Clone, Debug)]
pub struct WilsonReport {
    pub kind: SignKind,
    pub n: usize,
    pub lambda: f64,
    pub w: Vec<f64>,
    pub scale: f64,
    pub phi0: f64,
    pub rho: f64,
    /// The supplied `ρ` was estimated by simulation.
    pub rho_empirical: bool,
    pub nu: f64,
    /// `λ ln(Φ₀ / 4√ν) / (1 − λ)`, a lower bound on `Mix(1/2)`.
    pub lower_bound: f64,
    /// Leading-order asymptotic of the lower bound.
    pub lower_target: f64,
}

impl WilsonReport {
    /// `ln(2Φ₀/ε) / (1 − λ)`, an upper bound on `Mix(ε)`.
    pub fn upper_bound(&self, eps: f64) -> f64 {
        (2.0 * self.phi0 / eps).ln() / (1.0 - self.lambda)
    }

    /// Key-value lines followed by nothing else; `eps` picks the upper
    /// bound reported.
    pub fn write_report<W: Write>(&self, mut out: W, eps: f64) -> Result<()> {
        let kind = match self.kind {
            SignKind::Glauber => "glauber",
            SignKind::Scan => "scan",
        };
        writeln!(out, "kind={kind}")?;
        writeln!(out, "n={}", self.n)?;
        writeln!(out, "lambda={:.15e}", self.lambda)?;
        writeln!(out, "one_minus_lambda={:.15e}", 1.0 - self.lambda)?;
        writeln!(out, "c_n={:.15e}", self.scale)?;
        writeln!(out, "phi0={:.15e}", self.phi0)?;
        writeln!(out, "rho={:.15e}", self.rho)?;
        writeln!(out, "rho_source={}", if self.rho_empirical { "constant empirical" } else { "closed form" })?;
        writeln!(out, "nu={:.15e}", self.nu)?;
        writeln!(out, "lower_bound_mix_half={:.15e}", self.lower_bound)?;
        writeln!(out, "lower_target={:.15e}", self.lower_target)?;
        writeln!(out, "eps={eps}")?;
        writeln!(out, "upper_bound_mix_eps={:.15e}", self.upper_bound(eps))?;
        Ok(())
    }

    /// CSV of `(i, w_i)` with 1-based coordinates.
    pub fn write_weights_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,w_i")?;
        for (i, w) in self.w.iter().enumerate() {
            writeln!(out, "{},{:.15e}", i + 1, w)?;
        }
        Ok(())
    }
}

pub fn wilson_bounds(kind: SignKind, n: usize, rho: f64) -> Result<WilsonReport> {
    if !(rho > 0.0 && rho.is_finite()) {
        return invalid("rho must be positive and finite");
    }
    let cf = closed_form_eigen(kind, n)?;
    let lambda = cf.lambda;
    // a negative leading eigenvalue would need the two-step chain
    assert!(lambda > 0.0 && lambda < 1.0, "leading eigenvalue outside (0, 1)");
    let phi0: f64 = cf.w.iter().sum();
    let nu = rho / (1.0 - lambda * lambda);
    let nf = n as f64;
    let lower_target = match kind {
        SignKind::Glauber => 1.5 / (PI * PI) * nf.powi(3) * nf.ln(),
        SignKind::Scan => nf * nf * nf.ln() / (PI * PI),
    };
    Ok(WilsonReport {
        kind,
        n,
        lambda,
        lower_bound: lambda * (phi0 / (4.0 * nu.sqrt())).ln() / (1.0 - lambda),
        phi0,
        rho,
        rho_empirical: kind == SignKind::Scan,
        nu,
        lower_target,
        scale: cf.scale,
        w: cf.w,
    })
}

#[derive(Clone, Debug)]
pub struct RhoEstimate {
    /// Largest conditional variance of `Φ_t` over the observed states.
    pub rho_hat: f64,
    /// Largest observed Doob increment `|Z_i − Z_{i−1}|` within a sweep.
    pub max_increment: f64,
    /// `max_i |w_i − w_{i−1}|` with zero padding.
    pub max_weight_step: f64,
    pub states_observed: usize,
}

/// Exact `var(w·X(1) | X(0) = x)` for one scan sweep, by propagating the
/// second-moment matrix through the moves.
pub fn scan_conditional_variance(x: &SignConfig, w: &[f64]) -> f64 {
    let m = x.len();
    let n = m + 1;
    let mut s = DMatrix::from_fn(m, m, |i, j| (x.0[i] * x.0[j]) as f64);
    let mut mean: Vec<f64> = x.0.iter().map(|&v| v as f64).collect();
    for v in 0..n {
        if v == 0 || v == n - 1 {
            let j = if v == 0 { 0 } else { m - 1 };
            for k in 0..m {
                if k != j {
                    s[(j, k)] /= 3.0;
                    s[(k, j)] /= 3.0;
                }
            }
            mean[j] /= 3.0;
        } else {
            let (a, b) = (v - 1, v);
            for k in 0..m {
                if k != a && k != b {
                    let (ka, kb) = (s[(k, a)], s[(k, b)]);
                    s[(k, a)] = (2.0 * ka + kb) / 3.0;
                    s[(k, b)] = (2.0 * kb + ka) / 3.0;
                    s[(a, k)] = s[(k, a)];
                    s[(b, k)] = s[(k, b)];
                }
            }
            let (aa, bb) = (s[(a, a)], s[(b, b)]);
            s[(a, a)] = (2.0 * aa + bb) / 3.0;
            s[(b, b)] = (2.0 * bb + aa) / 3.0;
            let (ma, mb) = (mean[a], mean[b]);
            mean[a] = (2.0 * ma + mb) / 3.0;
            mean[b] = (2.0 * mb + ma) / 3.0;
        }
    }
    let second: f64 = (0..m).map(|i| (0..m).map(|j| w[i] * s[(i, j)] * w[j]).sum::<f64>()).sum();
    let first: f64 = w.iter().zip(&mean).map(|(a, b)| a * b).sum();
    (second - first * first).max(0.0)
}

/// Row vectors `r_k` with `Z_k = r_k · Y_k`, where `Y_k` is the state after
/// the first `k` moves of a sweep.
fn doob_weights(w: &[f64]) -> Vec<Vec<f64>> {
    let m = w.len();
    let n = m + 1;
    let mut r = vec![w.to_vec(); n + 1];
    for k in (0..n).rev() {
        let mut next = r[k + 1].clone();
        if k == 0 || k == n - 1 {
            let j = if k == 0 { 0 } else { m - 1 };
            next[j] /= 3.0;
        } else {
            let (a, b) = (k - 1, k);
            let (ra, rb) = (next[a], next[b]);
            next[a] = (2.0 * ra + rb) / 3.0;
            next[b] = (2.0 * rb + ra) / 3.0;
        }
        r[k] = next;
    }
    r
}

fn dot(r: &[f64], x: &SignConfig) -> f64 {
    r.iter().zip(&x.0).map(|(a, &b)| a * b as f64).sum()
}

/// Bound on the conditional variance of `Φ_t`: the closed form for
/// Glauber; for scan the largest exact conditional variance over the
/// states visited by `trials` sweeps from the all-plus state.
pub fn estimate_rho(kind: SignKind, n: usize, trials: u64, tape: &RandomTape) -> Result<RhoEstimate> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    let cf = closed_form_eigen(kind, n)?;
    let step = max_weight_step(&cf.w);
    match kind {
        SignKind::Glauber => Ok(RhoEstimate {
            rho_hat: 2.0 * step * step,
            max_increment: 2.0 * step,
            max_weight_step: step,
            states_observed: 0,
        }),
        SignKind::Scan => {
            let r = doob_weights(&cf.w);
            let mut x = SignConfig::all_plus(n - 1);
            let mut rho_hat = 0.0f64;
            let mut max_increment = 0.0f64;
            for t in 0..trials {
                rho_hat = rho_hat.max(scan_conditional_variance(&x, &cf.w));
                let row = tape.row(0, t);
                let mut z_prev = dot(&r[0], &x);
                for v in 0..n {
                    if row.below(v as u64, 3) == 0 {
                        apply_sign_move(&mut x, v);
                    }
                    let z = dot(&r[v + 1], &x);
                    max_increment = max_increment.max((z - z_prev).abs());
                    z_prev = z;
                }
            }
            Ok(RhoEstimate {
                rho_hat,
                max_increment,
                max_weight_step: step,
                states_observed: trials as usize,
            })
        }
    }
}

/// Coordinatewise `x ≤ y`.
pub fn dominated(x: &SignConfig, y: &SignConfig) -> bool {
    x.0.iter().zip(&y.0).all(|(a, b)| a <= b)
}

/// Applies the move at `v` to both copies with a shared draw in `0..3`.
/// End flips use a threshold rule (the new sign is `+1` iff the draw is
/// below 2 from `+1`, below 1 from `−1`); swaps fire in both copies iff
/// the draw is 0. Both rules preserve the coordinatewise order.
pub fn monotone_move(x: &mut SignConfig, y: &mut SignConfig, v: usize, draw: u64) {
    let n = x.len() + 1;
    if v == 0 || v == n - 1 {
        let j = if v == 0 { 0 } else { n - 2 };
        for s in [x, y] {
            let cut = if s.0[j] == 1 { 2 } else { 1 };
            s.0[j] = if draw < cut { 1 } else { -1 };
        }
    } else if draw == 0 {
        x.0.swap(v - 1, v);
        y.0.swap(v - 1, v);
    }
}

/// One monotone-coupled step (Glauber) or sweep (scan).
pub fn monotone_step(x: &mut SignConfig, y: &mut SignConfig, kind: SignKind, tape: &RandomTape, replicate: u64, t: u64) {
    let n = x.len() + 1;
    let row = tape.row(replicate, t);
    match kind {
        SignKind::Glauber => {
            let v = row.below(VERTEX_SLOT, n as u64) as usize;
            monotone_move(x, y, v, row.below(COLOR_SLOT, 3));
        }
        SignKind::Scan => {
            for v in 0..n {
                monotone_move(x, y, v, row.below(v as u64, 3));
            }
        }
    }
}

/// Exact joint outcomes of one coupled step, weights over `3n` (Glauber)
/// or `3^n` (scan).
pub fn monotone_outcomes(kind: SignKind, x: &SignConfig, y: &SignConfig) -> Vec<((SignConfig, SignConfig), u64)> {
    let n = x.len() + 1;
    match kind {
        SignKind::Glauber => {
            let mut out = Vec::with_capacity(3 * n);
            for v in 0..n {
                for d in 0..3 {
                    let (mut a, mut b) = (x.clone(), y.clone());
                    monotone_move(&mut a, &mut b, v, d);
                    out.push(((a, b), 1));
                }
            }
            out
        }
        SignKind::Scan => {
            let mut dist = vec![((x.clone(), y.clone()), 1u64)];
            for v in 0..n {
                let mut next = Vec::with_capacity(dist.len() * 3);
                for ((a, b), w) in dist {
                    for d in 0..3 {
                        let (mut a2, mut b2) = (a.clone(), b.clone());
                        monotone_move(&mut a2, &mut b2, v, d);
                        next.push(((a2, b2), w));
                    }
                }
                next.sort();
                next.dedup_by(|p, q| {
                    if p.0 == q.0 {
                        q.1 += p.1;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::sign_outcomes;

    fn ex(n: i128, d: i128) -> Exact {
        Exact::new(n, d)
    }

    #[test]
    fn glauber_matrix_matches_tridiagonal_form() {
        for n in 3..=12 {
            let a = expectation_matrix(SignKind::Glauber, n).unwrap();
            assert!(a.is_symmetric());
            let m = n - 1;
            for i in 0..m {
                for j in 0..m {
                    let b = if i == j {
                        if i == 0 || i == m - 1 { 3 } else { 2 }
                    } else if i.abs_diff(j) == 1 {
                        -1
                    } else {
                        0
                    };
                    let expect = Exact::from_integer(if i == j { 1 } else { 0 }) - ex(b, 3 * n as i128);
                    assert_eq!(a.entry(i, j), expect, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn scan_matrix_n3() {
        let a = expectation_matrix(SignKind::Scan, 3).unwrap();
        assert_eq!(a.entry(0, 0), ex(2, 9));
        assert_eq!(a.entry(0, 1), ex(1, 3));
        assert_eq!(a.entry(1, 0), ex(1, 27));
        assert_eq!(a.entry(1, 1), ex(2, 9));
        for n in 4..=10 {
            assert!(!expectation_matrix(SignKind::Scan, n).unwrap().is_symmetric());
        }
    }

    #[test]
    fn expectation_matches_exact_outcomes() {
        for kind in [SignKind::Glauber, SignKind::Scan] {
            for n in 3..=6 {
                let a = expectation_matrix(kind, n).unwrap();
                let m = n - 1;
                for idx in 0..1usize << m {
                    let x = SignConfig::from_index(idx, m);
                    let outs = sign_outcomes(kind, &x);
                    let total: u64 = outs.iter().map(|o| o.1).sum();
                    for i in 0..m {
                        let mean = outs
                            .iter()
                            .fold(Exact::from_integer(0), |acc, (y, w)| acc + ex(y.0[i] as i128 * *w as i128, total as i128));
                        let lin = (0..m).fold(Exact::from_integer(0), |acc, j| acc + a.entry(i, j) * Exact::from_integer(x.0[j] as i128));
                        assert_eq!(mean, lin);
                    }
                }
            }
        }
    }

    #[test]
    fn glauber_n4_values() {
        let cf = closed_form_eigen(SignKind::Glauber, 4).unwrap();
        assert!((cf.lambda - 11.0 / 12.0).abs() < 1e-15);
        for (w, e) in cf.w.iter().zip([1.0, 2.0, 1.0]) {
            assert!((w - e).abs() < 1e-12);
        }
        assert!((glauber_rho(4).unwrap() - 2.0).abs() < 1e-12);
        let r = wilson_bounds(SignKind::Glauber, 4, 2.0).unwrap();
        assert!(r.lower_bound < r.upper_bound(0.5));
        assert_eq!(r.nu, r.rho / (1.0 - r.lambda * r.lambda));
    }

    #[test]
    fn eigen_agreement() {
        for n in 3..=40 {
            for kind in [SignKind::Glauber, SignKind::Scan] {
                let a = expectation_matrix(kind, n).unwrap();
                let (lam, w) = leading_eigen(&a).unwrap();
                let cf = closed_form_eigen(kind, n).unwrap();
                assert!((lam - cf.lambda).abs() < 1e-10, "{kind:?} n={n}");
                for (x, y) in w.iter().zip(&cf.w) {
                    assert!((x - y).abs() < 1e-7 * y.max(1.0), "{kind:?} n={n}");
                }
                let mat = a.to_f64();
                let wa = nalgebra::DVector::from_vec(cf.w.clone()).transpose() * &mat;
                for (x, y) in wa.iter().zip(&cf.w) {
                    assert!((x - cf.lambda * y).abs() < 1e-8 * y);
                }
                assert!(cf.w.iter().all(|&x| x >= 1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn glauber_phi0_identity() {
        for n in 3..=100 {
            let cf = closed_form_eigen(SignKind::Glauber, n).unwrap();
            let direct: f64 = cf.w.iter().sum();
            assert!((direct - glauber_phi0_closed(n)).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn scan_asymptotics() {
        let cf = closed_form_eigen(SignKind::Scan, 200).unwrap();
        let ratio = (1.0 - cf.lambda) * 2.0 * 200.0f64.powi(2) / (PI * PI);
        assert!((ratio - 1.0).abs() < 0.1);
        let rho = glauber_rho(2000).unwrap();
        assert!((rho - 8.0).abs() < 0.05);
    }

    #[test]
    fn scan_variance_matches_enumeration() {
        for n in 3..=7 {
            let cf = closed_form_eigen(SignKind::Scan, n).unwrap();
            let m = n - 1;
            for idx in 0..1usize << m {
                let x = SignConfig::from_index(idx, m);
                let outs = sign_outcomes(SignKind::Scan, &x);
                let tot = 3f64.powi(n as i32);
                let mean: f64 = outs.iter().map(|(y, c)| dot(&cf.w, y) * *c as f64 / tot).sum();
                let var: f64 = outs.iter().map(|(y, c)| (dot(&cf.w, y) - mean).powi(2) * *c as f64 / tot).sum();
                assert!((var - scan_conditional_variance(&x, &cf.w)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn doob_endpoints() {
        let n = 6;
        let cf = closed_form_eigen(SignKind::Scan, n).unwrap();
        let r = doob_weights(&cf.w);
        let a = expectation_matrix(SignKind::Scan, n).unwrap().to_f64();
        let r0 = nalgebra::DVector::from_vec(cf.w.clone()).transpose() * a;
        for (x, y) in r0.iter().zip(&r[0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(r[n], cf.w);
    }

    #[test]
    fn doob_increments_stay_bounded() {
        let tape = RandomTape::new(11);
        for n in [8, 16, 32] {
            let e = estimate_rho(SignKind::Scan, n, 400, &tape).unwrap();
            assert!(e.max_increment <= 4.0 * e.max_weight_step);
            assert!(e.rho_hat > 0.0);
        }
    }

    #[test]
    fn expected_potential_decays_geometrically() {
        for kind in [SignKind::Glauber, SignKind::Scan] {
            let n = 5;
            let a = expectation_matrix(kind, n).unwrap();
            let m = n - 1;
            let cf = closed_form_eigen(kind, n).unwrap();
            let x = SignConfig::from_index(5, m);
            let mut v: Vec<Exact> = x.0.iter().map(|&s| Exact::from_integer(s as i128)).collect();
            let phi0 = dot(&cf.w, &x);
            for t in 1..=6 {
                v = (0..m)
                    .map(|i| (0..m).fold(Exact::from_integer(0), |acc, j| acc + a.entry(i, j) * v[j]))
                    .collect();
                let phi: f64 = v.iter().zip(&cf.w).map(|(e, w)| w * (*e.numer() as f64 / *e.denom() as f64)).sum();
                assert!((phi - cf.lambda.powi(t) * phi0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn monotone_coupling_contracts_exactly() {
        for kind in [SignKind::Glauber, SignKind::Scan] {
            for n in 3..=5 {
                let m = n - 1;
                let cf = closed_form_eigen(kind, n).unwrap();
                for i in 0..1usize << m {
                    for j in 0..1usize << m {
                        let (x, y) = (SignConfig::from_index(i, m), SignConfig::from_index(j, m));
                        if !dominated(&x, &y) {
                            continue;
                        }
                        let outs = monotone_outcomes(kind, &x, &y);
                        let total: u64 = outs.iter().map(|o| o.1).sum();
                        let mut expect = 0.0;
                        let mut marginal: Vec<(SignConfig, u64)> = Vec::new();
                        for ((a, b), w) in &outs {
                            assert!(dominated(a, b));
                            expect += (dot(&cf.w, b) - dot(&cf.w, a)) * *w as f64 / total as f64;
                            marginal.push((a.clone(), *w));
                        }
                        let d0 = dot(&cf.w, &y) - dot(&cf.w, &x);
                        assert!((expect - cf.lambda * d0).abs() < 1e-10);
                        // each copy moves as the uncoupled chain
                        marginal.sort();
                        marginal.dedup_by(|p, q| p.0 == q.0 && {
                            q.1 += p.1;
                            true
                        });
                        let mut reference = sign_outcomes(kind, &x);
                        reference.sort();
                        reference.dedup_by(|p, q| p.0 == q.0 && {
                            q.1 += p.1;
                            true
                        });
                        assert_eq!(marginal, reference);
                    }
                }
            }
        }
    }

    #[test]
    fn report_formats() {
        let r = wilson_bounds(SignKind::Scan, 8, 3.0).unwrap();
        let mut buf = Vec::new();
        r.write_report(&mut buf, 0.25).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("kind=scan\n"));
        assert!(text.contains("rho_source=constant empirical"));
        let mut buf = Vec::new();
        r.write_weights_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 8);
    }
}
