use std::collections::BTreeMap;

use proptest::prelude::*;

use pathmix::coupling_lab::{coupling_time, Coupler, CouplingKind, Metric};
use pathmix::domain::{d1, d2, from_signs, height_of, to_signs, Color, Coloring, Graph, TargetGraph, VertexWeights};
use pathmix::dynamics::{advance, metropolis_update, sign_outcomes, step_outcomes, BaseChain, ChainSpec, RandomTape, SignKind};
use pathmix::exact_analysis::build_kernel;
use pathmix::percolation_lb::{
    mid_color_lower_bound, mid_color_prob, sample_pi0, segment_layout, transfer_count, transfer_power, z_statistic,
};
use pathmix::wilson_method::closed_form_eigen;
use pathmix::Exact;

fn proper(n: std::ops::RangeInclusive<usize>, q: usize) -> impl Strategy<Value = Coloring> {
    n.prop_flat_map(move |n| (0..q as Color, prop::collection::vec(1..q as Color, n - 1)))
        .prop_map(move |(first, steps)| {
            let mut c = vec![first];
            for d in steps {
                let last = *c.last().unwrap();
                c.push((last + d) % q as Color);
            }
            Coloring(c)
        })
}

fn pair(n: usize, q: usize) -> impl Strategy<Value = (Coloring, Coloring)> {
    (proper(n..=n, q), proper(n..=n, q))
}

fn normalized<K: Ord>(items: impl IntoIterator<Item = (K, u64)>, denom: u64) -> BTreeMap<K, Exact> {
    let mut m = BTreeMap::new();
    for (k, w) in items {
        *m.entry(k).or_insert(Exact::from_integer(0)) += Exact::new(w as i128, denom as i128);
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signs_round_trip(s in proper(2..=40, 3)) {
        let signs = to_signs(&s).unwrap();
        prop_assert_eq!(from_signs(&signs, s.0[0]).unwrap(), s.clone());
        let h = height_of(&s).unwrap();
        for i in 0..s.len() - 1 {
            prop_assert_eq!(h[i + 1] - h[i], signs.0[i] as i64);
        }
    }

    #[test]
    fn shifts_preserve_distances((s, t) in pair(9, 3), k in 1..3u8) {
        let w = VertexWeights::glauber_q3(9).unwrap();
        let (ss, ts) = (s.shifted(k, 3), t.shifted(k, 3));
        prop_assert_eq!(to_signs(&ss).unwrap(), to_signs(&s).unwrap());
        prop_assert_eq!(d1(&ss, &ts).unwrap(), d1(&s, &t).unwrap());
        prop_assert_eq!(d2(&ss, &ts, &w).unwrap(), d2(&s, &t, &w).unwrap());
    }

    #[test]
    fn d2_is_a_metric((a, b) in pair(10, 3), c in proper(10..=10, 3)) {
        let w = VertexWeights::scan_q3(10).unwrap();
        let ab = d2(&a, &b, &w).unwrap();
        prop_assert_eq!(ab, d2(&b, &a, &w).unwrap());
        prop_assert!(ab <= d2(&a, &c, &w).unwrap() + d2(&c, &b, &w).unwrap());
        prop_assert_eq!(ab == Exact::from_integer(0), a == b);
    }

    #[test]
    fn metropolis_keeps_colorings_proper(s in proper(2..=12, 4), v in 0..12usize, c in 0..4u8) {
        let n = s.len();
        let spec = ChainSpec::path_q(n, 4, BaseChain::Glauber).unwrap();
        let v = v % n;
        let next = metropolis_update(&s, v, c, &spec).unwrap();
        prop_assert!(next.0.windows(2).all(|e| e[0] != e[1]));
        prop_assert!(next.hamming(&s) <= 1);
    }

    #[test]
    fn tapes_reproduce_and_clamps_hold(s in proper(3..=15, 3), seed in any::<u64>(), scan in any::<bool>()) {
        let n = s.len();
        let base = if scan { BaseChain::Scan } else { BaseChain::Glauber };
        let spec = ChainSpec::path_q(n, 3, base).unwrap().with_clamp(&[0, n - 1]).unwrap();
        let tape = RandomTape::new(seed);
        let (mut x, mut y) = (s.clone(), s.clone());
        for t in 0..20 {
            advance(&mut x, &spec, &tape, 3, t);
            advance(&mut y, &spec, &tape, 3, t);
            prop_assert_eq!(&x, &y);
            prop_assert_eq!(x.0[0], s.0[0]);
            prop_assert_eq!(x.0[n - 1], s.0[n - 1]);
        }
    }

    #[test]
    fn random_target_kernels_preserve_uniform(bits in prop::collection::vec(any::<bool>(), 6), n in 2..=4usize, scan in any::<bool>()) {
        // symmetric 3×3 pattern with loops from six bits
        let mut rows = vec![vec![false; 3]; 3];
        let mut k = 0;
        for i in 0..3 {
            for j in i..3 {
                rows[i][j] = bits[k];
                rows[j][i] = bits[k];
                k += 1;
            }
        }
        let target = TargetGraph::from_matrix(rows);
        prop_assume!(target.is_ok());
        let target = target.unwrap();
        let base = if scan { BaseChain::Scan } else { BaseChain::Glauber };
        let spec = ChainSpec::new(Graph::path(n).unwrap(), target, base);
        prop_assume!(spec.is_ok());
        let kernel = build_kernel(&spec.unwrap(), 100_000);
        prop_assume!(kernel.is_ok());
        let kernel = kernel.unwrap();
        prop_assert!(kernel.is_row_stochastic());
        prop_assert!(kernel.preserves_uniform());
    }

    #[test]
    fn eigenvector_statistic_decays_by_lambda(bits in prop::collection::vec(any::<bool>(), 3..=8), scan in any::<bool>()) {
        let kind = if scan { SignKind::Scan } else { SignKind::Glauber };
        let n = bits.len() + 1;
        let x = pathmix::domain::SignConfig(bits.iter().map(|&b| if b { 1 } else { -1 }).collect());
        let cf = closed_form_eigen(kind, n).unwrap();
        let dot = |y: &pathmix::domain::SignConfig| cf.w.iter().zip(&y.0).map(|(w, &s)| w * s as f64).sum::<f64>();
        let outcomes = sign_outcomes(kind, &x);
        let total: u64 = outcomes.iter().map(|(_, w)| w).sum();
        let mean: f64 = outcomes.iter().map(|(y, w)| dot(y) * *w as f64).sum::<f64>() / total as f64;
        prop_assert!((mean - cf.lambda * dot(&x)).abs() <= 1e-9 * (1.0 + dot(&x).abs()));
    }

    #[test]
    fn coupled_copies_have_correct_marginals((s, t) in pair(4, 4), k in 0..6usize) {
        let kind = CouplingKind::ALL[k];
        let base = if kind.is_glauber() { BaseChain::Glauber } else { BaseChain::Scan };
        let spec = ChainSpec::path_q(4, 4, base).unwrap();
        let coupler = Coupler::new(kind, &spec).unwrap();
        let denom = coupler.denominator().unwrap();
        let joint = coupler.outcomes(&s, &t);
        let first = normalized(joint.iter().map(|((a, _), w)| (a.clone(), *w)), denom);
        let second = normalized(joint.iter().map(|((_, b), w)| (b.clone(), *w)), denom);
        let chain_denom = pathmix::dynamics::step_denominator(&spec).unwrap();
        prop_assert_eq!(first, normalized(step_outcomes(&spec, &s), chain_denom));
        prop_assert_eq!(second, normalized(step_outcomes(&spec, &t), chain_denom));
    }

    #[test]
    fn d2_steps_stay_bounded((s, t) in pair(8, 3), seed in any::<u64>(), scan in any::<bool>()) {
        let (kind, base) = if scan {
            (CouplingKind::IdentityScan, BaseChain::Scan)
        } else {
            (CouplingKind::IdentityGlauber, BaseChain::Glauber)
        };
        let coupler = Coupler::new(kind, &ChainSpec::path_q(8, 3, base).unwrap()).unwrap();
        let stats = coupling_time(&coupler, &[(s, t)], 4, 300, &RandomTape::new(seed)).unwrap();
        prop_assert_eq!(stats.d2_step_violations, 0);
    }

    #[test]
    fn transfer_counts_agree_with_powers(q in 3..=7usize, s in 0..=20u32, i in 0..7u8, j in 0..7u8) {
        let (i, j) = (i % q as u8, j % q as u8);
        let c = transfer_count(q, s, i, j).unwrap();
        prop_assert_eq!(c, transfer_power(q, s).unwrap()[i as usize][j as usize]);
        prop_assert_eq!(c, transfer_count(q, s, j, i).unwrap());
    }

    #[test]
    fn mid_probability_respects_bound(q in 3..=7usize, ell in 1..=6u32, r in 1..=6u32) {
        prop_assert!(mid_color_prob(q, 2 * ell, 2 * r).unwrap() >= mid_color_lower_bound(q, 2 * r));
    }

    #[test]
    fn anchored_samples_are_proper(r in 1..=3usize, ell in 1..=4usize, extra in 0..20usize, q in 3..=5usize, seed in any::<u64>()) {
        let k = 2 * (r + ell);
        let n = k + 1 + extra;
        let layout = segment_layout(n, q, Some((2 * r, 2 * ell))).unwrap();
        let s = sample_pi0(&layout, &RandomTape::new(seed), 0);
        prop_assert!(s.0.windows(2).all(|e| e[0] != e[1]));
        prop_assert!(layout.anchors.iter().all(|&a| s.0[a] == 0));
        prop_assert_eq!(z_statistic(&layout, &s).indicators.len(), layout.m);
    }
}

#[test]
fn hamming_metric_counts_disagreements() {
    let s = Coloring(vec![0, 1, 2, 0]);
    let t = Coloring(vec![0, 2, 1, 0]);
    assert_eq!(Metric::Hamming.eval(&s, &t).unwrap(), Exact::from_integer(2));
}
