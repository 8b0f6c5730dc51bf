use proptest::prelude::*;

use mallows_core::config::MixtureConfig;
use mallows_core::distance::{pmf_ratio_bounds, same_center_gap, tv_exact};
use mallows_core::learner_general::test_componentwise_close;
use mallows_core::learner_separated::pair_order_prob;
use mallows_core::lowerbound::close_entry;
use mallows_core::model::sample_many;
use mallows_core::perm::{inversions, kendall_tau, lex_rank, lex_unrank};
use mallows_core::structures::{
    block_prob, block_tensor, pair_test_vector, pair_vector, rank_one_block_tensor, BlockStructure,
};
use mallows_core::{
    LearnerBudget, MallowsMixture, MallowsModel, Permutation, PlacementOracle, PlacementQuery,
    TableOracle,
};

fn arb_perm(n: usize) -> impl Strategy<Value = Permutation> {
    Just((1..=n as u16).collect::<Vec<_>>())
        .prop_shuffle()
        .prop_map(|v| Permutation::new(v).unwrap())
}

fn arb_model(max_n: usize) -> impl Strategy<Value = MallowsModel> {
    (2..=max_n).prop_flat_map(|n| {
        (0.0..=1.0f64, arb_perm(n)).prop_map(|(phi, c)| MallowsModel::new(phi, c).unwrap())
    })
}

/// A random block structure: a shuffled prefix of the elements cut into blocks.
fn arb_blocks(n: usize, max_ell: usize) -> impl Strategy<Value = Vec<Vec<u16>>> {
    (
        arb_perm(n),
        1..=max_ell.min(n),
        prop::collection::vec(any::<bool>(), n),
    )
        .prop_map(|(p, ell, cuts)| {
            let mut blocks = vec![Vec::new()];
            for (i, &e) in p.as_slice()[..ell].iter().enumerate() {
                if i > 0 && cuts[i] {
                    blocks.push(Vec::new());
                }
                blocks.last_mut().unwrap().push(e);
            }
            blocks
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kendall_tau_is_a_metric(a in arb_perm(7), b in arb_perm(7), c in arb_perm(7)) {
        let ab = kendall_tau(&a, &b).unwrap();
        prop_assert_eq!(ab, kendall_tau(&b, &a).unwrap());
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(ab <= kendall_tau(&a, &c).unwrap() + kendall_tau(&c, &b).unwrap());
        prop_assert!(ab <= 7 * 6 / 2);
    }

    #[test]
    fn lex_rank_round_trips(p in (1usize..=8).prop_flat_map(arb_perm)) {
        prop_assert_eq!(lex_unrank(p.n(), lex_rank(&p)).unwrap(), p);
    }

    #[test]
    fn pmf_normalizes_and_scales_by_distance(m in arb_model(6), q in arb_perm(6)) {
        let v = m.vectorize().unwrap();
        prop_assert!((v.sum() - 1.0).abs() < 1e-12);
        if q.n() == m.n() && m.phi() > 0.0 {
            let d = kendall_tau(&q, m.center()).unwrap();
            let ratio = m.pmf(&q).unwrap() / m.pmf(m.center()).unwrap();
            prop_assert!((ratio - m.phi().powi(d as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn placement_marginals_sum_to_one(m in arb_model(6), e in 1u16..=6) {
        let n = m.n();
        prop_assume!(usize::from(e) <= n);
        let o = TableOracle::exact(&MallowsMixture::single(m)).unwrap();
        let total: f64 = (1..=n as u16)
            .map(|p| o.placement_prob(&PlacementQuery::new(vec![(e, p)], n).unwrap()).unwrap().value)
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l1_is_twice_tv(a in arb_model(5), phi in 0.0..=1.0f64, c in arb_perm(5)) {
        prop_assume!(a.n() == 5);
        let b = MallowsModel::new(phi, c).unwrap();
        let (va, vb) = (a.vectorize().unwrap(), b.vectorize().unwrap());
        let tv = tv_exact(&va, &vb).unwrap().value;
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!((va.l1_distance(&vb).unwrap() - 2.0 * tv).abs() < 1e-12);
    }

    #[test]
    fn block_tensor_is_rank_one(
        (m, blocks) in (3usize..=6).prop_flat_map(|n| (
            (0.0..=1.0f64, arb_perm(n)).prop_map(|(phi, c)| MallowsModel::new(phi, c).unwrap()),
            arb_blocks(n, 6),
        ))
    ) {
        let b = BlockStructure::new(blocks).unwrap();
        let o = TableOracle::exact(&MallowsMixture::single(m.clone())).unwrap();
        let t = block_tensor(&o, &b).unwrap();
        let r = rank_one_block_tensor(&m, &b).unwrap();
        prop_assert!(t.l1_distance(&r) < 1e-12 * t.entries().len() as f64);
        prop_assert!((t.sum() - block_prob(&m, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pair_test_vectors_annihilate_their_order(phi in 0.0..0.999f64, x_first in any::<bool>()) {
        let t = pair_test_vector(phi, x_first).unwrap().values;
        let v = pair_vector(phi, x_first);
        prop_assert!((t[0] * v[0] + t[1] * v[1]).abs() < 1e-15);
    }

    #[test]
    fn same_center_ratio_bounds_hold(
        n in 2usize..=6,
        phi in 0.05..=0.95f64,
        mu in 0.05..=0.5f64,
        c in arb_perm(6),
    ) {
        prop_assume!(c.n() == 6);
        let center = Permutation::new(c.as_slice().iter().copied().filter(|&e| usize::from(e) <= n).collect()).unwrap();
        let m1 = MallowsModel::new(phi, center.clone()).unwrap();
        let m2 = MallowsModel::new((phi + same_center_gap(n, mu) * 0.999).min(1.0), center).unwrap();
        let r = pmf_ratio_bounds(&m1, &m2, mu).unwrap();
        if r.in_regime {
            prop_assert!(r.holds, "{:?}", r);
        }
    }

    #[test]
    fn pair_order_prob_decreases_in_phi(d in 2usize..=9, a in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (plo, phi) = (pair_order_prob(lo, d), pair_order_prob(hi, d));
        prop_assert!(phi <= plo + 1e-12);
        prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&phi));
    }

    #[test]
    fn tester_statistic_grows_with_weight_perturbation(
        phis in (0.05..0.9f64, 0.05..0.9f64),
        w in 0.3..0.7f64,
        t1 in 0.0..0.25f64,
        t2 in 0.0..0.25f64,
    ) {
        let c1 = Permutation::identity(5);
        let c2 = c1.reversed();
        let mix = |w: f64| MallowsMixture::new(
            vec![MallowsModel::new(phis.0, c1.clone()).unwrap(), MallowsModel::new(phis.1, c2.clone()).unwrap()],
            vec![w, 1.0 - w],
        ).unwrap();
        let o = TableOracle::exact(&mix(w)).unwrap();
        let budget = LearnerBudget::default();
        let at = |t: f64| test_componentwise_close(&o, &mix(w + t), &budget).unwrap();
        prop_assert!(at(0.0).statistic < 1e-12 && at(0.0).accept);
        let (s1, s2) = (at(t1.min(t2)).statistic, at(t1.max(t2)).statistic);
        prop_assert!(s1 <= s2 + 1e-12);
    }

    #[test]
    fn close_entries_vanish_below_r_minus_one(lambda in 0.001..0.05f64, r in 2usize..=6) {
        for inv in 0..=r - 2 {
            prop_assert!(close_entry(lambda, r, inv).abs() < 1e-13);
        }
    }

    #[test]
    fn mixture_config_round_trips(m in arb_model(7), w in 0.05..0.95f64, phi in 0.0..=1.0f64) {
        let other = MallowsModel::new(phi, m.center().reversed()).unwrap();
        let mix = MallowsMixture::new(vec![m, other], vec![w, 1.0 - w]).unwrap();
        let cfg = MixtureConfig::from_mixture(&mix);
        let back = MixtureConfig::from_json(&cfg.to_json()).unwrap().to_mixture().unwrap();
        prop_assert_eq!(back, mix);
    }
}

#[test]
fn sampling_ignores_thread_count() {
    let mix = MallowsMixture::new(
        vec![
            MallowsModel::new(0.3, Permutation::identity(6)).unwrap(),
            MallowsModel::new(0.7, Permutation::identity(6).reversed()).unwrap(),
        ],
        vec![0.4, 0.6],
    )
    .unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_many(&mix, 50_000, 99))
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run(8));
    assert!(one.iter().all(|p| inversions(p) <= 15));
}
