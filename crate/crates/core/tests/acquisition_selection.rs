mod common;

use common::*;
use proptest::prelude::*;
use silbo::acquisition::*;
use silbo::gp::{GpModel, KernelParams};
use silbo::mapping::SearchBox;

fn model(seed: u64) -> GpModel {
    let mut g = rng(seed);
    let z = uniform(9, 2, &mut g);
    let y: Vec<f64> = (0..9)
        .map(|i| (3.0 * z[(i, 0)]).sin() - z[(i, 1)].powi(2))
        .collect();
    let p = KernelParams {
        lengthscale: 0.4,
        signal_variance: 1.0,
        noise_variance: 1e-6,
    };
    GpModel::with_params(&z, &y, p).unwrap()
}

fn unit_box() -> SearchBox {
    SearchBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
}

/// Greedy selection without replacement over the same draw.
fn greedy(
    spec: &AcquisitionSpec,
    gp: &GpModel,
    t: usize,
    best: f64,
    n_u: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut pool: Vec<Vec<f64>> = draw_candidates(spec, &unit_box(), seed)
        .iter()
        .map(|z| z.iter().cloned().collect())
        .collect();
    let mut out = Vec::new();
    for _ in 0..=n_u {
        let mut arg = 0;
        let mut top = f64::NEG_INFINITY;
        for (i, z) in pool.iter().enumerate() {
            let s = score(spec, gp, z, t, best).unwrap();
            if s > top {
                top = s;
                arg = i;
            }
        }
        out.push(pool.remove(arg));
    }
    out
}

fn as_rows(sel: &Selection) -> Vec<Vec<f64>> {
    std::iter::once(&sel.eval)
        .chain(&sel.unlabeled)
        .map(|z| z.iter().cloned().collect())
        .collect()
}

#[test]
fn selection_equals_exhaustive_top_four() {
    for kind in [AcquisitionKind::Ucb, AcquisitionKind::Ei] {
        let spec = AcquisitionSpec {
            kind,
            candidate_count: 100,
            ..Default::default()
        };
        let gp = model(3);
        let sel = select_candidates(&spec, &gp, &unit_box(), 4, 0.5, 3, 21).unwrap();
        assert_eq!(sel.unlabeled.len(), 3);
        assert_eq!(as_rows(&sel), greedy(&spec, &gp, 4, 0.5, 3, 21));
    }
}

#[test]
fn zero_unlabeled_returns_only_argmax() {
    let spec = AcquisitionSpec::default();
    let sel = select_candidates(&spec, &model(1), &unit_box(), 1, 0.0, 0, 5).unwrap();
    assert!(sel.unlabeled.is_empty());
    assert!(unit_box().contains(sel.eval.as_slice()));
}

#[test]
fn selection_is_reproducible() {
    let spec = AcquisitionSpec::default();
    let gp = model(2);
    let a = select_candidates(&spec, &gp, &unit_box(), 7, 0.1, 50, 99).unwrap();
    let b = select_candidates(&spec, &gp, &unit_box(), 7, 0.1, 50, 99).unwrap();
    assert_eq!(as_rows(&a), as_rows(&b));
    let rows = as_rows(&a);
    for i in 0..rows.len() {
        for j in 0..i {
            assert_ne!(rows[i], rows[j]);
        }
    }
}

#[test]
fn ucb_with_zero_beta_is_posterior_mean() {
    let spec = AcquisitionSpec {
        beta: BetaSchedule::Constant(0.0),
        ..Default::default()
    };
    let gp = model(4);
    let q = [0.2, -0.3];
    assert_eq!(
        score(&spec, &gp, &q, 3, 0.0).unwrap(),
        gp.posterior(&q).unwrap().0
    );
}

proptest! {
    #[test]
    fn argmax_invariant_to_increasing_transform(scores in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let mapped: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
        prop_assert_eq!(top_indices(&scores, 1), top_indices(&mapped, 1));
    }

    #[test]
    fn ucb_monotone(mu in -10.0f64..10.0, var in 0.0f64..10.0, dv in 0.0f64..5.0, dm in 0.0f64..5.0, beta in 0.0f64..16.0) {
        prop_assert!(ucb(mu, var + dv, beta) >= ucb(mu, var, beta));
        prop_assert!(ucb(mu + dm, var, beta) >= ucb(mu, var, beta));
    }

    #[test]
    fn ei_is_nonnegative(mu in -10.0f64..10.0, var in 0.0f64..10.0, best in -10.0f64..10.0) {
        prop_assert!(expected_improvement(mu, var, best, 0.01) >= 0.0);
    }

    #[test]
    fn top_k_matches_sort(scores in prop::collection::vec(-3i32..3, 1..40), k in 1usize..10) {
        let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
        let got = top_indices(&s, k);
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by_key(|&i| (-scores[i], i));
        idx.truncate(k);
        prop_assert_eq!(got, idx);
    }
}
