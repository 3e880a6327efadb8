use silbo::bench::make_benchmark;
use silbo::linalg::Matrix;
use silbo::mapping::zonotope_box;
use silbo::objective::FnObjective;
use silbo::optimizer::*;

fn small(strategy: Strategy, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        r: 2,
        n_unlabeled: 10,
        iterations: 25,
        update_period: 5,
        strategy,
        gp_restarts: 2,
        map_budget: Some(200),
        seed,
        ..Default::default()
    }
}

fn assert_monotone(rec: &RunRecord) {
    for w in rec.rows.windows(2) {
        assert!(w[1].best >= w[0].best, "best decreased at t = {}", w[1].t);
    }
    for (i, row) in rec.rows.iter().enumerate() {
        assert_eq!(row.t, i + 1);
        assert!(row.best >= row.y || row.y == f64::NEG_INFINITY);
    }
}

#[test]
fn identity_embedding_is_plain_bo() {
    let mut f = FnObjective::new(2, |x: &[f64]| -(x[0] - 0.3).powi(2) - (x[1] + 0.2).powi(2));
    let cfg = OptimizerConfig {
        r: 2,
        n_unlabeled: 0,
        iterations: 1,
        seed: 4,
        ..Default::default()
    };
    let rec = run_fixed_embedding_bo(&mut f, &cfg, Matrix::identity(2, 2)).unwrap();
    assert_eq!(rec.total_evals(), cfg.initial_size() + 1);
    // With B = I the evaluated point is the acquired point itself.
    assert_eq!(rec.rows[0].x, rec.rows[0].z);
}

#[test]
fn default_loop_settings_run() {
    let mut f = make_benchmark("branin", 30, 0).unwrap();
    let cfg = OptimizerConfig {
        r: 2,
        n_unlabeled: 50,
        update_period: 20,
        iterations: 21,
        gp_restarts: 1,
        ..Default::default()
    };
    assert_eq!(cfg.semisir.neighbors, 7);
    let rec = run_silbo(&mut f, &cfg).unwrap();
    assert_eq!(rec.rows[19].b_generation, 1);
    assert_eq!(rec.rows[20].b_generation, 1);
}

#[test]
fn top_down_evaluation_count_is_exact() {
    let mut f = make_benchmark("branin", 12, 1).unwrap();
    let cfg = small(Strategy::TopDown, 1);
    let rec = run_silbo(&mut f, &cfg).unwrap();
    let n_l = cfg.initial_size();
    for row in &rec.rows {
        assert_eq!(row.f_evals, n_l + row.t);
    }
    assert_eq!(f.evaluations() as usize, n_l + cfg.iterations);
    assert_eq!(rec.rows.last().unwrap().b_generation, 4);
    assert_monotone(&rec);
}

#[test]
fn bottom_up_re_evaluates_training_set() {
    let mut f = make_benchmark("branin", 12, 2).unwrap();
    let cfg = small(Strategy::BottomUp, 2);
    let rec = run_silbo(&mut f, &cfg).unwrap();
    let n_l = cfg.initial_size();
    let mut expect = n_l;
    for row in &rec.rows {
        expect += 1;
        if row.t % cfg.update_period == 0 && row.t < cfg.iterations {
            // Training set holds the initial design plus t acquisitions.
            expect += n_l + row.t;
        }
        assert_eq!(row.f_evals, expect, "t = {}", row.t);
    }
    assert_eq!(f.evaluations() as usize, expect);
    assert!(rec.total_evals() > n_l + cfg.iterations);
    assert_monotone(&rec);
}

#[test]
fn runs_are_bit_reproducible() {
    for strategy in [Strategy::TopDown, Strategy::BottomUp] {
        let cfg = OptimizerConfig {
            iterations: 30,
            map_budget: Some(1000),
            ..small(strategy, 9)
        };
        let run = || {
            let mut f = make_benchmark("branin", 100, 9).unwrap();
            run_silbo(&mut f, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.best_x, b.best_x);
    }
    let cfg = small(Strategy::BottomUp, 5);
    let mut f1 = make_benchmark("hartmann6", 20, 5).unwrap();
    let mut f2 = make_benchmark("hartmann6", 20, 5).unwrap();
    assert_eq!(
        run_random_search(&mut f1, &cfg).unwrap().rows,
        run_random_search(&mut f2, &cfg).unwrap().rows
    );
}

#[test]
fn random_embedding_never_updates() {
    let mut f = make_benchmark("branin", 100, 3).unwrap();
    let cfg = OptimizerConfig {
        iterations: 50,
        ..small(Strategy::BottomUp, 3)
    };
    let rec = run_random_embedding_bo(&mut f, &cfg).unwrap();
    assert!(rec.rows.iter().all(|r| r.b_generation == 0));
    assert_eq!(rec.total_evals(), cfg.initial_size() + 50);
    assert_monotone(&rec);
    let search_box = zonotope_box(rec.embedding.as_ref().unwrap());
    for row in &rec.rows {
        assert!(search_box.contains(&row.z));
    }
}

#[test]
fn random_embedding_in_square_case() {
    let mut f = FnObjective::new(2, |x: &[f64]| -(x[0] * x[0] + x[1] * x[1]));
    let cfg = OptimizerConfig {
        iterations: 15,
        ..small(Strategy::BottomUp, 8)
    };
    let rec = run_random_embedding_bo(&mut f, &cfg).unwrap();
    let b = rec.embedding.clone().unwrap();
    assert!((&b * b.transpose() - Matrix::identity(2, 2)).norm() < 1e-10);
    assert_monotone(&rec);
}

#[test]
fn acquisitions_stay_inside_current_box() {
    let mut f = make_benchmark("colville", 15, 4).unwrap();
    let cfg = OptimizerConfig {
        r: 4,
        ..small(Strategy::TopDown, 4)
    };
    let rec = run_silbo(&mut f, &cfg).unwrap();
    let last_gen = rec.rows.last().unwrap().b_generation;
    let search_box = zonotope_box(rec.embedding.as_ref().unwrap());
    // Rows after the final update were acquired in the final box.
    for row in rec.rows.iter().filter(|r| r.t > 20) {
        assert_eq!(row.b_generation, last_gen);
        assert!(search_box.contains(&row.z));
        assert!(row.x.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn random_search_accounting() {
    let mut f = make_benchmark("hartmann6", 50, 0).unwrap();
    let cfg = small(Strategy::BottomUp, 0);
    let rec = run_random_search(&mut f, &cfg).unwrap();
    for row in &rec.rows {
        assert_eq!(row.f_evals, cfg.initial_size() + row.t);
    }
    assert_monotone(&rec);
    assert_eq!(rec.best_y, rec.rows.last().unwrap().best);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small(Strategy::TopDown, 12);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: OptimizerConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg, back);
    let partial: OptimizerConfig =
        serde_json::from_str(r#"{"r": 3, "strategy": "top_down"}"#).unwrap();
    assert_eq!(partial.r, 3);
    assert_eq!(partial.n_unlabeled, 50);
}
