mod common;

use proptest::prelude::*;
use sumbiv::duals::dual_lp_solve;
use sumbiv::duals::entropy_star_closed_form;
use sumbiv::exact::brute_force_min;
use sumbiv::solvers::{
    cd_sweep, solve, solve_bcadtr_observed, OrderMode, SolverConfig, SolverId, SolverTrace, WeightsMode,
};
use sumbiv::{Instance, Table};

fn configs(seed: u64) -> Vec<SolverConfig> {
    let mut out = Vec::new();
    for id in SolverId::ALL {
        let mut c = SolverConfig::new(id, 6, seed);
        c.order = OrderMode::Random;
        c.weights = WeightsMode::Random;
        out.push(c);
    }
    out
}

fn strip_time(tr: &SolverTrace) -> Vec<(usize, f64, Option<f64>)> {
    tr.rows.iter().map(|r| (r.t, r.primal_best, r.dual)).collect()
}

fn chain(values: &[[f64; 4]]) -> Instance {
    let n = values.len() + 1;
    let edges = (0..n - 1).map(|i| (i, i + 1)).collect();
    let tables = values.iter().map(|v| Table::new(2, 2, v.to_vec()).unwrap()).collect();
    Instance::new(vec![2; n], edges, tables).unwrap()
}

#[test]
fn config_validation() {
    let inst = chain(&[[0.0, 1.0, 1.0, 0.0]]);
    for id in SolverId::ALL {
        let err = solve(&inst, &SolverConfig::new(id, 0, 0)).unwrap_err();
        assert!(err.is_validation(), "{id:?}");
    }
    let mut c = SolverConfig::new(SolverId::Bcadetr, 3, 0);
    c.eps = 0.0;
    assert!(solve(&inst, &c).unwrap_err().is_validation());
    c.eps = 1e4;
    assert!(solve(&inst, &c).unwrap_err().is_validation());

    let inf =
        Instance::new(vec![2, 2], vec![(0, 1)], vec![Table::new(2, 2, vec![f64::INFINITY, 0.0, 0.0, 1.0]).unwrap()])
            .unwrap();
    for id in [SolverId::Bcadtr, SolverId::Bcadetr, SolverId::Trws, SolverId::TrwsLeg] {
        assert!(solve(&inf, &SolverConfig::new(id, 2, 0)).unwrap_err().is_validation(), "{id:?}");
    }
    // LP with a substituted bound, CD directly
    for id in [SolverId::Cd, SolverId::Lpdlp] {
        let (x, tr) = solve(&inf, &SolverConfig::new(id, 3, 0)).unwrap();
        assert_eq!(tr.best_value(), 0.0, "{id:?}");
        assert_ne!(x, vec![0, 0]);
    }
}

#[test]
fn names_round_trip() {
    for id in SolverId::ALL {
        assert_eq!(id.name().parse::<SolverId>().unwrap(), id);
        assert_eq!(id.is_relaxation(), id != SolverId::Cd);
    }
    assert!("simplex".parse::<SolverId>().is_err());
    assert!("sorted".parse::<OrderMode>().is_err());
    assert_eq!("random".parse::<WeightsMode>().unwrap(), WeightsMode::Random);
}

#[test]
fn single_edge_is_solved_exactly() {
    let inst = chain(&[[3.0, -1.0, 2.0, 5.0]]);
    for id in SolverId::ALL {
        let (x, tr) = solve(&inst, &SolverConfig::new(id, 4, 1)).unwrap();
        assert_eq!(tr.best_value(), -1.0, "{id:?}");
        assert_eq!(x, vec![0, 1], "{id:?}");
        if id.is_relaxation() && id != SolverId::Bcadetr {
            assert!((tr.final_dual().unwrap() + 1.0).abs() < 1e-7, "{id:?}");
        }
    }
}

#[test]
fn lpdlp_single_row() {
    let inst = chain(&[[0.0, 1.0, 1.0, 0.0], [1.0, 0.0, 0.0, 1.0]]);
    let (x, tr) = solve(&inst, &SolverConfig::new(SolverId::Lpdlp, 5, 0)).unwrap();
    assert_eq!(tr.rows.len(), 1);
    assert_eq!(tr.rows[0].t, 1);
    assert_eq!(tr.best_value(), 0.0);
    assert_eq!(inst.evaluate(&x).unwrap(), 0.0);
    assert!(tr.final_dual().unwrap().abs() < 1e-7);
}

#[test]
fn chain_dual_reaches_lp() {
    let inst = chain(&[[0.3, -1.2, 2.0, 0.1], [1.5, 0.0, -0.7, 0.4], [0.2, 0.9, -0.3, 1.1], [0.0, 0.5, 0.5, -2.0]]);
    let (lp, _) = dual_lp_solve(&inst).unwrap();
    let (_, tr) = solve(&inst, &SolverConfig::new(SolverId::Bcadtr, 40, 0)).unwrap();
    assert!((tr.final_dual().unwrap() - lp).abs() < 1e-6, "{:?} vs {lp}", tr.final_dual());
    assert!((tr.best_value() - brute_force_min(&inst).unwrap().min_value).abs() < 1e-12);
}

#[test]
fn entropy_ascent_on_a_star_hits_the_closed_form() {
    let t = |v: [f64; 6]| Table::new(2, 3, v.to_vec()).unwrap();
    let inst = Instance::new(
        vec![2, 3, 3, 3],
        vec![(0, 1), (0, 2), (0, 3)],
        vec![
            t([0.0, 1.0, 2.0, 1.0, 0.5, -1.0]),
            t([2.0, -0.5, 0.0, 0.3, 0.3, 0.3]),
            t([1.0, 1.0, 0.0, -1.0, 2.0, 0.0]),
        ],
    )
    .unwrap();
    let eps = 0.1;
    let closed = entropy_star_closed_form(&inst, 0, eps).unwrap();
    let mut c = SolverConfig::new(SolverId::Bcadetr, 1, 0);
    c.eps = eps;
    let (_, tr) = solve(&inst, &c).unwrap();
    assert!((tr.final_dual().unwrap() - closed.value).abs() < 1e-9, "{:?} vs {}", tr.final_dual(), closed.value);
}

#[test]
fn trace_serialization() {
    let inst = chain(&[[0.0, 1.0, 1.0, 0.0]]);
    let (_, tr) = solve(&inst, &SolverConfig::new(SolverId::Trws, 2, 0)).unwrap();
    let csv = tr.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,wall_ms,primal_best,dual");
    assert_eq!(lines.len(), tr.rows.len() + 1);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(','));
    let json: serde_json::Value = serde_json::from_str(&tr.to_json()).unwrap();
    assert_eq!(json["config"]["solver"], "trws");
    assert_eq!(json["rows"].as_array().unwrap().len(), tr.rows.len());
    assert!(json["rows"][0]["dual"].is_null());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cd_is_exactly_monotone(inst in common::integer_instance(6, 3), seed in any::<u64>()) {
        let mut x = vec![0; inst.n()];
        let order = SolverConfig { order: OrderMode::Random, ..SolverConfig::new(SolverId::Cd, 1, seed) }.vertex_order(inst.n());
        let mut prev = inst.evaluate(&x).unwrap();
        for _ in 0..4 {
            let (values, _) = cd_sweep(&inst, &mut x, &order);
            for v in values {
                prop_assert!(v <= prev);
                prev = v;
            }
        }
        prop_assert_eq!(prev, inst.evaluate(&x).unwrap());
    }

    #[test]
    fn traces_are_deterministic_and_consistent(inst in common::real_instance(5, 3), seed in any::<u64>()) {
        let best = brute_force_min(&inst).unwrap().min_value;
        for c in configs(seed) {
            let (x, tr) = solve(&inst, &c).unwrap();
            let (y, again) = solve(&inst, &c).unwrap();
            prop_assert_eq!(&x, &y);
            prop_assert_eq!(strip_time(&tr), strip_time(&again));
            prop_assert_eq!(inst.evaluate(&x).unwrap(), tr.best_value());
            prop_assert!(tr.best_value() >= best);
            prop_assert!(tr.rows.windows(2).all(|w| w[1].primal_best <= w[0].primal_best && w[1].t == w[0].t + 1));
            if c.solver != SolverId::Bcadetr {
                for d in tr.rows.iter().filter_map(|r| r.dual) {
                    prop_assert!(d <= best + 1e-7 * (1.0 + best.abs()), "{:?}: {} > {}", c.solver, d, best);
                }
            }
        }
    }

    #[test]
    fn bcadtr_blocks_ascend_after_first_sweep(inst in common::real_instance(6, 3), seed in any::<u64>(), random in any::<bool>()) {
        let mut c = SolverConfig::new(SolverId::Bcadtr, 5, seed);
        c.weights = if random { WeightsMode::Random } else { WeightsMode::Uniform };
        c.order = OrderMode::Random;
        let active = (0..inst.n()).filter(|&i| inst.adjacency().degree(i) > 0).count();
        let mut blocks = vec![0.0; inst.n()];
        let mut totals = Vec::new();
        solve_bcadtr_observed(&inst, &c, |i, v| {
            blocks[i] = v;
            totals.push(blocks.iter().sum::<f64>());
        })
        .unwrap();
        for w in totals[active.min(totals.len())..].windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn bcadetr_sweeps_ascend(inst in common::real_instance(6, 3), seed in any::<u64>(), eps in prop::sample::select(vec![0.05, 0.3, 1.0])) {
        let mut c = SolverConfig::new(SolverId::Bcadetr, 6, seed);
        c.eps = eps;
        let (_, tr) = solve(&inst, &c).unwrap();
        let duals: Vec<f64> = tr.rows.iter().filter_map(|r| r.dual).collect();
        for w in duals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-7, "{} then {}", w[0], w[1]);
        }
    }
}
