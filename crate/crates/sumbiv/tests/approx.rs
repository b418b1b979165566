use proptest::prelude::*;
use sumbiv::approx::{
    free_lunch_pair, full_edges, is_sum_of_bivariates, l2_project, null_decompose, pair_marginal_sum, ApproxError,
    BivariateDecomposition, DenseFunction, DEFAULT_MEMBERSHIP_TOL, FREE_LUNCH_CYCLE,
};
use sumbiv::exact::decode;
use sumbiv::Table;

fn grid(domains: &[usize]) -> Vec<Vec<usize>> {
    let size: usize = domains.iter().product();
    (0..size as u64).map(|i| decode(domains, i)).collect()
}

/// Residual of projecting onto the span of the indicator columns, one per table entry.
fn design_residual(g: &DenseFunction, edges: &[(usize, usize)]) -> f64 {
    let pts = grid(&g.domains);
    let mut cols = Vec::new();
    for &(k, l) in edges {
        for a in 0..g.domains[k] {
            for b in 0..g.domains[l] {
                cols.push((k, l, a, b));
            }
        }
    }
    // Gram-Schmidt with reorthogonalization; dependent columns are dropped.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for &(k, l, a, b) in &cols {
        let mut v: Vec<f64> = pts.iter().map(|x| if x[k] == a && x[l] == b { 1.0 } else { 0.0 }).collect();
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = q.iter().zip(&v).map(|(p, r)| p * r).sum();
                v.iter_mut().zip(q).for_each(|(r, p)| *r -= d * p);
            }
        }
        let norm = v.iter().map(|r| r * r).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|r| r / norm).collect());
        }
    }
    let mut y = g.values.clone();
    for _ in 0..2 {
        for q in &basis {
            let d: f64 = q.iter().zip(&y).map(|(p, r)| p * r).sum();
            y.iter_mut().zip(q).for_each(|(r, p)| *r -= d * p);
        }
    }
    y.iter().map(|r| r * r).sum::<f64>().sqrt()
}

fn dense_strategy(max_n: usize, max_k: usize) -> impl Strategy<Value = DenseFunction> {
    prop::collection::vec(1..=max_k, 2..=max_n).prop_flat_map(|domains| {
        let size: usize = domains.iter().product();
        prop::collection::vec(-3.0..3.0f64, size).prop_map(move |v| DenseFunction::new(domains.clone(), v).unwrap())
    })
}

#[test]
fn marginal_sum_examples() {
    let c = DenseFunction::new(vec![2; 3], vec![1.5; 8]).unwrap();
    for (k, l) in full_edges(3) {
        assert_eq!(pair_marginal_sum(&c, k, l).unwrap().data(), &[3.0; 4]);
    }
    let ind = DenseFunction::from_fn(vec![2; 3], |x| if x.iter().all(|&v| v == 1) { 1.0 } else { 0.0 }).unwrap();
    assert_eq!(pair_marginal_sum(&ind, 0, 2).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
    assert!(matches!(pair_marginal_sum(&c, 2, 1), Err(ApproxError::BadPair(2, 1))));
    assert!(matches!(pair_marginal_sum(&c, 0, 3), Err(ApproxError::BadPair(0, 3))));
}

#[test]
fn triple_product_residual() {
    let g = DenseFunction::from_fn(vec![2; 3], |x| (x[0] * x[1] * x[2]) as f64).unwrap();
    let (_, r) = l2_project(&g, &full_edges(3)).unwrap();
    assert!((r - design_residual(&g, &full_edges(3))).abs() < 1e-10);
    assert!((r - 8f64.sqrt() / 8.0).abs() < 1e-10);
}

#[test]
fn membership_of_counterexample_pair() {
    let (f, g) = free_lunch_pair();
    assert_eq!(f.domains, vec![2; 6]);
    let edges = full_edges(6);
    assert!(is_sum_of_bivariates(&f, &edges, DEFAULT_MEMBERSHIP_TOL).unwrap());
    assert!(!is_sum_of_bivariates(&g, &edges, DEFAULT_MEMBERSHIP_TOL).unwrap());
    let (_, r) = l2_project(&g, &edges).unwrap();
    assert!(r > 1e-3);
    // the permutation fixes the all-zero point and cycles the other 63
    let mut seen = FREE_LUNCH_CYCLE.to_vec();
    seen.sort_unstable();
    seen.dedup();
    assert!(seen.len() >= 63);
    assert_eq!(g.values[0], f.values[0]);
}

#[test]
fn constants_are_members() {
    let c = DenseFunction::new(vec![3, 2, 2], vec![-2.5; 12]).unwrap();
    assert!(is_sum_of_bivariates(&c, &[(0, 2)], DEFAULT_MEMBERSHIP_TOL).unwrap());
}

#[test]
fn dense_function_validation_and_json() {
    assert!(DenseFunction::new(vec![2, 2], vec![0.0; 3]).is_err());
    assert!(DenseFunction::new(vec![2], vec![0.0, f64::NAN]).is_err());
    let f = DenseFunction::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
    assert_eq!(DenseFunction::from_json(&f.to_json()).unwrap(), f);
    assert!(DenseFunction::from_json(r#"{"domains": [1], "values": [0], "x": 1}"#).is_err());
}

#[test]
fn null_decompose_examples() {
    let zero =
        BivariateDecomposition { domains: vec![2; 3], edges: full_edges(3), tables: vec![Table::filled(2, 2, 0.0); 3] };
    let p = null_decompose(&zero).unwrap();
    assert!(p.rho_vertex.iter().all(|&v| v == 0.0));

    // f01 = a − b, f02 = −a, f12 = b
    let t = |f: fn(usize, usize) -> f64| Table::from_fn(2, 2, f);
    let d = BivariateDecomposition {
        domains: vec![2; 3],
        edges: full_edges(3),
        tables: vec![t(|a, b| a as f64 - b as f64), t(|a, _| -(a as f64)), t(|b, _| b as f64)],
    };
    let p = null_decompose(&d).unwrap();
    for (e, &(i, j)) in d.edges.iter().enumerate() {
        for a in 0..2 {
            for b in 0..2 {
                let sum = p.rho_pair[e].0[a] + p.rho_pair[e].1[b];
                assert!((sum - d.tables[e].get(a, b)).abs() < 1e-12, "edge ({i},{j})");
            }
        }
    }
    assert!(p.rho_vertex.iter().sum::<f64>().abs() < 1e-12);

    let mut bad = d.clone();
    bad.tables[0].set(1, 1, 5.0);
    assert!(matches!(null_decompose(&bad), Err(ApproxError::NotNull(_))));
    let partial =
        BivariateDecomposition { domains: vec![2; 3], edges: vec![(0, 1)], tables: vec![Table::filled(2, 2, 0.0)] };
    assert_eq!(null_decompose(&partial), Err(ApproxError::Unsupported));
}

/// Expanded marginal of `F = Σ f_ij` at `(k, l)` for the full graph over
/// equal domain size `m` and `n ≥ 4`.
fn expanded_marginal(d: &BivariateDecomposition, m: usize, k: usize, l: usize, a: usize, b: usize) -> f64 {
    let n = d.domains.len();
    let table = |i: usize, j: usize| &d.tables[d.edges.iter().position(|&e| e == (i, j)).unwrap()];
    let bar1 = |i: usize, j: usize, s: usize| (0..m).map(|x| table(i, j).get(x, s)).sum::<f64>();
    let bar2 = |i: usize, j: usize, s: usize| (0..m).map(|x| table(i, j).get(s, x)).sum::<f64>();
    let barbar = |i: usize, j: usize| table(i, j).data().iter().sum::<f64>();
    let mf = m as f64;
    let mut mid = 0.0;
    for j in (0..n).filter(|&j| j != k && j != l) {
        mid += if j < k {
            bar1(j, k, a) + bar1(j, l, b)
        } else if j < l {
            bar2(k, j, a) + bar1(j, l, b)
        } else {
            bar2(k, j, a) + bar2(l, j, b)
        };
    }
    let mut rest = 0.0;
    for &(i, j) in &d.edges {
        if ![i, j].iter().any(|v| *v == k || *v == l) {
            rest += barbar(i, j);
        }
    }
    mf.powi(n as i32 - 2) * table(k, l).get(a, b) + mf.powi(n as i32 - 3) * mid + mf.powi(n as i32 - 4) * rest
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginal_sum_matches_loop(g in dense_strategy(4, 3), k in 0usize..4, l in 0usize..4) {
        prop_assume!(k < l && l < g.domains.len());
        let t = pair_marginal_sum(&g, k, l).unwrap();
        let mut direct = Table::filled(g.domains[k], g.domains[l], 0.0);
        for (x, v) in grid(&g.domains).iter().zip(&g.values) {
            direct.set(x[k], x[l], direct.get(x[k], x[l]) + v);
        }
        for (p, q) in t.data().iter().zip(direct.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_residual_is_orthogonal(g in dense_strategy(4, 3), mask in prop::collection::vec(any::<bool>(), 6)) {
        let edges: Vec<_> = full_edges(g.domains.len()).into_iter().zip(mask).filter(|(_, m)| *m).map(|(e, _)| e).collect();
        let (d, r) = l2_project(&g, &edges).unwrap();
        let approx = d.to_dense().unwrap();
        let resid = DenseFunction::new(g.domains.clone(), g.values.iter().zip(&approx.values).map(|(a, b)| a - b).collect()).unwrap();
        prop_assert!((resid.norm() - r).abs() < 1e-9);
        for &(k, l) in &edges {
            let m = pair_marginal_sum(&resid, k, l).unwrap();
            prop_assert!(m.data().iter().all(|v| v.abs() <= 1e-8 * g.norm().max(1.0)));
        }
        prop_assert!((r - design_residual(&g, &edges)).abs() <= 1e-8 * g.norm().max(1.0));

        // idempotence
        let (_, r2) = l2_project(&approx, &edges).unwrap();
        prop_assert!(r2 <= 1e-10 * approx.norm().max(1.0));
    }

    #[test]
    fn expanded_first_order_condition(m in 2usize..=3, values in prop::collection::vec(-2.0..2.0f64, 81)) {
        let domains = vec![m; 4];
        let g = DenseFunction::new(domains, values[..m.pow(4)].to_vec()).unwrap();
        let edges = full_edges(4);
        let (d, _) = l2_project(&g, &edges).unwrap();
        for &(k, l) in &edges {
            let gm = pair_marginal_sum(&g, k, l).unwrap();
            for a in 0..m {
                for b in 0..m {
                    let e = expanded_marginal(&d, m, k, l, a, b);
                    prop_assert!((gm.get(a, b) - e).abs() <= 1e-8 * g.norm().max(1.0));
                }
            }
        }
    }
}
