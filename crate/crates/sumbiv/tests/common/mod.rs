#![allow(dead_code)]

use proptest::prelude::*;
use sumbiv::{Instance, Table};

/// Instances with `n` in `1..=max_n`, domains in `1..=max_k`, a random edge
/// subset and entries drawn from `values`.
pub fn instance_with(
    max_n: usize,
    max_k: usize,
    values: impl Strategy<Value = f64> + Clone + 'static,
) -> impl Strategy<Value = Instance> {
    (1..=max_n)
        .prop_flat_map(move |n| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            (prop::collection::vec(1..=max_k, n), prop::sample::subsequence(pairs.clone(), 0..=pairs.len()))
        })
        .prop_flat_map(move |(domains, edges)| {
            let shapes: Vec<usize> = edges.iter().map(|&(i, j)| domains[i] * domains[j]).collect();
            let tables = shapes.iter().map(|&s| prop::collection::vec(values.clone(), s)).collect::<Vec<_>>();
            (Just(domains), Just(edges), tables)
        })
        .prop_map(|(domains, edges, data)| {
            let tables =
                edges.iter().zip(data).map(|(&(i, j), d)| Table::new(domains[i], domains[j], d).unwrap()).collect();
            Instance::new(domains, edges, tables).unwrap()
        })
}

pub fn real_instance(max_n: usize, max_k: usize) -> impl Strategy<Value = Instance> {
    instance_with(max_n, max_k, -5.0..5.0f64)
}

/// Small integer entries, so that sums are exact in floating point.
pub fn integer_instance(max_n: usize, max_k: usize) -> impl Strategy<Value = Instance> {
    instance_with(max_n, max_k, (-4i32..=4).prop_map(f64::from))
}

/// Random forests: each vertex `v ≥ 1` attaches to an earlier vertex or not.
pub fn forest(max_n: usize, max_k: usize) -> impl Strategy<Value = Instance> {
    (1..=max_n)
        .prop_flat_map(move |n| {
            let parents = (1..n).map(|v| prop::option::weighted(0.8, 0..v)).collect::<Vec<_>>();
            (prop::collection::vec(1..=max_k, n), parents)
        })
        .prop_flat_map(|(domains, parents)| {
            let edges: Vec<(usize, usize)> =
                parents.iter().enumerate().filter_map(|(v, p)| p.map(|p| (p, v + 1))).collect();
            let tables = edges
                .iter()
                .map(|&(i, j)| prop::collection::vec(-5.0..5.0f64, domains[i] * domains[j]))
                .collect::<Vec<_>>();
            (Just(domains), Just(edges), tables)
        })
        .prop_map(|(domains, edges, data)| {
            let tables =
                edges.iter().zip(data).map(|(&(i, j), d)| Table::new(domains[i], domains[j], d).unwrap()).collect();
            Instance::new(domains, edges, tables).unwrap()
        })
}

pub fn assignment_for(inst: &Instance) -> impl Strategy<Value = Vec<usize>> {
    inst.domains().iter().map(|&k| 0..k).collect::<Vec<_>>()
}
