//! Random model generators shared by the integration suites.
//!
//! Not every suite uses every generator.
#![allow(dead_code)]

use std::collections::BTreeSet;

use tve::rng::{self, RngCore};
use tve::tensor::{DimName, NamedTensor};
use tve::Graph64;

pub fn int(rng: &mut rng::ChaCha8Rng, lo: usize, hi: usize) -> usize {
    lo + (rng.next_u64() as usize) % (hi - lo + 1)
}

/// A valid graph drawn from the whole envelope: up to 4 plates of size
/// up to 3, up to 5 variables with domains 2..=3, up to 6 factors.
/// Tractability is whatever it comes out as.
pub fn arbitrary_graph(seed: u64) -> Graph64 {
    let mut r = rng::seeded(seed);
    let mut g = Graph64::new();

    let n_plates = int(&mut r, 0, 4);
    let plate_names: Vec<String> = (0..n_plates).map(|k| format!("p{k}")).collect();
    for name in &plate_names {
        g.add_plate(name, int(&mut r, 1, 3)).unwrap();
    }

    let n_vars = int(&mut r, 1, 5);
    let var_names: Vec<String> = (0..n_vars).map(|k| format!("v{k}")).collect();
    for name in &var_names {
        let plates: Vec<String> = plate_names
            .iter()
            .filter(|_| r.next_u64() % 3 == 0)
            .cloned()
            .collect();
        g.add_variable(name, int(&mut r, 2, 3), plates).unwrap();
    }

    let n_factors = int(&mut r, 1, 6);
    for k in 0..n_factors {
        let mut vars = BTreeSet::new();
        for _ in 0..int(&mut r, 1, 3.min(n_vars)) {
            vars.insert(var_names[int(&mut r, 0, n_vars - 1)].clone());
        }
        let mut plates: BTreeSet<String> = vars
            .iter()
            .flat_map(|v| g.variable(v).unwrap().plates.iter().cloned())
            .collect();
        for p in &plate_names {
            if r.next_u64() % 4 == 0 {
                plates.insert(p.clone());
            }
        }
        let mut dims: Vec<(DimName, usize)> = plates
            .iter()
            .map(|p| (DimName::plate(p), g.plate_size(p).unwrap()))
            .collect();
        for v in &vars {
            dims.push((DimName::variable(v), g.variable(v).unwrap().domain));
        }
        let n: usize = dims.iter().map(|(_, s)| s).product();
        let values: Vec<f64> = (0..n).map(|_| rng::uniform_in(&mut r, 0.1, 1.0)).collect();
        g.add_factor(format!("f{k}"), NamedTensor::from_flat(dims, values).unwrap())
            .unwrap();
    }
    g
}

/// Size of the fully unrolled assignment space.
pub fn ground_terms(g: &Graph64) -> u128 {
    let mut total: u128 = 1;
    for v in g.variables().values() {
        let mut copies: u128 = 1;
        for p in &v.plates {
            copies = copies.saturating_mul(g.plate_size(p).unwrap() as u128);
        }
        let mut dom_pow: u128 = 1;
        for _ in 0..copies.min(200) {
            dom_pow = dom_pow.saturating_mul(v.domain as u128);
        }
        total = total.saturating_mul(dom_pow);
    }
    total
}

/// First graph under `seed`'s retry stream that contracts without error
/// and whose ground joint stays enumerable.
pub fn tractable_graph(seed: u64, max_terms: u128) -> Graph64 {
    for attempt in 0..10_000 {
        let g = arbitrary_graph(rng::stream(seed, attempt).next_u64());
        if ground_terms(&g) <= max_terms && tve::engine::dry_run(&g).is_ok() {
            return g;
        }
    }
    unreachable!("envelope contains tractable graphs");
}

/// A deliberately small model whose ground joint has at most 16 cells,
/// for empirical distribution checks.
pub fn tiny_tractable_graph(seed: u64) -> Graph64 {
    for attempt in 0..10_000 {
        let inner = rng::stream(seed, attempt).next_u64();
        let mut r = rng::seeded(inner);
        let mut g = Graph64::new();
        let with_plate = r.next_u64() % 2 == 0;
        if with_plate {
            g.add_plate("p0", 2).unwrap();
        }
        let n_vars = int(&mut r, 1, 2);
        for k in 0..n_vars {
            let plated = with_plate && r.next_u64() % 2 == 0;
            let plates: Vec<String> =
                if plated { vec!["p0".into()] } else { Vec::new() };
            g.add_variable(format!("v{k}"), 2, plates).unwrap();
        }
        for k in 0..int(&mut r, 1, 2) {
            let mut vars = BTreeSet::new();
            for _ in 0..int(&mut r, 1, n_vars) {
                vars.insert(format!("v{}", int(&mut r, 0, n_vars - 1)));
            }
            let plates: BTreeSet<String> = vars
                .iter()
                .flat_map(|v| g.variable(v).unwrap().plates.iter().cloned())
                .collect();
            let mut dims: Vec<(DimName, usize)> =
                plates.iter().map(|p| (DimName::plate(p), 2)).collect();
            for v in &vars {
                dims.push((DimName::variable(v), 2));
            }
            let n: usize = dims.iter().map(|(_, s)| s).product();
            let values: Vec<f64> =
                (0..n).map(|_| rng::uniform_in(&mut r, 0.1, 1.0)).collect();
            g.add_factor(format!("f{k}"), NamedTensor::from_flat(dims, values).unwrap())
                .unwrap();
        }
        if ground_terms(&g) <= 16 && tve::engine::dry_run(&g).is_ok() {
            return g;
        }
    }
    unreachable!("envelope contains tiny tractable graphs");
}
