//! Ready-made example graphs used across tests, benchmarks, and docs.
//!
//! Factor values are seeded uniform draws from `[0.1, 1.0)`, so every table
//! is strictly positive and the graphs are safe for marginal and sampling
//! code paths.

use crate::graph::PlatedFactorGraph;
use crate::rng::{self, ChaCha8Rng};
use crate::tensor::{DimName, NamedTensor};

fn positive(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng::uniform_in(rng, 0.1, 1.0)).collect()
}

/// Random-valued factor over the given plate and variable dims.
pub fn random_factor(
    rng: &mut ChaCha8Rng,
    plates: &[(&str, usize)],
    vars: &[(&str, usize)],
) -> NamedTensor<f64> {
    let mut dims: Vec<(DimName, usize)> =
        plates.iter().map(|(n, s)| (DimName::plate(*n), *s)).collect();
    dims.extend(vars.iter().map(|(n, s)| (DimName::variable(*n), *s)));
    let len = dims.iter().map(|(_, s)| s).product();
    NamedTensor::from_flat(dims, positive(rng, len)).expect("consistent dims")
}

/// A global variable tied to a plate of local variables, with a nested
/// observation plate: `F(X)`, per-`i` `G(Y)`, per-`(i,j)` `H(X, Y)`.
pub fn global_local(i: usize, j: usize, dx: usize, dy: usize, seed: u64) -> PlatedFactorGraph<f64> {
    let mut rng = rng::seeded(seed);
    let mut g = PlatedFactorGraph::new();
    g.add_plate("i", i).unwrap();
    g.add_plate("j", j).unwrap();
    g.add_variable("X", dx, Vec::<String>::new()).unwrap();
    g.add_variable("Y", dy, ["i"]).unwrap();
    g.add_factor("F", random_factor(&mut rng, &[], &[("X", dx)])).unwrap();
    g.add_factor("G", random_factor(&mut rng, &[("i", i)], &[("Y", dy)])).unwrap();
    g.add_factor("H", random_factor(&mut rng, &[("i", i), ("j", j)], &[("X", dx), ("Y", dy)]))
        .unwrap();
    g
}

/// Two plates of variables coupled by one factor replicated over both
/// plates: the minimal intractable model (every `x` copy interacts with
/// every `y` copy).
pub fn grid_coupling(i: usize, j: usize, d: usize, seed: u64) -> PlatedFactorGraph<f64> {
    let mut rng = rng::seeded(seed);
    let mut g = PlatedFactorGraph::new();
    g.add_plate("a", i).unwrap();
    g.add_plate("b", j).unwrap();
    g.add_variable("x", d, ["a"]).unwrap();
    g.add_variable("y", d, ["b"]).unwrap();
    g.add_factor("f", random_factor(&mut rng, &[("a", i), ("b", j)], &[("x", d), ("y", d)]))
        .unwrap();
    g
}

/// Chain of variables whose plate sets step down from `{a, b}` to `{}`:
/// `v{a,b} - w{a} - x{} - y{b} - z{a,b}`. Tractable, and every leaf choice
/// from `{a,b}` through `{}` is exercised.
pub fn plate_chain(i: usize, j: usize, d: usize, seed: u64) -> PlatedFactorGraph<f64> {
    let mut rng = rng::seeded(seed);
    let mut g = PlatedFactorGraph::new();
    g.add_plate("a", i).unwrap();
    g.add_plate("b", j).unwrap();
    g.add_variable("v", d, ["a", "b"]).unwrap();
    g.add_variable("w", d, ["a"]).unwrap();
    g.add_variable("x", d, Vec::<String>::new()).unwrap();
    g.add_variable("y", d, ["b"]).unwrap();
    g.add_variable("z", d, ["a", "b"]).unwrap();
    g.add_factor("f_vw", random_factor(&mut rng, &[("a", i), ("b", j)], &[("v", d), ("w", d)]))
        .unwrap();
    g.add_factor("f_wx", random_factor(&mut rng, &[("a", i)], &[("w", d), ("x", d)])).unwrap();
    g.add_factor("f_x", random_factor(&mut rng, &[], &[("x", d)])).unwrap();
    g.add_factor("f_xy", random_factor(&mut rng, &[("b", j)], &[("x", d), ("y", d)])).unwrap();
    g.add_factor("f_yz", random_factor(&mut rng, &[("a", i), ("b", j)], &[("y", d), ("z", d)]))
        .unwrap();
    g
}

/// [`plate_chain`] plus a factor tying its two ends, which couples the
/// plates and makes the model intractable.
pub fn plate_chain_crossed(i: usize, j: usize, d: usize, seed: u64) -> PlatedFactorGraph<f64> {
    let mut rng = rng::seeded(seed.wrapping_add(1));
    let mut g = plate_chain(i, j, d, seed);
    g.add_factor("f_vz", random_factor(&mut rng, &[("a", i), ("b", j)], &[("v", d), ("z", d)]))
        .unwrap();
    g
}

/// The same graph with every factor entry replaced by its natural log, for
/// log-space semirings.
pub fn log_space(g: &PlatedFactorGraph<f64>) -> PlatedFactorGraph<f64> {
    let mut out = PlatedFactorGraph::new();
    for (p, &size) in g.plates() {
        out.add_plate(p.clone(), size).unwrap();
    }
    for (v, var) in g.variables() {
        out.add_variable(v.clone(), var.domain, var.plates.clone()).unwrap();
    }
    for (f, factor) in g.factors() {
        out.add_factor(f.clone(), factor.tensor().map(|x| x.ln())).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_validate() {
        assert!(global_local(2, 3, 2, 3, 0).validate().is_empty());
        assert!(grid_coupling(2, 2, 2, 0).validate().is_empty());
        assert!(plate_chain(2, 3, 2, 0).validate().is_empty());
        assert!(plate_chain_crossed(2, 3, 2, 0).validate().is_empty());
    }

    #[test]
    fn fixtures_are_seed_deterministic() {
        let a = plate_chain(2, 3, 2, 7);
        let b = plate_chain(2, 3, 2, 7);
        let c = plate_chain(2, 3, 2, 8);
        assert_eq!(a.factor("f_vw").unwrap().tensor(), b.factor("f_vw").unwrap().tensor());
        assert_ne!(a.factor("f_vw").unwrap().tensor(), c.factor("f_vw").unwrap().tensor());
    }

    #[test]
    fn log_space_maps_values() {
        let g = global_local(2, 2, 2, 2, 3);
        let lg = log_space(&g);
        let orig = g.factor("H").unwrap().tensor().to_vec();
        let logged = lg.factor("H").unwrap().tensor().to_vec();
        for (o, l) in orig.iter().zip(&logged) {
            assert!((o.ln() - l).abs() < 1e-15);
        }
    }

    #[test]
    fn tractability_split() {
        assert!(plate_chain(2, 2, 2, 0).detect_forbidden_minor().is_none());
        assert!(plate_chain_crossed(2, 2, 2, 0).detect_forbidden_minor().is_some());
        assert!(grid_coupling(2, 2, 2, 0).detect_forbidden_minor().is_some());
        assert!(global_local(2, 2, 2, 2, 0).detect_forbidden_minor().is_none());
    }
}
