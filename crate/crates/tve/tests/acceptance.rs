//! Release gate: one test per shipping criterion, each printed as a
//! single pass/fail line by the harness. Tolerances are pinned here and
//! nowhere else.

mod support;

use std::time::{Duration, Instant};

use tve::adjoint;
use tve::einsum::{self, EinsumSpec};
use tve::engine::{self, EngineError, Options};
use tve::models;
use tve::oracle;
use tve::rng::{self, RngCore};
use tve::semiring::{
    DivideSemiring, LogSumExpProduct, MaxProduct, MaxSemiring, MaxSum, RealSumProduct,
    SampleSemiring, Semiring, SemiringKind,
};
use tve::tensor::DimName;
use tve::Graph64;

const REAL: RealSumProduct<f64> = RealSumProduct::new();
const LOG: LogSumExpProduct<f64> = LogSumExpProduct::new();
const MAXP: MaxProduct<f64> = MaxProduct::new();
const MAXS: MaxSum<f64> = MaxSum::new();

const ORACLE_REL: f64 = 1e-9;
const IDENTITY_REL: f64 = 1e-12;
const RANDOM_SPEC_REL: f64 = 1e-9;
const MARGINAL_REL: f64 = 1e-9;
const TV_BOUND: f64 = 0.02;
const OPS_RATIO: (f64, f64) = (3.4, 4.6);
const SPEEDUP_FACTOR: f64 = 0.6;

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn contract(g: &Graph64) -> f64 {
    engine::tensor_variable_elimination(&REAL, g, &Options::default())
        .unwrap()
        .value()
}

fn contract_log(g: &Graph64) -> f64 {
    engine::tensor_variable_elimination(&LOG, g, &Options::default())
        .unwrap()
        .value()
}

#[test]
fn criterion_1_engine_matches_enumeration_on_500_random_models() {
    let start = Instant::now();
    single_thread(|| {
        for seed in 0..500u64 {
            let g = support::tractable_graph(seed, 30_000);
            let got = contract(&g);
            let want = oracle::brute_plated_sum_product(&REAL, &g).unwrap();
            assert!(
                (got - want).abs() <= ORACLE_REL * want.abs(),
                "seed {seed}: engine {got} vs enumeration {want}"
            );
        }
    });
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "500 models took {elapsed:?}");
}

#[test]
fn criterion_2_planner_refusal_coincides_with_minor_detection() {
    let (mut tractable, mut intractable) = (0usize, 0usize);
    for seed in 0..1000u64 {
        let g = support::arbitrary_graph(seed);
        let minor = g.detect_forbidden_minor();
        match engine::dry_run(&g) {
            Ok(_) => {
                assert!(minor.is_none(), "seed {seed}: planner ok but minor {minor:?}");
                tractable += 1;
            }
            Err(EngineError::Intractable { .. }) => {
                assert!(minor.is_some(), "seed {seed}: planner refused, no minor found");
                intractable += 1;
            }
            Err(e) => panic!("seed {seed}: unexpected {e:?}"),
        }
    }
    assert!(tractable > 0 && intractable > 0, "{tractable} vs {intractable}");
}

#[test]
fn criterion_3_reference_models_behave_as_documented() {
    // shared global with per-slice locals: contracts, and fully unrolled
    // at 2x3 it has 3 variables, 9 factors, 15 edges
    let g = models::global_local(2, 3, 2, 2, 301);
    contract(&g);
    let u = g.unroll_all().unwrap();
    assert_eq!(u.variables.len(), 3);
    assert_eq!(u.factors.len(), 9);
    assert_eq!(u.edges.len(), 15);

    // two crossed plates coupled through one factor: refused, and the
    // witness names the crossing path
    let rbm = models::grid_coupling(2, 2, 2, 302);
    match engine::dry_run(&rbm) {
        Err(EngineError::Intractable { witness: Some(w), .. }) => {
            assert_eq!((w.plate_a.as_str(), w.plate_b.as_str()), ("a", "b"));
            assert_eq!(w.endpoint_a.variable, "x");
            assert_eq!(w.endpoint_b.variable, "y");
            assert_eq!(w.path, vec!["f".to_string()]);
        }
        other => panic!("expected refusal with witness, got {other:?}"),
    }

    // five-variable two-plate chain: the exact elimination trace
    let chain = models::plate_chain(2, 3, 2, 303);
    let schedule = engine::dry_run(&chain).unwrap();
    assert_eq!(schedule.iterations, 4);
    let lines: Vec<String> = schedule.steps.iter().map(|s| s.to_string()).collect();
    assert_eq!(
        lines,
        vec![
            "L={a,b} eliminate={v} produce_vars={w} product_reduce={b}",
            "L={a,b} eliminate={z} produce_vars={y} product_reduce={a}",
            "L={a} eliminate={w} produce_vars={x} product_reduce={a}",
            "L={b} eliminate={y} produce_vars={x} product_reduce={b}",
            "L={} eliminate={x} produce_vars={} product_reduce={}",
        ]
    );

    // closing the chain into a cycle across both plates is refused
    let crossed = models::plate_chain_crossed(2, 3, 2, 304);
    assert!(matches!(
        engine::dry_run(&crossed),
        Err(EngineError::Intractable { .. })
    ));
}

fn random_operand(shape: &[usize], r: &mut rng::ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
    let n: usize = shape.iter().product();
    (shape.to_vec(), (0..n).map(|_| rng::uniform_in(r, 0.1, 1.0)).collect())
}

fn einsum_scalar(s: &EinsumSpec, ops: &[(Vec<usize>, Vec<f64>)]) -> f64 {
    *einsum::plated_einsum(&REAL, s, ops).unwrap().item().unwrap()
}

fn random_spec(r: &mut rng::ChaCha8Rng) -> (EinsumSpec, Vec<Vec<usize>>) {
    let plate_syms = ['i', 'j'];
    let var_syms = ['w', 'x', 'y', 'z'];
    loop {
        let n_ops = support::int(r, 1, 3);
        let mut operands = Vec::new();
        for _ in 0..n_ops {
            let mut syms = String::new();
            for c in plate_syms {
                if r.next_u64() % 3 == 0 {
                    syms.push(c);
                }
            }
            for c in var_syms {
                if r.next_u64() % 3 == 0 {
                    syms.push(c);
                }
            }
            if !syms.is_empty() {
                operands.push(syms);
            }
        }
        if operands.is_empty() {
            continue;
        }
        let text = format!("{}->", operands.join(","));
        let spec = einsum::parse(&text, "ij").unwrap();
        let shapes: Vec<Vec<usize>> =
            operands.iter().map(|o| o.chars().map(|_| 2).collect()).collect();
        let skeleton = einsum::infer_plate_sets(&spec, &shapes).unwrap();
        if engine::dry_run(&skeleton).is_ok() {
            return (spec, shapes);
        }
    }
}

#[test]
fn criterion_4_einsum_identities_hold_against_unrolled_forms() {
    let spec_a = einsum::parse("xy,iyz->xz", "i").unwrap();
    let unrolled_a = einsum::parse("xy,yz,yz,yz->xz", "").unwrap();
    let order = [DimName::variable("x"), DimName::variable("z")];
    let mut r = rng::seeded(401);
    for rep in 0..100 {
        let f = random_operand(&[2, 2], &mut r);
        let g = random_operand(&[3, 2, 2], &mut r);
        let plated = einsum::plated_einsum(&REAL, &spec_a, &[f.clone(), g.clone()])
            .unwrap()
            .export(&order)
            .unwrap();
        let mut ops = vec![f];
        for i in 0..3 {
            ops.push((vec![2, 2], g.1[i * 4..(i + 1) * 4].to_vec()));
        }
        let flat = einsum::plated_einsum(&REAL, &unrolled_a, &ops)
            .unwrap()
            .export(&order)
            .unwrap();
        for (a, b) in plated.iter().zip(&flat) {
            assert!((a - b).abs() <= IDENTITY_REL * b.abs(), "rep {rep}: {a} vs {b}");
        }
    }

    let spec_b = einsum::parse("x,iy,ijxy->", "ij").unwrap();
    let unrolled_b = einsum::parse("x,a,b,xa,xa,xa,xb,xb,xb->", "").unwrap();
    for rep in 0..100 {
        let f = random_operand(&[2], &mut r);
        let g = random_operand(&[2, 2], &mut r);
        let h = random_operand(&[2, 3, 2, 2], &mut r);
        let plated = einsum_scalar(&spec_b, &[f.clone(), g.clone(), h.clone()]);
        let mut ops = vec![f, (vec![2], g.1[..2].to_vec()), (vec![2], g.1[2..].to_vec())];
        for i in 0..2 {
            for j in 0..3 {
                let base = (i * 3 + j) * 4;
                ops.push((vec![2, 2], h.1[base..base + 4].to_vec()));
            }
        }
        let flat = einsum_scalar(&unrolled_b, &ops);
        assert!(
            (plated - flat).abs() <= IDENTITY_REL * flat.abs(),
            "rep {rep}: {plated} vs {flat}"
        );
    }

    let mut r = rng::seeded(402);
    for rep in 0..200 {
        let (spec, shapes) = random_spec(&mut r);
        let ops: Vec<_> = shapes.iter().map(|s| random_operand(s, &mut r)).collect();
        let got = einsum_scalar(&spec, &ops);
        let g = data_graph(&spec, &ops);
        let want = oracle::brute_plated_sum_product(&REAL, &g).unwrap();
        assert!(
            (got - want).abs() <= RANDOM_SPEC_REL * want.abs(),
            "rep {rep} spec {spec}: {got} vs {want}"
        );
    }
}

/// The factor graph a spec describes, carrying the operand values, built
/// through the public structural API rather than the contraction path.
fn data_graph(spec: &EinsumSpec, ops: &[(Vec<usize>, Vec<f64>)]) -> Graph64 {
    let shapes: Vec<Vec<usize>> = ops.iter().map(|(s, _)| s.clone()).collect();
    let shape_graph = einsum::infer_plate_sets(spec, &shapes).unwrap();
    let mut g = Graph64::new();
    for (name, size) in shape_graph.plates() {
        g.add_plate(name, *size).unwrap();
    }
    for (name, v) in shape_graph.variables() {
        g.add_variable(name, v.domain, v.plates.iter().cloned()).unwrap();
    }
    for (k, syms) in spec.inputs().iter().enumerate() {
        let dims: Vec<(DimName, usize)> = syms
            .iter()
            .zip(&shapes[k])
            .map(|(c, &extent)| {
                let name = c.to_string();
                let d = if spec.is_plate(*c) {
                    DimName::plate(name)
                } else {
                    DimName::variable(name)
                };
                (d, extent)
            })
            .collect();
        g.add_factor(
            format!("op{k}"),
            tve::tensor::NamedTensor::from_flat(dims, ops[k].1.clone()).unwrap(),
        )
        .unwrap();
    }
    g
}

#[test]
fn criterion_5_adjoint_queries_match_enumeration() {
    for seed in 0..200u64 {
        let g = support::tractable_graph(seed.wrapping_add(7_000), 30_000);

        let (m, total) = adjoint::marginals(&REAL, &g).unwrap();
        let (brute, brute_total) = oracle::brute_marginals(&REAL, &g).unwrap();
        assert!((total - brute_total).abs() <= MARGINAL_REL * brute_total.abs());
        for (var, t) in m.iter() {
            let got = t.to_vec();
            let want: Vec<f64> =
                brute[var].to_vec().iter().map(|x| x / brute_total).collect();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= MARGINAL_REL, "seed {seed} var {var}");
            }
        }

        let best = adjoint::map_assignment(&MAXP, &g).unwrap();
        let (_, brute_best) = oracle::brute_map(&MAXP, &g).unwrap();
        assert_eq!(best.score, brute_best, "seed {seed}: MAP scores differ");
    }

    for k in 0..20u64 {
        let g = support::tiny_tractable_graph(k.wrapping_add(8_000));
        let n = 100_000usize;
        let samples = adjoint::sample(&REAL, &g, k, n).unwrap();
        let rerun = adjoint::sample(&REAL, &g, k, 3).unwrap();
        assert_eq!(&samples[..3], &rerun[..], "graph {k}: seed determinism");

        let table = oracle::brute_joint(&REAL, &g).unwrap();
        let mut counts = vec![0usize; table.weights.len()];
        for s in &samples {
            let flat: Vec<usize> = table
                .vars
                .iter()
                .map(|gv| {
                    let idx: Vec<(DimName, usize)> = gv
                        .cell
                        .iter()
                        .map(|(p, i)| (DimName::plate(p), *i))
                        .collect();
                    *s.indices[&gv.name].get(&idx).unwrap()
                })
                .collect();
            counts[table.index_of(&flat)] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&table.weights)
            .map(|(c, w)| (*c as f64 / n as f64 - w / table.total).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < TV_BOUND, "graph {k}: total variation {tv}");
    }
}

#[test]
fn criterion_6_cost_grows_linearly_in_the_plate_box() {
    let ops_at = |k: usize| {
        let g = models::plate_chain(k, k, 32, 601);
        engine::dry_run(&g).unwrap().total_ops as f64
    };
    let counts: Vec<f64> = [2usize, 4, 8, 16, 32].iter().map(|&k| ops_at(k)).collect();
    for (idx, pair) in counts.windows(2).enumerate() {
        let ratio = pair[1] / pair[0];
        // doubling both plate sizes quadruples the work once past setup
        if [2usize, 4, 8, 16][idx] >= 8 {
            assert!(
                ratio >= OPS_RATIO.0 && ratio <= OPS_RATIO.1,
                "ratio at doubling {idx}: {ratio}"
            );
        }
    }

    // weights this size overflow a linear-space f64, so time the log-space
    // contraction, which is also how models this large get used
    let g = models::log_space(&models::plate_chain(32, 32, 32, 602));
    let start = Instant::now();
    let value = single_thread(|| contract_log(&g));
    let elapsed = start.elapsed();
    assert!(value.is_finite());
    assert!(elapsed < Duration::from_secs(10), "largest size took {elapsed:?}");
}

#[test]
fn criterion_7_thread_count_never_changes_results_and_pays_off() {
    let g = models::log_space(&models::plate_chain(32, 32, 32, 701));
    let pool = |n: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
    };
    let pools = [pool(1), pool(2), pool(8)];

    let runs: Vec<_> = pools
        .iter()
        .map(|p| {
            p.install(|| {
                engine::tensor_variable_elimination(&LOG, &g, &Options::default()).unwrap()
            })
        })
        .collect();
    let bits = runs[0].value().to_bits();
    for run in &runs {
        assert_eq!(run.value().to_bits(), bits, "results differ across thread counts");
        assert_eq!(
            run.schedule.total_ops, runs[0].schedule.total_ops,
            "op totals differ across thread counts"
        );
    }

    let time_in = |p: &rayon::ThreadPool| {
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            p.install(|| contract_log(&g));
            best = best.min(start.elapsed().as_secs_f64());
        }
        best
    };
    let t1 = time_in(&pools[0]);
    let t8 = time_in(&pools[2]);
    eprintln!(
        "single-thread {t1:.4}s, 8-thread {t8:.4}s, ratio {:.2}, host parallelism {:?}",
        t8 / t1,
        std::thread::available_parallelism()
    );
    assert!(
        t8 <= SPEEDUP_FACTOR * t1,
        "8 threads took {t8:.4}s vs {t1:.4}s single-threaded (ratio {:.2}, need <= {SPEEDUP_FACTOR})",
        t8 / t1
    );
}

fn law_triples(kind: SemiringKind, n: usize, seed: u64) -> Vec<(f64, f64, f64)> {
    let mut r = rng::seeded(seed);
    let value = |r: &mut rng::ChaCha8Rng| {
        let x = if r.next_u64() % 10 == 0 { 0.0 } else { rng::uniform_in(r, 0.0, 2.0) };
        if kind.log_carrier() {
            x.ln()
        } else {
            x
        }
    };
    (0..n).map(|_| (value(&mut r), value(&mut r), value(&mut r))).collect()
}

fn check_semiring_laws<S: Semiring<Elem = f64>>(s: &S, triples: &[(f64, f64, f64)]) {
    let (zero, one) = (s.zero(), s.one());
    assert!(s.is_zero(&zero));
    assert!(!s.is_zero(&one));
    for &(a, b, c) in triples {
        assert!(s.approx_eq(&s.plus(&a, &b), &s.plus(&b, &a)));
        assert!(s.approx_eq(&s.times(&a, &b), &s.times(&b, &a)));
        assert!(s.approx_eq(&s.plus(&s.plus(&a, &b), &c), &s.plus(&a, &s.plus(&b, &c))));
        assert!(s.approx_eq(&s.times(&s.times(&a, &b), &c), &s.times(&a, &s.times(&b, &c))));
        assert!(s.approx_eq(&s.plus(&a, &zero), &a));
        assert!(s.approx_eq(&s.times(&a, &one), &a));
        assert!(s.is_zero(&s.times(&a, &zero)));
        assert!(s.approx_eq(
            &s.times(&a, &s.plus(&b, &c)),
            &s.plus(&s.times(&a, &b), &s.times(&a, &c))
        ));
    }
    for k in 0..6 {
        let mut manual = s.zero();
        for _ in 0..k {
            manual = s.plus(&manual, &s.one());
        }
        assert!(s.approx_eq(&s.sum_of_ones(k), &manual));
    }
}

fn check_divide_laws<S: DivideSemiring<Elem = f64>>(s: &S, triples: &[(f64, f64, f64)]) {
    for &(a, b, _) in triples {
        if !s.is_zero(&b) {
            assert!(s.approx_eq(&s.divide(&s.times(&a, &b), &b), &a));
        }
        assert!(s.is_zero(&s.divide(&a, &s.zero())));
    }
}

fn check_max_laws<S: MaxSemiring<Elem = f64>>(s: &S, triples: &[(f64, f64, f64)]) {
    for &(a, b, _) in triples {
        assert!(!s.beats(&a, &a));
        if s.beats(&a, &b) {
            assert!(!s.beats(&b, &a));
            assert_eq!(s.plus(&a, &b), a);
        }
    }
}

fn check_draw_laws<S: SampleSemiring<Elem = f64>>(s: &S, triples: &[(f64, f64, f64)]) {
    for &(a, b, c) in triples {
        let weights = [a, b, c];
        if weights.iter().all(|w| s.is_zero(w)) {
            continue;
        }
        for unit in [0.0, 0.25, 0.5, 0.999_999] {
            let idx = s.draw(&weights, unit);
            assert!(idx < weights.len());
            assert!(!s.is_zero(&weights[idx]), "drew a zero-weight bucket");
        }
    }
}

#[test]
fn criterion_8_semiring_laws_and_loop_invariant() {
    let n = 10_000;
    for kind in SemiringKind::ALL {
        let triples = law_triples(kind, n, 801 + kind as u64);
        match kind {
            SemiringKind::Real => {
                check_semiring_laws(&REAL, &triples);
                check_divide_laws(&REAL, &triples);
                check_draw_laws(&REAL, &triples);
            }
            SemiringKind::Log => {
                check_semiring_laws(&LOG, &triples);
                check_divide_laws(&LOG, &triples);
                check_draw_laws(&LOG, &triples);
            }
            SemiringKind::MaxProd => {
                check_semiring_laws(&MAXP, &triples);
                check_max_laws(&MAXP, &triples);
            }
            SemiringKind::MaxSum => {
                check_semiring_laws(&MAXS, &triples);
                check_max_laws(&MAXS, &triples);
            }
        }
    }

    let opts = Options { check_loop_invariant: true };
    for seed in 0..50u64 {
        let g = support::tractable_graph(seed.wrapping_add(9_000), 10_000);
        engine::tensor_variable_elimination(&REAL, &g, &opts).unwrap();
    }
}
