//! `tve`: load a model file, run a query, print the answer.
//!
//! Exit codes are part of the contract, so scripts can branch on them:
//! 0 success, 1 command-line usage, 2 intractable model, 3 invalid input
//! or an unsupported query. Error messages go to standard error; query
//! answers go to standard output.
//!
//! Semiring resolution, per query: an explicit `--semiring` flag wins,
//! then the model file's `semiring` field, then the subcommand default
//! (`real` for `contract` and `einsum`, `log` for `marginals` and
//! `sample`). `map` lifts sum-product choices to the matching max
//! algebra. When the chosen algebra's carrier differs from the file's
//! encoding, factor values are re-encoded (`ln` going real to log, `exp`
//! the other way), so a linear-space model file can be queried in log
//! space without editing it.

pub mod model;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use tve::adjoint::{self, AdjointError, Assignment, MarginalSet};
use tve::einsum::{self, EinsumError};
use tve::engine::{self, EngineError, Options, Run};
use tve::oracle::{self, OracleError};
use tve::semiring::{DivideSemiring, MaxSemiring, Semiring, SemiringKind};
use tve::tensor::{pointwise_divide, reduce_plus, DimName, TensorError};
use tve::{models, Graph64, Log64, MaxProd64, MaxSum64, NamedTensor, Real64};

use model::ModelFile;

/// A failed command: process exit code plus a message for stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = if matches!(e, EngineError::Intractable { .. }) { 2 } else { 3 };
        Failure { code, message: e.to_string() }
    }
}

impl From<AdjointError> for Failure {
    fn from(e: AdjointError) -> Self {
        match e {
            AdjointError::Engine(inner) => inner.into(),
            other => Failure::validation(other.to_string()),
        }
    }
}

impl From<EinsumError> for Failure {
    fn from(e: EinsumError) -> Self {
        match e {
            EinsumError::Engine(inner) => inner.into(),
            other => Failure::validation(other.to_string()),
        }
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        Failure::validation(e.to_string())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure::validation(format!("oracle cross-check failed to run: {e}"))
    }
}

#[derive(Parser)]
#[command(name = "tve", version, about = "Exact inference on plated factor graphs")]
struct Cli {
    /// Worker threads for tensor kernels (default: one per core)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Contract a model to its total value
    Contract {
        model: PathBuf,
        #[arg(long)]
        semiring: Option<SemiringKind>,
        /// Cross-check the answer against brute-force enumeration
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Contract raw tensors given a spec with plate symbols
    Einsum {
        /// Spec such as "xy,iyz->xz"; one operand per comma
        #[arg(long)]
        spec: String,
        /// Symbols that are plates, e.g. "ij"
        #[arg(long, default_value = "")]
        plates: String,
        #[arg(long)]
        semiring: Option<SemiringKind>,
        /// Operand files: JSON nested arrays, or binary .ten
        #[arg(required = true)]
        tensors: Vec<PathBuf>,
    },
    /// Per-variable marginals and the partition value
    Marginals {
        model: PathBuf,
        #[arg(long)]
        semiring: Option<SemiringKind>,
        /// Skip the per-slice normalization
        #[arg(long)]
        unnormalized: bool,
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Highest-scoring joint assignment
    Map {
        model: PathBuf,
        #[arg(long)]
        semiring: Option<SemiringKind>,
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Draw exact joint samples
    Sample {
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        semiring: Option<SemiringKind>,
    },
    /// Report whether the model admits a tractable schedule
    Check { model: PathBuf },
    /// Time contractions over a range of plate sizes, printing CSV
    Bench {
        /// Benchmark model family; "chain" is the only one
        #[arg(long, default_value = "chain")]
        model: String,
        /// Plate sizes to run, smallest first
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 32)]
        domain: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fail unless the op count grows linearly in the plate box
        #[arg(long)]
        assert_linear: bool,
    },
}

/// Parse arguments, run the chosen command, and return the process exit
/// code. Never panics on user input; never exits by itself.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.cmd)),
            Err(e) => Err(Failure::validation(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(&cli.cmd),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: &Cmd) -> Result<i32, Failure> {
    match cmd {
        Cmd::Contract { model, semiring, oracle } => cmd_contract(model, *semiring, *oracle),
        Cmd::Einsum { spec, plates, semiring, tensors } => {
            cmd_einsum(spec, plates, *semiring, tensors)
        }
        Cmd::Marginals { model, semiring, unnormalized, oracle } => {
            cmd_marginals(model, *semiring, *unnormalized, *oracle)
        }
        Cmd::Map { model, semiring, oracle } => cmd_map(model, *semiring, *oracle),
        Cmd::Sample { model, seed, n, semiring } => cmd_sample(model, *seed, *n, *semiring),
        Cmd::Check { model } => cmd_check(model),
        Cmd::Bench { model, sizes, domain, seed, assert_linear } => {
            cmd_bench(model, sizes, *domain, *seed, *assert_linear)
        }
    }
}

/// Load a model file and its validated graph. `file:` data paths resolve
/// relative to the model file.
fn load_model(path: &Path) -> Result<(ModelFile, Graph64), Failure> {
    let file = ModelFile::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let g = file.to_graph(&base)?;
    Ok((file, g))
}

fn resolve(
    flag: Option<SemiringKind>,
    file: Option<SemiringKind>,
    default: SemiringKind,
) -> SemiringKind {
    flag.or(file).unwrap_or(default)
}

fn map_values(g: &Graph64, f: impl Fn(f64) -> f64) -> Graph64 {
    let mut out = Graph64::new();
    for (p, &m) in g.plates() {
        out.add_plate(p.clone(), m).expect("fresh graph");
    }
    for (v, var) in g.variables() {
        out.add_variable(v.clone(), var.domain, var.plates.clone()).expect("fresh graph");
    }
    for (name, fac) in g.factors() {
        out.add_factor(name.clone(), fac.tensor().map(|x| f(*x))).expect("fresh graph");
    }
    out
}

/// Re-encode factor values when the query algebra's carrier differs from
/// the file's encoding.
fn align_carrier(g: &Graph64, file: Option<SemiringKind>, algebra: SemiringKind) -> Graph64 {
    let from_log = file.is_some_and(SemiringKind::log_carrier);
    match (from_log, algebra.log_carrier()) {
        (false, true) => map_values(g, f64::ln),
        (true, false) => map_values(g, f64::exp),
        _ => g.clone(),
    }
}

fn kind_approx_eq(kind: SemiringKind, a: f64, b: f64) -> bool {
    match kind {
        SemiringKind::Real => Real64::new().approx_eq(&a, &b),
        SemiringKind::Log => Log64::new().approx_eq(&a, &b),
        SemiringKind::MaxProd => MaxProd64::new().approx_eq(&a, &b),
        SemiringKind::MaxSum => MaxSum64::new().approx_eq(&a, &b),
    }
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("plain json value"));
}

fn tensor_json<T>(t: &NamedTensor<T>) -> Value
where
    T: Clone + Copy + Into<Value> + PartialEq + std::fmt::Debug + Send + Sync + 'static,
{
    let dims: Vec<Value> = t.dims().iter().map(|(d, s)| json!([d.name(), s])).collect();
    let shape: Vec<usize> = t.dims().iter().map(|(_, s)| *s).collect();
    json!({"dims": dims, "values": model::nest(&t.to_vec(), &shape)})
}

fn indices_json(a: &Assignment<f64>) -> Value {
    let indices: serde_json::Map<String, Value> =
        a.indices.iter().map(|(name, t)| (name.clone(), tensor_json(t))).collect();
    Value::Object(indices)
}

fn assignment_json(a: &Assignment<f64>) -> Value {
    json!({"score": a.score, "indices": indices_json(a)})
}

fn cmd_contract(path: &Path, flag: Option<SemiringKind>, oracle: bool) -> Result<i32, Failure> {
    let (file, g) = load_model(path)?;
    let kind = resolve(flag, file.kind()?, SemiringKind::Real);
    let g = align_carrier(&g, file.kind()?, kind);
    let run = contract_in(kind, &g)?;
    let value = run.value();
    if oracle {
        let want = brute_value(kind, &g)?;
        if !kind_approx_eq(kind, value, want) {
            return Err(Failure::validation(format!(
                "oracle disagrees on the total: engine {value}, enumeration {want}"
            )));
        }
        eprintln!("oracle check passed");
    }
    if kind.log_carrier() {
        println!("log={value:?}");
    } else {
        println!("{value:?}");
    }
    Ok(0)
}

fn contract_in(kind: SemiringKind, g: &Graph64) -> Result<Run<f64>, Failure> {
    let opts = Options::default();
    let run = match kind {
        SemiringKind::Real => engine::tensor_variable_elimination(&Real64::new(), g, &opts),
        SemiringKind::Log => engine::tensor_variable_elimination(&Log64::new(), g, &opts),
        SemiringKind::MaxProd => engine::tensor_variable_elimination(&MaxProd64::new(), g, &opts),
        SemiringKind::MaxSum => engine::tensor_variable_elimination(&MaxSum64::new(), g, &opts),
    }?;
    Ok(run)
}

fn brute_value(kind: SemiringKind, g: &Graph64) -> Result<f64, Failure> {
    let value = match kind {
        SemiringKind::Real => oracle::brute_plated_sum_product(&Real64::new(), g),
        SemiringKind::Log => oracle::brute_plated_sum_product(&Log64::new(), g),
        SemiringKind::MaxProd => oracle::brute_plated_sum_product(&MaxProd64::new(), g),
        SemiringKind::MaxSum => oracle::brute_plated_sum_product(&MaxSum64::new(), g),
    }?;
    Ok(value)
}

fn cmd_einsum(
    spec_str: &str,
    plates: &str,
    flag: Option<SemiringKind>,
    files: &[PathBuf],
) -> Result<i32, Failure> {
    let spec = einsum::parse(spec_str, plates)?;
    let operands: Vec<(Vec<usize>, Vec<f64>)> =
        files.iter().map(|p| model::read_tensor_file(p)).collect::<Result<_, _>>()?;
    let kind = flag.unwrap_or(SemiringKind::Real);
    let result = match kind {
        SemiringKind::Real => einsum::plated_einsum(&Real64::new(), &spec, &operands),
        SemiringKind::Log => einsum::plated_einsum(&Log64::new(), &spec, &operands),
        SemiringKind::MaxProd => einsum::plated_einsum(&MaxProd64::new(), &spec, &operands),
        SemiringKind::MaxSum => einsum::plated_einsum(&MaxSum64::new(), &spec, &operands),
    }?;
    // report in the spec's output order, not the tensor's canonical order
    let order: Vec<DimName> =
        spec.output().iter().map(|c| DimName::variable(c.to_string())).collect();
    let flat = result.export(&order)?;
    let shape: Vec<usize> =
        order.iter().map(|d| result.size(d).expect("output dims exist")).collect();
    let dims: Vec<Value> = spec
        .output()
        .iter()
        .zip(&shape)
        .map(|(c, s)| json!([c.to_string(), s]))
        .collect();
    print_json(&json!({
        "semiring": kind.name(),
        "output": spec.output().iter().collect::<String>(),
        "dims": dims,
        "values": model::nest(&flat, &shape),
    }));
    Ok(0)
}

fn cmd_marginals(
    path: &Path,
    flag: Option<SemiringKind>,
    unnormalized: bool,
    oracle: bool,
) -> Result<i32, Failure> {
    let (file, g) = load_model(path)?;
    let kind = resolve(flag, file.kind()?, SemiringKind::Log);
    let g = align_carrier(&g, file.kind()?, kind);
    let (set, partition) = match kind {
        SemiringKind::Real => marginals_in(&Real64::new(), &g, unnormalized, oracle),
        SemiringKind::Log => marginals_in(&Log64::new(), &g, unnormalized, oracle),
        other => {
            return Err(Failure::validation(format!(
                "marginals needs a sum-product semiring (real or log), not {other}"
            )))
        }
    }?;
    let marginals: serde_json::Map<String, Value> =
        set.iter().map(|(name, t)| (name.clone(), tensor_json(t))).collect();
    print_json(&json!({
        "semiring": kind.name(),
        "partition": partition,
        "normalized": set.normalized(),
        "zero_divisions": set.zero_divisions(),
        "marginals": marginals,
    }));
    Ok(0)
}

fn marginals_in<S: DivideSemiring<Elem = f64>>(
    s: &S,
    g: &Graph64,
    unnormalized: bool,
    oracle: bool,
) -> Result<(MarginalSet<f64>, f64), Failure> {
    let (set, partition) = if unnormalized {
        adjoint::marginals_unnormalized(s, g)?
    } else {
        adjoint::marginals(s, g)?
    };
    if oracle {
        let (brute, total) = oracle::brute_marginals(s, g)?;
        if !s.approx_eq(&partition, &total) {
            return Err(Failure::validation(format!(
                "oracle disagrees on the partition: engine {partition}, enumeration {total}"
            )));
        }
        for (name, got) in set.iter() {
            let want = if unnormalized {
                brute[name].clone()
            } else {
                let den = reduce_plus(&brute[name], &[DimName::variable(name)], s)?;
                pointwise_divide(&brute[name], &den, s)?
            };
            let a = got.to_vec();
            let b = want.to_vec();
            if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| !s.approx_eq(x, y)) {
                return Err(Failure::validation(format!(
                    "oracle disagrees on the marginal of {name:?}"
                )));
            }
        }
        eprintln!("oracle check passed");
    }
    Ok((set, partition))
}

fn cmd_map(path: &Path, flag: Option<SemiringKind>, oracle: bool) -> Result<i32, Failure> {
    let (file, g) = load_model(path)?;
    let kind = match resolve(flag, file.kind()?, SemiringKind::Real) {
        SemiringKind::Real | SemiringKind::MaxProd => SemiringKind::MaxProd,
        SemiringKind::Log | SemiringKind::MaxSum => SemiringKind::MaxSum,
    };
    let g = align_carrier(&g, file.kind()?, kind);
    let a = match kind {
        SemiringKind::MaxProd => map_in(&MaxProd64::new(), &g, oracle),
        SemiringKind::MaxSum => map_in(&MaxSum64::new(), &g, oracle),
        _ => unreachable!("lifted above"),
    }?;
    print_json(&json!({
        "semiring": kind.name(),
        "score": a.score,
        "indices": indices_json(&a),
    }));
    Ok(0)
}

fn map_in<S: MaxSemiring<Elem = f64>>(
    s: &S,
    g: &Graph64,
    oracle: bool,
) -> Result<Assignment<f64>, Failure> {
    let a = adjoint::map_assignment(s, g)?;
    if oracle {
        let (_, want) = oracle::brute_map(s, g)?;
        if !s.approx_eq(&a.score, &want) {
            return Err(Failure::validation(format!(
                "oracle disagrees on the best score: engine {}, enumeration {want}",
                a.score
            )));
        }
        eprintln!("oracle check passed");
    }
    Ok(a)
}

fn cmd_sample(
    path: &Path,
    seed: u64,
    n: usize,
    flag: Option<SemiringKind>,
) -> Result<i32, Failure> {
    let (file, g) = load_model(path)?;
    let kind = resolve(flag, file.kind()?, SemiringKind::Log);
    let g = align_carrier(&g, file.kind()?, kind);
    let samples = match kind {
        SemiringKind::Real => adjoint::sample(&Real64::new(), &g, seed, n),
        SemiringKind::Log => adjoint::sample(&Log64::new(), &g, seed, n),
        other => {
            return Err(Failure::validation(format!(
                "sample needs a sum-product semiring (real or log), not {other}"
            )))
        }
    }?;
    let list: Vec<Value> = samples.iter().map(assignment_json).collect();
    print_json(&Value::Array(list));
    Ok(0)
}

fn cmd_check(path: &Path) -> Result<i32, Failure> {
    let (_, g) = load_model(path)?;
    match engine::dry_run(&g) {
        Ok(schedule) => {
            println!("tractable");
            print!("{schedule}");
            Ok(0)
        }
        Err(EngineError::Intractable { witness, .. }) => {
            println!("intractable");
            if let Some(w) = witness.or_else(|| g.detect_forbidden_minor()) {
                println!("{w}");
            }
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_bench(
    model: &str,
    sizes: &[usize],
    domain: usize,
    seed: u64,
    assert_linear: bool,
) -> Result<i32, Failure> {
    if model != "chain" {
        return Err(Failure::validation(format!(
            "unknown bench model {model:?} (expected \"chain\")"
        )));
    }
    if sizes.is_empty() {
        return Err(Failure::validation("no sizes given"));
    }
    // log space: chain totals overflow f64 well before the sizes of interest
    let mut rows = Vec::new();
    println!("size,ops,seconds");
    for &k in sizes {
        let g = models::log_space(&models::plate_chain(k, k, domain, seed));
        let t0 = Instant::now();
        let run = engine::tensor_variable_elimination(&Log64::new(), &g, &Options::default())?;
        let dt = t0.elapsed().as_secs_f64();
        println!("{k},{},{dt:.6}", run.schedule.total_ops);
        rows.push((k, run.schedule.total_ops));
    }
    if assert_linear {
        // doubling both plate sizes quadruples the plate box; cost linear
        // in the box means op counts grow by ~4x per doubling
        let mut checked = 0;
        for pair in rows.windows(2) {
            let ((a, ops_a), (b, ops_b)) = (pair[0], pair[1]);
            if b == 2 * a && a >= 8 {
                let ratio = ops_b as f64 / ops_a as f64;
                if !(3.4..=4.6).contains(&ratio) {
                    return Err(Failure::validation(format!(
                        "op count grew {ratio:.2}x from size {a} to {b}, outside [3.4, 4.6]"
                    )));
                }
                checked += 1;
            }
        }
        if checked == 0 {
            return Err(Failure::validation(
                "--assert-linear needs a consecutive doubling at size 8 or above (try --sizes 8,16)",
            ));
        }
        eprintln!("linear growth check passed ({checked} doublings)");
    }
    Ok(0)
}
