//! `shareinv` command-line driver.
//!
//! Exit codes: 0 success, 1 IO failure, 2 usage or validation error,
//! 3 inversion finished without converging.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use shareinv::harness::{perturb_start, run_suite, DegeneracyStats, ExperimentSpec, ModelFamily, TraceBand};
use shareinv::io::{self, ModelFile, TruthFile};
use shareinv::{invert, AnyModel, DemandModel, Error, MeanUtility, Method, ShareVector, SolverConfig};

/// Environment variable fixing the worker-thread count.
const THREADS_VAR: &str = "SHAREINV_THREADS";

#[derive(Parser)]
#[command(
    name = "shareinv",
    version,
    about = "Invert discrete-choice market shares by convex minimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random market and write it with its true mean utilities.
    Generate {
        #[arg(long)]
        family: ModelFamily,
        #[arg(long = "J")]
        products: usize,
        #[arg(long = "M")]
        attributes: usize,
        #[arg(long = "n")]
        consumers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model file; the truth goes to `<stem>.truth.json` beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve σ(x) = σ* for a stored market.
    Invert {
        #[arg(long)]
        model: PathBuf,
        /// JSON file (array or truth file), inline list `0.2,0.3`, or `truth`.
        #[arg(long)]
        shares: String,
        #[arg(long, default_value = "convex_tr")]
        method: Method,
        /// JSON file, `zeros`, `truth`, or `truth+delta:NORM`.
        #[arg(long, default_value = "zeros")]
        x0: String,
        /// Truth file used by `--shares truth` and `--x0 truth…`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Seed for the direction of a `truth+delta` start.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        /// Result JSON; the trace goes to `<stem>.trace.csv` beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a replication suite and write traces, bands and degeneracy data.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_validation() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn io_context(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure {
        code: 1,
        message: format!("{}: {e}", path.display()),
    }
}

/// Reads and parses a JSON file, keeping IO failures (exit 1) apart from
/// malformed content (exit 2).
fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let bytes = fs::read(path).map_err(io_context(path))?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(io_context(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::usage(e.to_string()))?;
    text.push('\n');
    write_file(path, text)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::usage(format!("{THREADS_VAR} must be a positive integer, got `{value}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn generate(
    family: ModelFamily,
    products: usize,
    attributes: usize,
    consumers: usize,
    seed: u64,
    out: &Path,
) -> Result<u8, Failure> {
    if products == 0 || attributes == 0 || consumers == 0 {
        return Err(Failure::usage("J, M and n must all be at least 1"));
    }
    if family == ModelFamily::Purechar && attributes < 2 {
        return Err(Failure::usage("the pure characteristics family needs M ≥ 2"));
    }
    let inst = shareinv::harness::make_instance(family, products, attributes, consumers, seed)?;
    write_json(out, &ModelFile::from_model(&inst.model, Some(seed)))?;
    let truth = TruthFile {
        x_star: inst.x_star,
        sigma_star: inst.sigma_star,
    };
    write_json(&io::truth_path(out), &truth)?;
    Ok(0)
}

fn parse_inline(text: &str) -> Option<Vec<f64>> {
    let body = text.trim().trim_start_matches('[').trim_end_matches(']');
    body.split(',').map(|s| s.trim().parse::<f64>().ok()).collect()
}

fn load_shares(arg: &str, truth: &dyn Fn() -> Result<TruthFile, Failure>) -> Result<ShareVector, Failure> {
    if arg == "truth" {
        return Ok(truth()?.sigma_star);
    }
    let values = match parse_inline(arg) {
        Some(values) => values,
        None => {
            let value: serde_json::Value = read_json(Path::new(arg))?;
            let array = value.get("sigma_star").cloned().unwrap_or(value);
            serde_json::from_value::<Vec<f64>>(array)
                .map_err(|e| Failure::usage(format!("{arg}: expected an array of shares: {e}")))?
        }
    };
    Ok(ShareVector::new(values)?)
}

fn load_start(
    arg: &str,
    products: usize,
    seed: u64,
    truth: &dyn Fn() -> Result<TruthFile, Failure>,
) -> Result<MeanUtility, Failure> {
    if arg == "zeros" {
        return Ok(MeanUtility::zeros(products));
    }
    if arg == "truth" {
        return Ok(truth()?.x_star);
    }
    if let Some(norm) = arg.strip_prefix("truth+delta:") {
        let norm: f64 = norm
            .parse()
            .map_err(|_| Failure::usage(format!("bad perturbation norm in `{arg}`")))?;
        return Ok(perturb_start(&truth()?.x_star, norm, seed)?);
    }
    let values: Vec<f64> = read_json(Path::new(arg))?;
    Ok(MeanUtility::new(values)?)
}

#[allow(clippy::too_many_arguments)]
fn invert_cmd(
    model_path: &Path,
    shares: &str,
    method: Method,
    x0: &str,
    truth_path: Option<&Path>,
    seed: u64,
    tol: Option<f64>,
    max_iter: Option<usize>,
    out: &Path,
) -> Result<u8, Failure> {
    let model: AnyModel = read_json::<ModelFile>(model_path)?.to_model()?;
    let truth_file = truth_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| io::truth_path(model_path));
    let truth = || read_json::<TruthFile>(&truth_file);

    let sigma_star = load_shares(shares, &truth)?;
    let start = load_start(x0, model.products(), seed, &truth)?;
    let mut cfg = SolverConfig::default();
    if let Some(tol) = tol {
        cfg.gradient_tolerance = tol;
    }
    if let Some(max_iter) = max_iter {
        cfg.max_iterations = max_iter;
    }

    let result = invert(&model, &sigma_star, method, &start, &cfg)?;
    write_json(out, &result)?;
    write_file(&io::sibling(out, "trace.csv"), io::trace_csv([(0, &result)]))?;
    println!(
        "{}: {:?} after {} iterations, error {:e}",
        result.method,
        result.status,
        result.iterations_used,
        result.final_error()
    );
    Ok(if result.converged { 0 } else { 3 })
}

#[derive(Serialize)]
struct Bands<'a> {
    iterations: usize,
    bands: &'a [TraceBand],
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    replication: usize,
    method: Method,
    error: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    master_seed: u64,
    spec_sha256: String,
    replications: usize,
    artifacts: [&'static str; 3],
    failures: Vec<FailureRecord<'a>>,
}

fn simulate(spec_path: &Path, out_dir: &Path) -> Result<u8, Failure> {
    let bytes = fs::read(spec_path).map_err(io_context(spec_path))?;
    let spec: ExperimentSpec =
        serde_json::from_slice(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", spec_path.display())))?;
    spec.validate()?;
    let report = run_suite(&spec)?;

    fs::create_dir_all(out_dir).map_err(io_context(out_dir))?;
    let traces = io::trace_csv(report.replications.iter().flat_map(|rep| {
        rep.runs
            .iter()
            .filter_map(move |run| run.outcome.as_ref().ok().map(|r| (rep.replication, r)))
    }));
    write_file(&out_dir.join("traces.csv"), traces)?;
    write_json(
        &out_dir.join("bands.json"),
        &Bands {
            iterations: spec.solver_cfg.max_iterations,
            bands: &report.bands,
        },
    )?;
    write_json::<DegeneracyStats>(&out_dir.join("degeneracy.json"), &report.degeneracy)?;

    let failures: Vec<FailureRecord> = report
        .failures()
        .map(|(replication, method, error)| FailureRecord {
            replication,
            method,
            error,
        })
        .collect();
    for f in &failures {
        eprintln!("replication {} / {}: {}", f.replication, f.method, f.error);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        master_seed: spec.master_seed,
        spec_sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        replications: spec.replications,
        artifacts: ["traces.csv", "bands.json", "degeneracy.json"],
        failures,
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Generate {
            family,
            products,
            attributes,
            consumers,
            seed,
            out,
        } => generate(family, products, attributes, consumers, seed, &out),
        Command::Invert {
            model,
            shares,
            method,
            x0,
            truth,
            seed,
            tol,
            max_iter,
            out,
        } => invert_cmd(
            &model,
            &shares,
            method,
            &x0,
            truth.as_deref(),
            seed,
            tol,
            max_iter,
            &out,
        ),
        Command::Simulate { spec, out_dir } => simulate(&spec, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
