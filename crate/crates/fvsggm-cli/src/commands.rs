//! Subcommand definitions and implementations.
//!
//! Every command reads and writes ordinary files named by flags — there is
//! no stdin protocol and no network access — and a process runs exactly
//! one command. Outputs are deterministic: rerunning a command with the
//! same inputs reproduces every output byte for byte, except the
//! `wall_time` column of sweep reports.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rayon::prelude::*;

use fvsggm::{
    block_inverse, conditioned_chow_liu_cov, default_init, empirical_stats, fbm_covariance,
    fvs_log_det, fvs_marginals, greedy_recovery_study, kl_vs_k_sweep, latent_chow_liu,
    learn_exact_fvs_cov, learn_greedy_fvs_cov, log_partition, random_fvs_model, sample_gaussian,
    GaussianDensity, GreedyStep, LatentTrace, SymMatrix,
};

use crate::csv_io;
use crate::error::{CliError, Result};
use crate::model_file::{Metadata, ModelFile, SigmaBlocks};

const EXIT_CODE_HELP: &str = "Exit codes:
  0  success
  2  bad input (malformed files, inconsistent flags)
  3  numerical failure or violated model invariant
  4  resource cap exceeded

Set FVSGGM_THREADS to cap the number of worker threads.";

/// Learning and inference for Gaussian graphical models structured as a
/// spanning tree plus a small feedback vertex set.
#[derive(Debug, Parser)]
#[command(name = "fvsggm", version, after_help = EXIT_CODE_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit a model to fully observed data by conditioned tree selection.
    LearnObserved(LearnObservedArgs),
    /// Fit a model with latent feedback nodes by alternating projections.
    LearnLatent(LearnLatentArgs),
    /// Print the log-determinant and log-partition of a saved model and
    /// compute exact per-node marginals.
    Infer(InferArgs),
    /// Generate covariance matrices, models, and samples.
    #[command(subcommand)]
    Gen(GenCmd),
    /// Run multi-configuration studies and write plot-ready CSV reports.
    #[command(subcommand)]
    Sweep(SweepCmd),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Add feedback nodes one at a time, each the best single extension.
    Greedy,
    /// Enumerate every candidate feedback set of the requested size.
    Exact,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("selection").required(true).args(["fvs", "k"]))]
pub struct LearnObservedArgs {
    /// Input CSV: sample rows (one observation per row) unless
    /// --covariance is given.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Interpret the input as a covariance matrix instead of samples.
    #[arg(long)]
    pub covariance: bool,
    /// Comma-separated feedback node ids; pass "" for a plain spanning
    /// tree with no feedback nodes.
    #[arg(long, value_name = "LIST")]
    pub fvs: Option<String>,
    /// Number of feedback nodes to select automatically.
    #[arg(long, value_name = "COUNT")]
    pub k: Option<usize>,
    /// Selection strategy when --k is given [default: greedy].
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Add EPS to every diagonal entry of the covariance before fitting;
    /// without a value, EPS = 1e-8 * trace / n.
    #[arg(long, value_name = "EPS", num_args = 0..=1, default_missing_value = "auto")]
    pub ridge: Option<String>,
    /// Output model file (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Greedy selection trace CSV with columns step,node,d_value.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnLatentArgs {
    /// Input CSV: sample rows (one observation per row) unless
    /// --covariance is given.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Interpret the input as a covariance matrix instead of samples.
    #[arg(long)]
    pub covariance: bool,
    /// Number of latent feedback nodes to add (must be at least 1).
    #[arg(long, value_name = "COUNT")]
    pub k: usize,
    /// Maximum number of alternating-projection iterations.
    #[arg(long, value_name = "COUNT", default_value_t = 40)]
    pub iters: usize,
    /// Stop once the objective decreases by less than this amount.
    #[arg(long, value_name = "EPS", default_value_t = 1e-9)]
    pub tol: f64,
    /// Seed of the first random initialization.
    #[arg(long, value_name = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to try; the run with the best final
    /// objective is kept.
    #[arg(long, value_name = "COUNT", default_value_t = 1)]
    pub seeds: usize,
    /// Add EPS to every diagonal entry of the covariance before fitting;
    /// without a value, EPS = 1e-8 * trace / n.
    #[arg(long, value_name = "EPS", num_args = 0..=1, default_missing_value = "auto")]
    pub ridge: Option<String>,
    /// Output model file (JSON).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Iteration trace CSV with columns iter,objective,tree_edge_hash.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Model file to load (JSON).
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Potential vector CSV, one value per node; omitted means zero.
    #[arg(long, value_name = "FILE")]
    pub h: Option<PathBuf>,
    /// Per-node marginals CSV with columns node,mean,variance.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GenCmd {
    /// Write the covariance of fractional Brownian motion on a regular
    /// grid of (0, 1].
    Fbm {
        /// Number of grid points.
        #[arg(long)]
        n: usize,
        /// Hurst index, strictly between 0 and 1.
        #[arg(long)]
        hurst: f64,
        /// Output covariance CSV.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Draw a random model whose graph is a tree plus feedback nodes
    /// 0..k, and write its covariance or samples from it.
    Random {
        /// Total number of nodes.
        #[arg(long)]
        n: usize,
        /// Number of feedback nodes.
        #[arg(long)]
        k: usize,
        /// Seed for the model and (salted) for the sample stream.
        #[arg(long)]
        seed: u64,
        /// Draw this many samples instead of writing the covariance.
        #[arg(long, value_name = "COUNT")]
        samples: Option<usize>,
        /// Output CSV: samples when --samples is given, else covariance.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Ground-truth model file; defaults to OUT with the extension
        /// replaced by .truth.json.
        #[arg(long, value_name = "FILE")]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SweepCmd {
    /// Fit latent models to fractional-Brownian-motion covariances over a
    /// grid of sizes and feedback counts.
    Fbm {
        /// Comma-separated grid sizes, e.g. 32,64.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        n: Vec<usize>,
        /// Feedback counts: comma-separated values and inclusive ranges,
        /// e.g. 0..7 or 0,2,5.
        #[arg(long, value_name = "LIST")]
        k: String,
        /// Hurst index of the generated covariances.
        #[arg(long, default_value_t = 0.2)]
        hurst: f64,
        /// Iteration cap per fit.
        #[arg(long, value_name = "COUNT", default_value_t = 40)]
        iters: usize,
        /// Number of initialization seeds per cell.
        #[arg(long, value_name = "COUNT", default_value_t = 3)]
        seeds: usize,
        /// First initialization seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV with one row per (n, k) cell.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Sample repeatedly from random models and count how often greedy
    /// selection recovers the true structure.
    Recovery {
        /// Number of independent model/sample draws.
        #[arg(long)]
        runs: usize,
        /// Nodes per model.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Feedback nodes per model.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Samples drawn per run.
        #[arg(long, value_name = "COUNT", default_value_t = 1000)]
        samples: usize,
        /// Master seed for the whole study.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output CSV with the success counts.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Optional per-run detail CSV.
        #[arg(long, value_name = "FILE")]
        details: Option<PathBuf>,
    },
}

/// Decorrelates the sample stream from the model-construction stream when
/// both derive from one user-facing seed.
const SAMPLE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::LearnObserved(args) => learn_observed(args),
        Cmd::LearnLatent(args) => learn_latent(args),
        Cmd::Infer(args) => infer(args),
        Cmd::Gen(cmd) => gen(cmd),
        Cmd::Sweep(cmd) => sweep(cmd),
    }
}

/// Loads samples or a covariance from CSV and applies the requested
/// ridge; returns the matrix and the epsilon actually added (for the
/// output metadata). A bare --ridge scales with the data: 1e-8·trace/n.
fn load_covariance(
    path: &Path,
    is_covariance: bool,
    ridge: &Option<String>,
) -> Result<(SymMatrix, Option<f64>)> {
    let m = csv_io::read_matrix(path)?;
    let cov = if is_covariance {
        SymMatrix::from_dense(m, 1e-8)?
    } else {
        empirical_stats(&m)?.cov
    };
    let eps = match ridge.as_deref() {
        None => return Ok((cov, None)),
        Some("auto") => {
            1e-8 * cov.as_matrix().diagonal().sum() / cov.dim() as f64
        }
        Some(text) => {
            let eps: f64 = text.parse().map_err(|e| {
                CliError::input(format!("--ridge expects a number or no value: {e}"))
            })?;
            if !eps.is_finite() || eps < 0.0 {
                return Err(CliError::input(format!("--ridge must be nonnegative, got {eps}")));
            }
            eps
        }
    };
    let n = cov.dim();
    let dense = cov.into_matrix();
    let ridged = SymMatrix::from_fn(n, |i, j| {
        if i == j {
            dense[(i, i)] + eps
        } else {
            dense[(i, j)]
        }
    });
    Ok((ridged, Some(eps)))
}

fn parse_node_list(list: &str) -> Result<Vec<usize>> {
    let trimmed = list.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|e| CliError::input(format!("invalid node id {tok:?}: {e}")))
        })
        .collect()
}

/// Parses a feedback-count list: comma-separated items, each a single
/// count or an inclusive range like 0..7.
fn parse_k_list(list: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        if let Some((lo, hi)) = tok.split_once("..") {
            let lo: usize = lo
                .trim()
                .parse()
                .map_err(|e| CliError::input(format!("invalid range start {lo:?}: {e}")))?;
            let hi = hi.trim().strip_prefix('=').unwrap_or(hi.trim());
            let hi: usize = hi
                .parse()
                .map_err(|e| CliError::input(format!("invalid range end {hi:?}: {e}")))?;
            if hi < lo {
                return Err(CliError::input(format!("empty range {tok:?}")));
            }
            out.extend(lo..=hi);
        } else {
            out.push(
                tok.parse::<usize>()
                    .map_err(|e| CliError::input(format!("invalid count {tok:?}: {e}")))?,
            );
        }
    }
    if out.is_empty() {
        return Err(CliError::input("--k lists no feedback counts"));
    }
    Ok(out)
}

fn write_greedy_trace(path: &Path, steps: &[GreedyStep]) -> Result<()> {
    let mut out = String::from("step,node,d_value\n");
    for (i, step) in steps.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, step.node, step.d_value));
    }
    csv_io::write_text(path, &out)
}

fn learn_observed(args: LearnObservedArgs) -> Result<()> {
    let (cov, ridge) = load_covariance(&args.input, args.covariance, &args.ridge)?;
    let (fit, steps, algorithm) = match (&args.fvs, args.k) {
        (Some(list), None) => {
            if args.mode.is_some() {
                return Err(CliError::input("--mode applies only together with --k"));
            }
            let fvs = parse_node_list(list)?;
            let fit = conditioned_chow_liu_cov(&cov, &fvs)?;
            (fit, None, "conditioned-chow-liu")
        }
        (None, Some(k)) => match args.mode.unwrap_or(Mode::Greedy) {
            Mode::Greedy => {
                let trace = learn_greedy_fvs_cov(&cov, k)?;
                (trace.final_fit, Some(trace.steps), "greedy-feedback-selection")
            }
            Mode::Exact => {
                let fit = learn_exact_fvs_cov(&cov, k, None)?;
                (fit, None, "exact-feedback-selection")
            }
        },
        // clap's ArgGroup guarantees exactly one of --fvs/--k.
        _ => unreachable!(),
    };
    if let Some(path) = &args.trace {
        write_greedy_trace(path, steps.as_deref().unwrap_or(&[]))?;
    }
    let metadata = Metadata {
        algorithm: algorithm.to_string(),
        seed: None,
        iterations: None,
        objective: Some(fit.divergence),
        ridge,
    };
    ModelFile::from_model(&fit.j_ml, Some(SigmaBlocks::from_fit(&fit)), metadata)
        .write(&args.out)?;
    println!("divergence {}", fit.divergence);
    Ok(())
}

/// FNV-1a over the canonical edge list, so equal trees hash equally
/// across runs and platforms.
fn edge_hash(edges: &BTreeSet<(usize, usize)>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &(a, b) in edges {
        for v in [a as u64, b as u64] {
            for byte in v.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

fn write_latent_trace(path: &Path, trace: &LatentTrace) -> Result<()> {
    let mut out = String::from("iter,objective,tree_edge_hash\n");
    for state in trace.states.iter().filter(|s| s.iteration >= 1) {
        out.push_str(&format!(
            "{},{},{}\n",
            state.iteration,
            state.objective,
            edge_hash(&state.tree_edges)
        ));
    }
    csv_io::write_text(path, &out)
}

fn learn_latent(args: LearnLatentArgs) -> Result<()> {
    if args.k == 0 {
        return Err(CliError::input("latent learning requires --k of at least 1"));
    }
    if args.seeds == 0 {
        return Err(CliError::input("--seeds must be at least 1"));
    }
    let (cov, ridge) = load_covariance(&args.input, args.covariance, &args.ridge)?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| args.seed + i).collect();
    let runs: Vec<(u64, LatentTrace)> = seeds
        .par_iter()
        .map(|&s| {
            let init = default_init(&cov, args.k, s)?;
            let trace = latent_chow_liu(&cov, args.k, Some(init), args.iters, args.tol)?;
            Ok((s, trace))
        })
        .collect::<Result<_>>()?;
    // Strict comparison keeps the earliest seed on ties.
    let (best_seed, best) = runs
        .into_iter()
        .reduce(|acc, run| {
            if run.1.final_state.objective < acc.1.final_state.objective {
                run
            } else {
                acc
            }
        })
        .expect("at least one seed");

    if let Some(path) = &args.trace {
        write_latent_trace(path, &best)?;
    }
    let metadata = Metadata {
        algorithm: "latent-chow-liu".to_string(),
        seed: Some(best_seed),
        iterations: Some(best.final_state.iteration),
        objective: Some(best.final_state.objective),
        ridge,
    };
    ModelFile::from_model(&best.final_state.model, None, metadata).write(&args.out)?;
    println!(
        "objective {} after {} iterations (converged: {}, seed {})",
        best.final_state.objective, best.final_state.iteration, best.converged, best_seed
    );
    Ok(())
}

fn infer(args: InferArgs) -> Result<()> {
    let file = ModelFile::read(&args.model)?;
    let mut model = file.to_model()?;
    if let Some(path) = &args.h {
        let h = csv_io::read_vector(path)?;
        if h.len() != model.n() {
            return Err(CliError::input(format!(
                "{}: potential vector has {} entries, model has {} nodes",
                path.display(),
                h.len(),
                model.n()
            )));
        }
        model = model
            .with_h(Some(DVector::from_vec(h)))
            .map_err(CliError::from)?;
    }
    let log_det = fvs_log_det(&model)?;
    let log_z = log_partition(&model)?;
    println!("log_det {log_det}");
    println!("log_partition {log_z}");
    if let Some(path) = &args.out {
        let marginals = fvs_marginals(&model)?;
        let mut out = String::from("node,mean,variance\n");
        for i in 0..model.n() {
            out.push_str(&format!("{},{},{}\n", i, marginals.mean[i], marginals.variance[i]));
        }
        csv_io::write_text(path, &out)?;
    }
    Ok(())
}

fn gen(cmd: GenCmd) -> Result<()> {
    match cmd {
        GenCmd::Fbm { n, hurst, out } => {
            let cov = fbm_covariance(n, hurst)?;
            csv_io::write_matrix(&out, cov.as_matrix())
        }
        GenCmd::Random { n, k, seed, samples, out, truth } => {
            let model = random_fvs_model(n, k, seed)?;
            let truth_path = truth.unwrap_or_else(|| out.with_extension("truth.json"));
            let metadata = Metadata {
                algorithm: "random-feedback-model".to_string(),
                seed: Some(seed),
                iterations: None,
                objective: None,
                ridge: None,
            };
            ModelFile::from_model(&model, None, metadata).write(&truth_path)?;
            let sigma = block_inverse(&model.assemble(), model.part())?;
            match samples {
                Some(s) => {
                    if s == 0 {
                        return Err(CliError::input("--samples must be at least 1"));
                    }
                    let density =
                        GaussianDensity::new(DVector::zeros(n), sigma).map_err(CliError::from)?;
                    let x = sample_gaussian(&density, s, seed ^ SAMPLE_SEED_SALT)?;
                    csv_io::write_matrix(&out, &x)
                }
                None => csv_io::write_matrix(&out, sigma.as_matrix()),
            }
        }
    }
}

fn sweep(cmd: SweepCmd) -> Result<()> {
    match cmd {
        SweepCmd::Fbm { n, k, hurst, iters, seeds, seed, out } => {
            if n.is_empty() {
                return Err(CliError::input("--n lists no grid sizes"));
            }
            if seeds == 0 {
                return Err(CliError::input("--seeds must be at least 1"));
            }
            let ks = parse_k_list(&k)?;
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| seed + i).collect();
            let mut text = String::new();
            let mut algorithm = None;
            for &size in &n {
                let cov = fbm_covariance(size, hurst)?;
                let result = kl_vs_k_sweep(&cov, &ks, iters, &seed_list)?;
                algorithm.get_or_insert(result.meta.algorithm);
                for row in result.rows {
                    text.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        row.n, row.k, row.kl_value, row.kl_ratio_vs_tree, row.iterations,
                        row.wall_time
                    ));
                }
            }
            let mut header = String::new();
            header.push_str(&format!(
                "# algorithm: {}\n",
                algorithm.unwrap_or_default()
            ));
            header.push_str(&format!(
                "# seeds: {}\n",
                seed_list.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
            ));
            header.push_str(&format!("# hurst: {hurst}\n"));
            header.push_str("# grid: t_i = i/n on (0, 1]\n");
            header.push_str("n,k,kl_value,kl_ratio_vs_tree,iterations,wall_time\n");
            header.push_str(&text);
            csv_io::write_text(&out, &header)
        }
        SweepCmd::Recovery { runs, n, k, samples, seed, out, details } => {
            if runs == 0 {
                return Err(CliError::input("--runs must be at least 1"));
            }
            let report = greedy_recovery_study(runs, n, k, samples, seed)?;
            let summary = format!(
                "runs,successes,fvs_successes\n{},{},{}\n",
                report.runs, report.successes, report.fvs_successes
            );
            csv_io::write_text(&out, &summary)?;
            if let Some(path) = &details {
                let mut text =
                    String::from("run,model_seed,sample_seed,fvs_matched,tree_matched,matched,d_values\n");
                for (i, run) in report.details.iter().enumerate() {
                    text.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        i,
                        run.model_seed,
                        run.sample_seed,
                        run.fvs_matched,
                        run.tree_matched,
                        run.matched,
                        run.d_values
                            .iter()
                            .map(f64::to_string)
                            .collect::<Vec<_>>()
                            .join(";")
                    ));
                }
                csv_io::write_text(path, &text)?;
            }
            println!(
                "{} of {} runs recovered the full structure ({} recovered the feedback set)",
                report.successes, report.runs, report.fvs_successes
            );
            Ok(())
        }
    }
}

/// Applies `FVSGGM_THREADS` before any parallel work starts.
pub fn configure_threads() -> Result<()> {
    match std::env::var("FVSGGM_THREADS") {
        Ok(v) => {
            let threads: usize = v.trim().parse().map_err(|_| {
                CliError::input(format!("FVSGGM_THREADS must be a positive integer, got {v:?}"))
            })?;
            if threads == 0 {
                return Err(CliError::input("FVSGGM_THREADS must be at least 1"));
            }
            // A second initialization in one process is harmless: the
            // first pool stays in effect.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
            Ok(())
        }
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(e) => Err(CliError::input(format!("FVSGGM_THREADS: {e}"))),
    }
}
