//! Command-line interface: `synth`, `local-vi`, `fuse`, `eval` and `sweep`.
//!
//! Every command exits 0 on success. Failures print one `error: …` line on
//! standard error and exit 1; flag errors exit 2.

pub mod io;
pub mod sweep;

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::fusion::{FusionConfig, Mode, DEFAULT_LAMBDA, DEFAULT_MAX_ITERS, DEFAULT_REL_TOL};
use crate::localvi::{DEFAULT_MAX_ITERS as VI_MAX_ITERS, DEFAULT_TOL as VI_TOL};
use crate::synthgen::{generate_benchmark, SynthConfig};

use io::{FusedModel, Truth, TruthDataset};
use sweep::{PipelineOptions, SweepPlan, SweepRow};

#[derive(Debug, Parser)]
#[command(name = "klfuse", version, about = "Fuse mean-field posteriors from independently trained local models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark: truth.json plus one CSV per dataset.
    Synth(SynthArgs),
    /// Fit a variational Gaussian mixture to each data file and write a bundle.
    LocalVi(LocalViArgs),
    /// Fuse the datasets of a bundle into a global model.
    Fuse(FuseArgs),
    /// Compare a fused model with a ground truth.
    Eval(EvalArgs),
    /// Run synth, local-vi, fuse and eval over a grid and emit CSV rows.
    Sweep(SweepArgs),
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SizeArgs {
    /// Number of true global components.
    #[arg(long = "G", default_value_t = 5, value_parser = positive)]
    pub g: usize,
    /// Data dimension.
    #[arg(long = "D", default_value_t = 10, value_parser = positive)]
    pub d: usize,
    /// Number of datasets.
    #[arg(long = "J", default_value_t = 50, value_parser = positive)]
    pub j: usize,
    /// Points per dataset.
    #[arg(long = "n", default_value_t = 500, value_parser = positive)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub size: SizeArgs,
    #[arg(long, default_value_t = 0.5)]
    pub sep: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Fixed inclusion probability for every global component.
    #[arg(long)]
    pub inclusion: Option<f64>,
    #[arg(long, env = "KLFUSE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LocalViArgs {
    /// Dataset CSV files.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Components per local fit.
    #[arg(long = "K", value_parser = positive)]
    pub k: Option<usize>,
    /// Take each dataset's component count from this ground truth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = VI_MAX_ITERS, value_parser = positive)]
    pub max_iters: usize,
    #[arg(long, default_value_t = VI_TOL)]
    pub tol: f64,
    #[arg(long, env = "KLFUSE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output bundle file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Homogeneous,
    Heterogeneous,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Homogeneous => Mode::Homogeneous,
            ModeArg::Heterogeneous => Mode::Heterogeneous,
        }
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Homogeneous => "homogeneous",
        Mode::Heterogeneous => "heterogeneous",
    }
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Heterogeneous)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS, value_parser = positive)]
    pub max_iters: usize,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    pub tol: f64,
}

impl FusionArgs {
    fn config(&self, seed: u64) -> FusionConfig {
        FusionConfig {
            lambda_base: self.lambda,
            max_iters: self.max_iters,
            rel_tol: self.tol,
            seed,
            mode: self.mode.into(),
            ..FusionConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Bundle file.
    pub bundle: PathBuf,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[arg(long, env = "KLFUSE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the objective trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Fused model file.
    pub model: PathBuf,
    /// Ground-truth file.
    pub truth: PathBuf,
    /// Append a sweep-format row to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = sweep::METHOD_FUSION)]
    pub method: String,
    /// Use the point-set Hausdorff distance instead of the polytope one.
    /// Diagnostic only.
    #[arg(long)]
    pub point_set: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub size: SizeArgs,
    /// Comma-separated separation values.
    #[arg(long, value_delimiter = ',', conflicts_with = "sep")]
    pub sep_grid: Option<Vec<f64>>,
    /// Comma-separated noise values.
    #[arg(long, value_delimiter = ',', conflicts_with = "noise")]
    pub noise_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub sep: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of seeds per grid cell, starting at --seed.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, env = "KLFUSE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, value_parser = positive)]
    pub jobs: Option<usize>,
    /// Add rows for one variational GMM fit to the pooled data.
    #[arg(long)]
    pub pooled: bool,
    /// Output CSV; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const DEFAULT_SEPARATION: f64 = 0.5;
const DEFAULT_NOISE: f64 = 0.5;

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::LocalVi(a) => cmd_local_vi(&a),
        Command::Fuse(a) => cmd_fuse(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        n_global: a.size.g,
        dim: a.size.d,
        n_datasets: a.size.j,
        separation: a.sep,
        noise: a.noise,
        n_per_dataset: a.size.n,
        seed: a.seed,
        inclusion_override: a.inclusion,
    };
    let (ground_truth, locals, data) = generate_benchmark(&config)?;
    let datasets: Vec<TruthDataset> = locals
        .iter()
        .enumerate()
        .map(|(j, l)| TruthDataset {
            id: sweep::dataset_id(j),
            subset: l.subset.clone(),
        })
        .collect();
    for (d, x) in datasets.iter().zip(&data) {
        io::write_text(&a.out.join(format!("{}.csv", d.id)), &io::data_to_csv(x))?;
    }
    let truth = Truth {
        config,
        ground_truth,
        datasets,
    };
    io::write_text(&a.out.join("truth.json"), &io::truth_to_json(&truth)?)?;
    println!("wrote {} datasets and truth.json to {}", data.len(), a.out.display());
    Ok(())
}

fn file_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_local_vi(a: &LocalViArgs) -> anyhow::Result<()> {
    if a.files.is_empty() {
        bail!("no data files given");
    }
    let sizes: HashMap<String, usize> = match &a.truth {
        Some(p) => io::read_truth(p)?
            .datasets
            .into_iter()
            .map(|d| (d.id, d.subset.len()))
            .collect(),
        None => HashMap::new(),
    };
    if a.k.is_none() && a.truth.is_none() {
        bail!("either --K or --truth is required");
    }
    let mut bundles = Vec::with_capacity(a.files.len());
    for (j, path) in a.files.iter().enumerate() {
        let id = file_id(path);
        let k = match (sizes.get(&id), a.k) {
            (Some(&k), _) => k,
            (None, Some(k)) => k,
            (None, None) => bail!("{}: dataset {id:?} is not listed in the truth file", path.display()),
        };
        let data = io::read_data(path)?;
        let bundle = sweep::fit_local(&data, k, &id, sweep::vi_seed(a.seed, j), a.max_iters, a.tol)
            .with_context(|| format!("{}", path.display()))?;
        bundles.push(bundle);
    }
    io::write_text(&a.out, &io::bundles_to_json(&bundles)?)?;
    println!("wrote {} datasets to {}", bundles.len(), a.out.display());
    Ok(())
}

pub fn cmd_fuse(a: &FuseArgs) -> anyhow::Result<()> {
    let bundles = io::read_bundles(&a.bundle)?;
    let config = a.fusion.config(a.seed);
    let (result, secs) = sweep::timed_fuse(&bundles, &config)?;
    let model = FusedModel {
        components: result.global_model.components.clone(),
        usage: result.global_model.usage.clone(),
        dataset_ids: bundles.iter().map(|b| b.id.clone()).collect(),
        assignments: result.assignments.iter().map(|m| m.row_to_col().to_vec()).collect(),
        objective_trace: result.objective_trace.clone(),
        iterations: result.iterations,
        mode: mode_name(config.mode).to_string(),
        lambda: config.lambda_base,
        seed: config.seed,
        wall_seconds: secs,
    };
    io::write_text(&a.out, &io::fused_model_to_json(&model)?)?;
    if let Some(path) = &a.trace {
        let mut text = String::from("iteration,objective\n");
        for (i, v) in result.objective_trace.iter().enumerate() {
            text.push_str(&format!("{},{}\n", i + 1, v));
        }
        io::write_text(path, &text)?;
    }
    println!(
        "fused_G={} iterations={} objective={}",
        model.components.len(),
        model.iterations,
        model.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let model = io::read_fused_model(&a.model)?;
    let truth = io::read_truth(&a.truth)?;
    let eval = sweep::evaluate(&sweep::locations(&model.components), &truth.ground_truth, a.point_set)?;
    let metric = if a.point_set { "point_set_hausdorff" } else { "hausdorff" };
    println!("{metric}={} size_error={} fused_G={}", eval.hausdorff, eval.size_error, eval.fused_g);
    if let Some(path) = &a.csv {
        let row = SweepRow {
            seed: truth.config.seed,
            separation: truth.config.separation,
            noise: truth.config.noise,
            method: a.method.clone(),
            hausdorff: eval.hausdorff,
            size_error: eval.size_error,
            fused_g: eval.fused_g,
            wall_seconds: model.wall_seconds,
        };
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let text = sweep::rows_to_csv(&[row], fresh)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        f.write_all(text.as_bytes())
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs) -> anyhow::Result<()> {
    let plan = SweepPlan {
        base: SynthConfig {
            n_global: a.size.g,
            dim: a.size.d,
            n_datasets: a.size.j,
            n_per_dataset: a.size.n,
            seed: a.seed,
            ..SynthConfig::default()
        },
        separations: a.sep_grid.clone().unwrap_or_else(|| vec![a.sep.unwrap_or(DEFAULT_SEPARATION)]),
        noises: a.noise_grid.clone().unwrap_or_else(|| vec![a.noise.unwrap_or(DEFAULT_NOISE)]),
        n_seeds: a.seeds,
    };
    plan.base.validate()?;
    for &s in &plan.separations {
        SynthConfig { separation: s, ..plan.base.clone() }.validate()?;
    }
    for &n in &plan.noises {
        SynthConfig { noise: n, ..plan.base.clone() }.validate()?;
    }
    let opts = PipelineOptions {
        fusion: a.fusion.config(0),
        pooled: a.pooled,
        ..PipelineOptions::default()
    };
    opts.fusion.validate()?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let rows = sweep::run_sweep(&plan, &opts, jobs)?;
    let text = sweep::rows_to_csv(&rows, true)?;
    match &a.out {
        Some(path) => {
            io::write_text(path, &text)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
