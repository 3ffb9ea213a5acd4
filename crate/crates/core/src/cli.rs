//! `scm` command line: estimation, testing, cross-validation and simulation.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tempfile::NamedTempFile;

use crate::estimator::{
    att, prediction_errors, select_gamma, EstimatorError, DEFAULT_GAMMA_GRID, DEFAULT_TRAIN_FRACTION,
};
use crate::inference::{andrews_loo_test, andrews_test, placebo_test, InferenceError, TestResult};
use crate::panel::{load_panel, PanelData};
use crate::simulation::{rejection_rates, SimConfig, SimError};
use crate::solver::{fit_weight_matrix, SolverError, SolverOptions};

/// Exit status for bad input or configuration.
pub const EXIT_INPUT: u8 = 1;
/// Exit status when the weight solver hit its iteration cap.
pub const EXIT_NUMERICAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "scm", version, about = "Penalized synthetic control estimation and inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit weights, write weights and errors, print the ATT.
    Estimate(EstimateArgs),
    /// Run one hypothesis test.
    Test(TestArgs),
    /// Select the penalty by a chronological train/validation split.
    Cv(CvArgs),
    /// Monte Carlo rejection rates for the factor-model design.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Long-format CSV with columns unit,time,outcome[,treated].
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub n_treated: usize,
    #[arg(long)]
    pub n_pre: usize,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, default_value = "weights.csv")]
    pub weights_out: PathBuf,
    #[arg(long, default_value = "errors.csv")]
    pub errors_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TestMethod {
    Placebo,
    Andrews,
    AndrewsLoo,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_enum)]
    pub method: TestMethod,
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 500)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Required for the placebo test.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON result file.
    #[arg(long, default_value = "test_result.json")]
    pub out: PathBuf,
    /// Null-sample CSV; defaults to `<out stem>.null.csv` beside `--out`.
    #[arg(long)]
    pub null_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Comma-separated penalty values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let soft = err
        .downcast_ref::<SolverError>()
        .map(|e| matches!(e, SolverError::IterationLimit { .. }))
        .or_else(|| err.downcast_ref::<EstimatorError>().map(estimator_soft))
        .or_else(|| err.downcast_ref::<InferenceError>().map(inference_soft))
        .or_else(|| {
            err.downcast_ref::<SimError>().map(|e| match e {
                SimError::Inference(i) => inference_soft(i),
                SimError::Config(_) => false,
            })
        })
        .unwrap_or(false);
    if soft {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn estimator_soft(e: &EstimatorError) -> bool {
    matches!(e, EstimatorError::Solver(SolverError::IterationLimit { .. }))
}

fn inference_soft(e: &InferenceError) -> bool {
    match e {
        InferenceError::Solver(s) => matches!(s, SolverError::IterationLimit { .. }),
        InferenceError::Estimator(s) => estimator_soft(s),
        _ => false,
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Estimate(a) => cmd_estimate(&a, stdout),
        Command::Test(a) => cmd_test(&a, stdout),
        Command::Cv(a) => cmd_cv(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a, stdout),
    }
}

fn load(args: &PanelArgs) -> Result<PanelData<f64>> {
    load_panel(&args.data, args.n_treated, args.n_pre)
        .with_context(|| format!("reading panel {}", args.data.display()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    {
        let mut buf = io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

pub fn cmd_estimate(args: &EstimateArgs, stdout: &mut dyn Write) -> Result<()> {
    let panel = load(&args.panel)?;
    let options = SolverOptions::default();
    let weights = fit_weight_matrix(&panel, args.gamma, &options)?;
    let errors = prediction_errors(&panel, &weights)?;

    write_atomic(&args.weights_out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["treated_unit", "donor_unit", "weight"])?;
        for i in 0..panel.n_treated {
            for j in 0..panel.n_donors() {
                wtr.write_record([
                    panel.unit_ids[i].as_str(),
                    panel.unit_ids[panel.n_treated + j].as_str(),
                    &format!("{:?}", weights.weights[[i, j]]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    write_atomic(&args.errors_out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["treated_unit", "time", "error"])?;
        for i in 0..panel.n_treated {
            for t in 0..panel.n_periods() {
                wtr.write_record([
                    panel.unit_ids[i].clone(),
                    (panel.first_time + t as i64).to_string(),
                    format!("{:?}", errors.errors[[i, t]]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    })?;
    writeln!(stdout, "att = {}", fixed6(att(&errors)))?;
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "test_result".into());
    out.with_file_name(format!("{stem}.null.csv"))
}

pub fn cmd_test(args: &TestArgs, stdout: &mut dyn Write) -> Result<()> {
    let panel = load(&args.panel)?;
    let options = SolverOptions::default();
    let result: TestResult<f64> = match args.method {
        TestMethod::Placebo => {
            let Some(seed) = args.seed else {
                bail!("the placebo test is randomized: pass --seed");
            };
            placebo_test(&panel, args.gamma, args.permutations, args.tau, seed, &options)?
        }
        TestMethod::Andrews => {
            let w = fit_weight_matrix(&panel, args.gamma, &options)?;
            andrews_test(&prediction_errors(&panel, &w)?, args.tau)?
        }
        TestMethod::AndrewsLoo => andrews_loo_test(&panel, args.gamma, args.tau, &options)?,
    };

    write_atomic(&args.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &result)?;
        writeln!(w)?;
        Ok(())
    })?;
    let null_path = args.null_out.clone().unwrap_or_else(|| sidecar_path(&args.out));
    write_atomic(&null_path, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "value"])?;
        for (k, v) in result.null_sample.iter().enumerate() {
            wtr.write_record([k.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    })?;

    writeln!(stdout, "method = {}", result.method)?;
    writeln!(stdout, "statistic = {}", result.statistic)?;
    writeln!(stdout, "p_value = {}", result.p_value)?;
    writeln!(stdout, "reject = {}", result.reject)?;
    writeln!(stdout, "tau = {}", args.tau)?;
    writeln!(stdout, "null_size = {}", result.null_sample.len())?;
    writeln!(stdout, "null_sample = {}", null_path.display())?;
    Ok(())
}

pub fn cmd_cv(args: &CvArgs, stdout: &mut dyn Write) -> Result<()> {
    let panel = load(&args.panel)?;
    let grid = args.grid.clone().unwrap_or_else(|| DEFAULT_GAMMA_GRID.to_vec());
    let cv = select_gamma(&panel, &grid, args.train_fraction, &SolverOptions::default())?;
    writeln!(stdout, "gamma_star = {}", cv.gamma_star)?;
    writeln!(stdout, "gamma,mse")?;
    for (g, mse) in &cv.grid {
        writeln!(stdout, "{g},{mse}")?;
    }
    Ok(())
}

/// Parses a config file, letting `seed_override` replace or supply the seed.
pub fn read_sim_config(path: &Path, seed_override: Option<u64>) -> Result<SimConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = seed_override {
        let seed = i64::try_from(seed).context("seed must fit in a signed 64-bit integer")?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    if !table.contains_key("seed") {
        bail!("no seed: set `seed` in the config or pass --seed");
    }
    let config: SimConfig = table.try_into().context("invalid simulation config")?;
    config.validate()?;
    Ok(config)
}

fn manifest_path(out: &Path) -> PathBuf {
    let name = out
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rejection_rates.csv".into());
    out.with_file_name(format!("{name}.manifest.toml"))
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = read_sim_config(&args.config, args.seed)?;
    let options = SolverOptions::<f64>::default();
    let table = match args.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(|| rejection_rates(&config, &options))?,
        None => rejection_rates(&config, &options)?,
    };

    write_atomic(&args.out, |w| {
        table.write_csv(w)?;
        Ok(())
    })?;
    let manifest = manifest_path(&args.out);
    write_atomic(&manifest, |w| {
        writeln!(w, "# scm simulate {}", env!("CARGO_PKG_VERSION"))?;
        writeln!(w, "# output = {:?}", args.out.display().to_string())?;
        w.write_all(toml::to_string(&config)?.as_bytes())?;
        Ok(())
    })?;
    writeln!(stdout, "wrote {} ({} rows)", args.out.display(), table.rows.len())?;
    writeln!(stdout, "manifest {}", manifest.display())?;
    Ok(())
}
