//! Command-line front end: simulate datasets, fit either model family,
//! summarize traces, and run replicate study grids.

mod data_csv;
mod error;
mod run_config;
mod summary;
mod trace_csv;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rjmort::inference::{
    run_chains, ApFramework, AppFramework, Diagnostics, Framework, SamplerOptions, Schedule,
};
use rjmort::prior::ModelPrior;
use rjmort::sim::{run_study, SimRecipe, SimStudy};

use data_csv::Dataset;
use error::{CliError, Result};
use run_config::{parse_config_file, PartialRunConfig, RunConfig};
use summary::summarize;

#[derive(Parser)]
#[command(
    name = "rjmort",
    about = "Bayesian mortality model selection via reversible-jump MCMC",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an age-period dataset with planted effects.
    Simulate(SimulateArgs),
    /// Fit the age-period family to a dataset.
    FitAp(FitArgs),
    /// Fit the age-period-product family to a dataset.
    FitApp(FitArgs),
    /// Recompute summary tables from saved traces.
    Summarize(SummarizeArgs),
    /// Run a replicate grid of one simulation design.
    Study(StudyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Which design: 1 plants level/cohort effects, 2 an age-modulated period effect.
    #[arg(long)]
    study: u8,
    /// First knob: level noise (design 1) or modulation strength (design 2).
    #[arg(long)]
    param_a: f64,
    /// Second knob: cohort noise (design 1) or modulation profile noise (design 2).
    #[arg(long)]
    param_b: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    ages: usize,
    #[arg(long, default_value_t = 30)]
    years: usize,
    #[arg(long, default_value_t = 1000.0)]
    exposure_mean: f64,
    #[arg(long, default_value_t = -2.0)]
    base_level: f64,
    #[arg(long, default_value_t = 0.04)]
    base_slope: f64,
    #[arg(long, default_value_t = -0.08)]
    period_slope: f64,
    #[arg(long, default_value_t = 0.02)]
    period_noise: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Flat key=value settings file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    burn: Option<usize>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform, aic, or bic.
    #[arg(long)]
    model_prior: Option<String>,
    /// Starting configuration string (e.g. 2111 for the age-period family).
    #[arg(long)]
    init_config: Option<String>,
    /// Scale of the proper normal prior on free coordinates; omit for flat priors.
    #[arg(long)]
    prior_tau: Option<f64>,
    /// Output directory for traces and summaries.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trace CSV written by a fit run.
    #[arg(long)]
    traces: PathBuf,
    /// The dataset the traces were fitted to.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    /// Which design grid to run (1 or 2).
    #[arg(long)]
    study: u8,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, default_value_t = 2)]
    chains: usize,
    #[arg(long, default_value_t = 2000)]
    burn: usize,
    #[arg(long, default_value_t = 2000)]
    keep: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV for the averaged probability table.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

fn run() -> Result<()> {
    init_thread_pool()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::FitAp(args) => cmd_fit(args, "ap"),
        Command::FitApp(args) => cmd_fit(args, "app"),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Study(args) => cmd_study(args),
    }
}

/// RJMORT_THREADS caps chain and replicate parallelism.
fn init_thread_pool() -> Result<()> {
    if let Ok(value) = std::env::var("RJMORT_THREADS") {
        let n: usize = value
            .parse()
            .map_err(|_| CliError::Config(format!("RJMORT_THREADS must be a number, got {value:?}")))?;
        if n == 0 {
            return Err(CliError::Config("RJMORT_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot size thread pool: {e}")))?;
    }
    Ok(())
}

fn study_settings(study: u8, a: f64, b: f64) -> Result<SimStudy> {
    match study {
        1 => Ok(SimStudy::LevelCohort { sigma_a: a, sigma_g: b }),
        2 => Ok(SimStudy::AgeModulation { b_bar: a, sigma_b: b }),
        other => Err(CliError::Config(format!("study must be 1 or 2, got {other}"))),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let study = study_settings(args.study, args.param_a, args.param_b)?;
    if args.ages < 3 || args.years < 3 {
        return Err(CliError::Config("ages and years must be at least 3".into()));
    }
    let recipe = SimRecipe {
        study,
        n_ages: args.ages,
        n_years: args.years,
        exposure_mean: args.exposure_mean,
        base_level: args.base_level,
        base_slope: args.base_slope,
        period_slope: args.period_slope,
        period_noise: args.period_noise,
    };
    let data = rjmort::sim::simulate_ap_dataset(&recipe, args.seed)?;
    std::fs::write(&args.out, data_csv::write_ap_csv(&data))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!(
        "wrote {} ({} ages x {} years, seed {})",
        args.out.display(),
        data.n_ages(),
        data.n_years(),
        args.seed
    );
    Ok(())
}

fn resolve_fit_config(args: &FitArgs) -> Result<RunConfig> {
    let from_flags = PartialRunConfig {
        data: args.data.clone(),
        chains: args.chains,
        burn: args.burn,
        keep: args.keep,
        thin: args.thin,
        seed: args.seed,
        model_prior: match &args.model_prior {
            Some(s) => Some(
                ModelPrior::parse(s)
                    .ok_or_else(|| CliError::Config(format!("unknown model prior {s:?}")))?,
            ),
            None => None,
        },
        init_config: args.init_config.clone(),
        prior_tau: args.prior_tau,
        out_dir: args.out_dir.clone(),
    };
    let merged = match &args.config {
        Some(path) => from_flags.or(parse_config_file(path)?),
        None => from_flags,
    };
    merged.resolve()
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    data_csv::parse_dataset_csv(&text)
}

fn cmd_fit(args: FitArgs, family: &'static str) -> Result<()> {
    let config = resolve_fit_config(&args)?;
    let dataset = read_dataset(&config.data)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", config.out_dir.display())))?;

    match (family, &dataset) {
        ("ap", Dataset::Ap(data)) => {
            let framework = ApFramework::new(data);
            fit_and_write(&framework, &config, &dataset)
        }
        ("app", Dataset::App(data)) => {
            let framework = AppFramework::new(data);
            fit_and_write(&framework, &config, &dataset)
        }
        (family, other) => Err(CliError::Data(format!(
            "the {family} family cannot fit a {} dataset",
            other.family()
        ))),
    }
}

fn fit_and_write<F: Framework>(
    framework: &F,
    config: &RunConfig,
    dataset: &Dataset,
) -> Result<()> {
    let init = match &config.init_config {
        Some(s) => s.parse::<F::Config>().map_err(CliError::from)?,
        None => framework.default_init_config(),
    };
    if !framework.catalog().contains(&init) {
        return Err(CliError::Config(format!("init config {init} is not in the catalog")));
    }
    let schedule = Schedule::new(config.burn, config.keep, config.thin).map_err(CliError::from)?;
    let opts = SamplerOptions {
        model_prior: config.model_prior,
        param_prior: config.param_prior(),
        ..Default::default()
    };
    let traces = run_chains(framework, init, schedule, &opts, config.chains, config.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let trace_path = config.out_dir.join("trace.csv");
    trace_csv::write_traces(&trace_path, &traces)?;
    write_run_meta(framework.name(), config, &traces, &config.out_dir)?;

    let mut diag = Diagnostics::default();
    for t in &traces {
        diag.merge(&t.diagnostics);
    }
    let samples: Vec<trace_csv::RawSample> = traces
        .iter()
        .flat_map(|t| {
            t.samples.iter().map(|s| trace_csv::RawSample {
                chain: t.chain,
                iteration: s.iteration,
                config: s.config.to_string(),
                log_lik: s.log_lik,
                params: s.params.clone(),
            })
        })
        .collect();
    let bundle = summarize(&samples, dataset, diag.moves.into_iter().collect())?;
    bundle.write_files(&config.out_dir)?;
    println!(
        "fit complete: {} chains x {} kept samples; outputs in {}",
        config.chains,
        config.keep,
        config.out_dir.display()
    );
    Ok(())
}

fn write_run_meta<C: std::fmt::Display>(
    family: &str,
    config: &RunConfig,
    traces: &[rjmort::inference::Trace<C>],
    out_dir: &Path,
) -> Result<()> {
    let mut meta = String::new();
    let _ = writeln!(meta, "framework = {family}");
    let _ = writeln!(meta, "data = {}", config.data.display());
    let _ = writeln!(meta, "chains = {}", config.chains);
    let _ = writeln!(meta, "burn = {}", config.burn);
    let _ = writeln!(meta, "keep = {}", config.keep);
    let _ = writeln!(meta, "thin = {}", config.thin);
    let _ = writeln!(meta, "seed = {}", config.seed);
    let _ = writeln!(meta, "model_prior = {}", config.model_prior.name());
    if let Some(tau) = config.prior_tau {
        let _ = writeln!(meta, "prior_tau = {tau}");
    }
    for t in traces {
        let _ = writeln!(meta, "chain_{}_seed = {}", t.chain, t.seed);
    }
    let path = out_dir.join("run_meta.txt");
    std::fs::write(&path, meta)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let dataset = read_dataset(&args.data)?;
    let samples = trace_csv::read_traces(&args.traces)?;
    // Cross-check the family implied by the configuration strings.
    let expect_len = match dataset {
        Dataset::Ap(_) => 4,
        Dataset::App(_) => 3,
    };
    if samples.iter().any(|s| s.config.len() != expect_len) {
        return Err(CliError::Data(
            "trace configurations do not match the dataset family".into(),
        ));
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let bundle = summarize(&samples, &dataset, Vec::new())?;
    bundle.write_files(&args.out_dir)?;
    println!("summaries written to {}", args.out_dir.display());
    Ok(())
}

fn cmd_study(args: StudyArgs) -> Result<()> {
    if args.replicates == 0 {
        return Err(CliError::Config("replicates must be positive".into()));
    }
    let settings = SimStudy::grid(match args.study {
        1 | 2 => args.study,
        other => return Err(CliError::Config(format!("study must be 1 or 2, got {other}"))),
    });
    let template = SimRecipe::new(settings[0]);
    let schedule = Schedule::new(args.burn, args.keep, args.thin).map_err(CliError::from)?;
    let opts = SamplerOptions::default();
    let table = run_study(
        &settings,
        &template,
        args.replicates,
        args.chains,
        schedule,
        &opts,
        args.seed,
    )
    .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut out = String::from("study,param_a,param_b,config,avg_probability\n");
    for row in &table.rows {
        let (a, b) = row.study.knobs();
        for (cfg, p) in &row.avg_probability {
            let _ = writeln!(out, "{},{a},{b},{cfg},{}", args.study, summary::sig6(*p));
        }
    }
    std::fs::write(&args.out, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!("study table written to {}", args.out.display());
    Ok(())
}
