use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use lfxlms::acoustics::simulate_rir;
use lfxlms::harness::config::default_fxlms_grid;
use lfxlms::harness::config::ModelSpec;
use lfxlms::harness::experiment::{
    secondary_paths, tune_controller, tuning_scenario, ControllerKind, ResolvedController,
};
use lfxlms::harness::pipeline::{
    dataset_anc_config, prepare_dataset, prepare_models, resolve_controllers, run_pipeline,
    train_model,
};
use lfxlms::harness::ControllerSpec;
use lfxlms::harness::{ExperimentConfig, MetricsReport};
use lfxlms::io::{save_positions, save_rir_bank};
use lfxlms::latent::{default_grid, LatentControllerConfig};
use lfxlms::neural::Variant;
use lfxlms::training::dataset::segment_positions;
use lfxlms::training::{generate_dataset, FilterDataset};
use lfxlms::Error;

#[derive(Parser)]
#[command(
    name = "lfxlms",
    version,
    about = "FxLMS and latent FxLMS active noise control simulator"
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate primary paths along the source segment into an ANCRIR1 bank.
    GenRirs {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of positions (default: dataset.n_positions).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Build the converged-filter dataset.
    GenDataset {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one autoencoder on a dataset.
    Train(TrainArgs),
    /// Find the largest stable step size for a controller.
    TuneStep(TuneArgs),
    /// Full pipeline: dataset, models, tuning, trials, report.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary table of a finished run.
    Report {
        /// Report JSON (default: <output_dir>/report.json).
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, value_enum, default_value = "off")]
    mixup: OnOff,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Dataset container (default: <output_dir>/dataset.ancds, generated if missing).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    /// Name of a controller in the experiment config.
    #[arg(long, conflicts_with = "latent")]
    controller: Option<String>,
    /// Latent controller config JSON; its model's dataset scale is used.
    #[arg(long)]
    latent: Option<PathBuf>,
    /// Comma-separated candidate step sizes.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

struct Context {
    config: ExperimentConfig,
    dir: PathBuf,
}

impl Context {
    fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, Error> {
        let path = path.ok_or_else(|| Error::Config("--config is required".into()))?;
        let mut config = ExperimentConfig::load(path)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { config, dir })
    }

    fn out_dir(&self) -> PathBuf {
        self.config.output_dir(&self.dir)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. } | Error::Instability { .. } => 3,
        Error::Tuning(_) => 4,
        _ => 2,
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_rirs(ctx: &Context, out: Option<PathBuf>, count: Option<usize>) -> Result<(), Error> {
    let c = &ctx.config;
    let out = out.unwrap_or_else(|| ctx.out_dir().join("rirs.ancrir"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let n = count.unwrap_or(c.dataset.n_positions);
    let positions = segment_positions(&c.geometry, n);
    let irs = positions
        .iter()
        .map(|p| simulate_rir(&c.room, p, &c.geometry.error_mic))
        .collect::<Result<Vec<_>, _>>()?;
    save_rir_bank(&out, &irs)?;
    save_positions(&with_suffix(&out, ".positions.txt"), &positions)?;
    let g = simulate_rir(&c.room, &c.geometry.secondary_source, &c.geometry.error_mic)?;
    save_rir_bank(&with_suffix(&out, ".secondary"), &[g])?;
    println!("wrote {} primary paths to {}", irs.len(), out.display());
    Ok(())
}

fn gen_dataset(ctx: &Context, out: Option<PathBuf>) -> Result<(), Error> {
    let c = &ctx.config;
    let out = out.unwrap_or_else(|| ctx.out_dir().join("dataset.ancds"));
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let ds = generate_dataset(
        &c.room,
        &c.geometry,
        c.dataset.n_positions,
        &dataset_anc_config(c),
    )?;
    ds.save(&out)?;
    save_positions(&with_suffix(&out, ".positions.txt"), ds.positions())?;
    println!(
        "wrote {} filters of {} taps to {} (scale {:.6e})",
        ds.len(),
        ds.filter_len(),
        out.display(),
        ds.scale()
    );
    Ok(())
}

fn train_cmd(ctx: &mut Context, args: TrainArgs) -> Result<(), Error> {
    let dataset = match &args.dataset {
        Some(p) => FilterDataset::load(p)?,
        None => prepare_dataset(&ctx.config, &ctx.out_dir())?,
    };
    if let Some(lr) = args.lr {
        ctx.config.training.learning_rate = lr;
    }
    let name = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let spec = ModelSpec {
        name,
        variant: args.variant,
        mixup: matches!(args.mixup, OnOff::On),
        epochs: args.epochs,
    };
    let (model, meta, report) = train_model(&ctx.config, &spec, &dataset)?;
    model.save(&args.out, &meta)?;
    std::fs::write(
        with_suffix(&args.out, ".history.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "trained {} ({} epochs): train recon {:.4e}, validation recon {}",
        spec.name,
        meta.epochs,
        report.final_train_recon,
        report
            .final_validation_recon
            .map_or("-".to_string(), |v| format!("{v:.4e}"))
    );
    Ok(())
}

fn tune_cmd(ctx: &Context, args: TuneArgs) -> Result<(), Error> {
    let c = &ctx.config;
    let paths = secondary_paths(c)?;
    let (template, grid) = if let Some(file) = &args.latent {
        let lc = LatentControllerConfig::load(file)?;
        let base = file.parent().unwrap_or(Path::new("."));
        let (model, meta) = lc.load_model(base)?;
        let t = ResolvedController {
            name: file.display().to_string(),
            kind: ControllerKind::Latent {
                model_name: lc.model.display().to_string(),
                model: std::sync::Arc::new(model),
                dataset_scale: meta.dataset_scale,
                scheme: lc.scheme,
                mu_z: lc.mu_z,
                epsilon: lc.epsilon,
                denominator_mode: lc.denominator_mode,
            },
            tuning: None,
        };
        (
            t,
            args.grid.clone().unwrap_or_else(|| default_grid(lc.scheme)),
        )
    } else {
        let name = args
            .controller
            .as_ref()
            .ok_or_else(|| Error::Config("give --controller NAME or --latent FILE".into()))?;
        let spec = c
            .controllers
            .iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("no controller named {name:?}")))?
            .clone();
        let mut single = c.clone();
        single.controllers = vec![spec.clone()];
        // Models listed in the config are trained (or reused) on demand.
        let models = if c.models.is_empty() {
            Default::default()
        } else {
            let out = ctx.out_dir();
            let ds = prepare_dataset(c, &out)?;
            let key = std::fs::read_to_string(out.join("dataset.key"))?;
            prepare_models(c, &ds, key.trim(), &out)?
        };
        let mut resolved = resolve_controllers(&single, &ctx.dir, &models, &paths)?;
        let t = resolved.remove(0);
        let grid = match (&args.grid, &spec) {
            (Some(g), _) => g.clone(),
            (None, ControllerSpec::Fxlms { grid, .. }) => {
                grid.clone().unwrap_or_else(default_fxlms_grid)
            }
            (None, ControllerSpec::Latent { grid, scheme, .. }) => {
                grid.clone().unwrap_or_else(|| default_grid(*scheme))
            }
        };
        (t, grid)
    };
    let scenario = tuning_scenario(c, &paths)?;
    let tuned = tune_controller(c, &scenario, &template, &grid)?;
    let out = serde_json::json!({
        "controller": tuned.name,
        "step_size": tuned.step_size(),
        "probes": tuned.tuning,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_cmd(ctx: &Context, out: Option<PathBuf>) -> Result<(), Error> {
    let out = out.unwrap_or_else(|| ctx.out_dir());
    let report = run_pipeline(&ctx.config, &ctx.dir, &out)?;
    print!("{}", report.to_table());
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    let Cli {
        config,
        seed,
        command,
    } = cli;
    let load = || Context::load(config.as_deref(), seed);
    match command {
        Command::Report { input } => {
            let path = match input {
                Some(p) => p,
                None => load()?.out_dir().join("report.json"),
            };
            print!("{}", MetricsReport::load(&path)?.to_table());
            Ok(())
        }
        Command::GenRirs { out, count } => gen_rirs(&load()?, out, count),
        Command::GenDataset { out } => gen_dataset(&load()?, out),
        Command::Run { out } => run_cmd(&load()?, out),
        Command::Train(args) => train_cmd(&mut load()?, args),
        Command::TuneStep(args) => tune_cmd(&load()?, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
