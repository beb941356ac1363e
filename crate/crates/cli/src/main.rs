use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slotunc::extraction::NpRelationSet;
use slotunc::uncertainty::{Metric, MetricKind};
use slotunc_cli::{
    cmd_eval, cmd_sweep, cmd_synth, cmd_threshold, cmd_train, exit_code, EvalArgs, EvalMode, EvalOutcome, SweepConfig,
    TrainOverrides,
};

#[derive(Parser)]
#[command(name = "slotunc", version, about = "Slot tagging with Dirichlet uncertainty and unknown-concept extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (train/dev/test_ind/test_ood).
    Synth {
        /// Generator config; the built-in benchmark when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a tagger and write checkpoints and a loss log.
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lambda_cal: Option<f64>,
    },
    /// Tune the decision threshold on the dev split.
    Threshold {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reads dev.tsv from here unless --dev-file is given.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        dev_file: Option<PathBuf>,
        #[command(flatten)]
        metric: MetricFlags,
        /// Where to write the threshold record.
        #[arg(long)]
        threshold_file: PathBuf,
    },
    /// Run the extraction pipeline on a test split and write reports.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reads test_ind.tsv or test_ood.tsv from here unless --test-file is given.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        test_file: Option<PathBuf>,
        #[arg(long, default_value = "ind")]
        mode: String,
        #[arg(long)]
        threshold_file: Option<PathBuf>,
        #[command(flatten)]
        metric: OptMetricFlags,
        #[arg(long)]
        with_syntax: bool,
        #[arg(long)]
        with_oov: bool,
        /// Comma-separated noun-phrase relations for --with-syntax.
        #[arg(long)]
        relations: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate several variants over many seeds, with t-tests.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides n_seeds from the config.
        #[arg(long)]
        n_seeds: Option<usize>,
    },
}

#[derive(Args)]
struct MetricSettings {
    #[arg(long)]
    use_calibration: bool,
    /// Ratio bound of the calibration noise.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 10)]
    passes: usize,
    #[arg(long, default_value_t = 0.25)]
    rate: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma2: f64,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Seed of the perturbation metrics.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl MetricSettings {
    fn metric(&self, kind: MetricKind) -> Metric {
        let mut m = Metric::new(kind).calibrated(self.use_calibration);
        m.delta = self.delta;
        m.passes = self.passes;
        m.rate = self.rate;
        m.sigma2 = self.sigma2;
        m.top_k = self.top_k;
        m.seed = self.seed;
        m
    }
}

#[derive(Args)]
struct MetricFlags {
    #[arg(long)]
    metric: String,
    #[command(flatten)]
    settings: MetricSettings,
}

#[derive(Args)]
struct OptMetricFlags {
    #[arg(long)]
    metric: Option<String>,
    #[command(flatten)]
    settings: MetricSettings,
}

fn need(path: Option<PathBuf>, dir: Option<PathBuf>, file: &str, flag: &str) -> slotunc::Result<PathBuf> {
    path.or_else(|| dir.map(|d| d.join(file)))
        .ok_or_else(|| slotunc::Error::Config(format!("pass --data-dir or {flag}")))
}

fn run(cli: Cli) -> slotunc::Result<()> {
    match cli.command {
        Command::Synth { config, out_dir, seed } => {
            let m = cmd_synth(config.as_deref(), &out_dir, seed)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Train { data_dir, config, out_dir, seed, epochs, delta, lambda_cal } => {
            let o = TrainOverrides { seed, epochs, delta, lambda_cal };
            let m = cmd_train(&data_dir, config.as_deref(), &out_dir, &o)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Threshold { checkpoint, data_dir, dev_file, metric, threshold_file } => {
            let dev = need(dev_file, data_dir, "dev.tsv", "--dev-file")?;
            let m = metric.settings.metric(metric.metric.parse()?);
            let t = cmd_threshold(&checkpoint, &dev, &m, &threshold_file)?;
            println!("{}", t.to_json()?);
        }
        Command::Eval {
            checkpoint,
            data_dir,
            test_file,
            mode,
            threshold_file,
            metric,
            with_syntax,
            with_oov,
            relations,
            out_dir,
        } => {
            let mode: EvalMode = mode.parse()?;
            let default_file = format!("test_{mode}.tsv");
            let test_file = need(test_file, data_dir, &default_file, "--test-file")?;
            let metric = match &metric.metric {
                Some(k) => Some(metric.settings.metric(k.parse()?)),
                None => None,
            };
            let relations = match relations {
                Some(r) => NpRelationSet::new(r.split(',').map(str::trim).filter(|s| !s.is_empty()))?,
                None => NpRelationSet::default(),
            };
            let args = EvalArgs { checkpoint, test_file, mode, threshold_file, metric, with_syntax, with_oov, relations, out_dir: out_dir.clone() };
            let outcome = cmd_eval(&args)?;
            let what = match outcome {
                EvalOutcome::Ind(_) => "in-domain",
                EvalOutcome::Ood(_) => "unknown-concept",
            };
            println!("{what} F1 {:.2} (reports in {})", 100.0 * outcome.f1(), out_dir.display());
        }
        Command::Sweep { config, data_dir, out_dir, n_seeds } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| slotunc::Error::Config(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = SweepConfig::from_toml(&text)?;
            if let Some(n) = n_seeds {
                cfg.n_seeds = n;
            }
            let report = cmd_sweep(&cfg, &data_dir, &out_dir)?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
