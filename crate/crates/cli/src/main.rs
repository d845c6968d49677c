//! Command-line frontend: dataset synthesis, training, attribution, the
//! remove-and-retrain benchmark, ROI reporting, and gradient checking.
//!
//! Settings resolve as defaults < `--config` file < CLI flags; each command
//! echoes its effective configuration into the output directory. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::Cfg;
use fcexplain::roar::DEFAULT_THRESHOLDS;

#[derive(Parser)]
#[command(name = "fcexplain", version, about = "Explainable functional-connectivity classification pipeline")]
struct Cli {
    /// Optional `[section] key = value` config file; CLI flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for folds and retrain cells (0 = all cores). Outputs
    /// are identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-biomarker synthetic dataset.
    Synth(SynthArgs),
    /// Run the cross-validated training pipeline on a manifest.
    Train(TrainArgs),
    /// Compute attribution rankings for a trained run.
    Attribute(AttributeArgs),
    /// Remove-and-retrain benchmark over saved rankings.
    Roar(RoarArgs),
    /// Aggregate a ranking into a per-ROI importance report.
    Report(ReportArgs),
    /// Finite-difference check of the training gradients.
    CheckGrad(CheckGradArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for manifest, data files, and planted_edges.txt.
    #[arg(long)]
    out: PathBuf,
    /// Data mode: edge | timeseries [default: edge]
    #[arg(long)]
    mode: Option<String>,
    /// Number of subjects [default: 884]
    #[arg(long)]
    subjects: Option<usize>,
    /// Number of planted edges [default: 100]
    #[arg(long)]
    planted: Option<usize>,
    /// Between-class shift per planted edge [default: 0.3]
    #[arg(long)]
    effect: Option<f64>,
    /// Timepoints per scan in timeseries mode [default: 150]
    #[arg(long)]
    timepoints: Option<usize>,
    /// Fraction of subjects flagged with high motion [default: 0]
    #[arg(long)]
    high_fd_fraction: Option<f64>,
    /// Additive noise on flagged subjects [default: 0]
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Generator seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest path.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Mean-FD threshold in millimeters [default: 0.2]
    #[arg(long)]
    fd_threshold: Option<f64>,
    /// Disable FD filtering.
    #[arg(long)]
    no_fd_filter: bool,
    /// Feature-selection scope: per_fold | global [default: per_fold]
    #[arg(long)]
    selection_scope: Option<String>,
    /// Features kept by selection [default: 1000]
    #[arg(long)]
    target_features: Option<usize>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    folds: Option<usize>,
    /// Validation fraction of each fold's non-test portion [default: 0.1]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Base seed for every stochastic stage [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Network dims input..code, comma separated [default: 1000,500,100]
    #[arg(long)]
    dims: Option<String>,
    /// Pretraining epochs [default: 50]
    #[arg(long)]
    pre_epochs: Option<usize>,
    /// Pretraining learning rate [default: 0.001]
    #[arg(long)]
    pre_lr: Option<f64>,
    /// Fine-tuning epochs [default: 50]
    #[arg(long)]
    ft_epochs: Option<usize>,
    /// Fine-tuning learning rate [default: 0.0001]
    #[arg(long)]
    ft_lr: Option<f64>,
    /// L2 weight decay [default: 0.0001]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Mini-batch size [default: 128]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Sparsity target rho [default: 0.2]
    #[arg(long)]
    rho: Option<f64>,
    /// Sparsity penalty weight beta [default: 2]
    #[arg(long)]
    beta: Option<f64>,
    /// Linear-SVM C [default: 1]
    #[arg(long)]
    svm_c: Option<f64>,
    /// Linear-SVM epochs [default: 60]
    #[arg(long)]
    svm_epochs: Option<usize>,
    /// Linear-SVM learning rate [default: 0.5]
    #[arg(long)]
    svm_lr: Option<f64>,
}

#[derive(Args)]
struct AttributeArgs {
    /// Run directory produced by `train` (reads its config.txt).
    #[arg(long)]
    run: PathBuf,
    /// Manifest path override [default: the run's data setting]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated methods [default: all seven plus random]
    #[arg(long)]
    methods: Option<String>,
    /// Fold whose model and training split are attributed [default: 0]
    #[arg(long)]
    fold: Option<usize>,
    /// Output directory [default: RUN/attributions]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integration steps [default: 256]
    #[arg(long)]
    ig_steps: Option<usize>,
    /// Background samples for the *-shap methods [default: 50]
    #[arg(long)]
    background_size: Option<usize>,
    /// Gradient-shap path samples [default: 64]
    #[arg(long)]
    gradient_shap_samples: Option<usize>,
    /// Gradient-shap noise as a fraction of feature std [default: 0.1]
    #[arg(long)]
    gradient_shap_noise: Option<f64>,
    /// LIME mask draws [default: 2000]
    #[arg(long)]
    lime_samples: Option<usize>,
    /// LIME kernel width on the masked fraction [default: 0.25]
    #[arg(long)]
    lime_kernel_width: Option<f64>,
    /// Ridge strength for LIME / KernelSHAP solves [default: 0.001]
    #[arg(long)]
    ridge_lambda: Option<f64>,
    /// KernelSHAP sampled coalitions [default: 2048]
    #[arg(long)]
    kernel_shap_coalitions: Option<usize>,
}

#[derive(Args)]
struct RoarArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Manifest path override [default: the run's data setting]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory holding ranking_<method>.txt files [default: RUN/attributions]
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Comma-separated methods to benchmark [default: integrated_gradients,random]
    #[arg(long)]
    methods: Option<String>,
    /// planted_edges.txt path; required when methods include oracle.
    #[arg(long)]
    planted: Option<PathBuf>,
    /// Comma-separated thresholds [default: the 13-point grid]
    #[arg(long)]
    thresholds: Option<String>,
    /// Fold whose selection defines the reduced space [default: 0]
    #[arg(long)]
    ranking_fold: Option<usize>,
    /// Folds to retrain on, comma separated [default: 0]
    #[arg(long)]
    folds: Option<String>,
    /// Retraining pretrain epochs [default: the run's pre_epochs]
    #[arg(long)]
    pre_epochs: Option<usize>,
    /// Retraining fine-tune epochs [default: the run's ft_epochs]
    #[arg(long)]
    ft_epochs: Option<usize>,
    /// Output directory [default: RUN/roar]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory (supplies default ranking/scores locations).
    #[arg(long)]
    run: PathBuf,
    /// Ranking file [default: RUN/attributions/ranking_integrated_gradients.txt]
    #[arg(long)]
    ranking: Option<PathBuf>,
    /// Scores file [default: RUN/attributions/attribution_integrated_gradients.csv]
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Fraction of top connections aggregated [default: 0.01]
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Output directory [default: RUN/report]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckGradArgs {
    /// Network dims including the class count [default: 1000,500,100,2]
    #[arg(long)]
    dims: Option<String>,
    /// Batch size [default: 16]
    #[arg(long)]
    batch: Option<usize>,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    h: Option<f64>,
    /// Sampled coordinates per layer [default: 200]
    #[arg(long)]
    samples: Option<usize>,
    /// Seed for the model, batch, and coordinate sampling [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

fn train_defaults(cfg: &mut Cfg) {
    cfg.set("train", "fd_threshold", 0.2);
    cfg.set("train", "fd_filter", true);
    cfg.set("train", "selection_scope", "per_fold");
    cfg.set("train", "target_features", 1000);
    cfg.set("train", "k", 5);
    cfg.set("train", "val_fraction", 0.1);
    cfg.set("train", "seed", 42);
    cfg.set("train", "dims", "1000,500,100");
    cfg.set("train", "pre_epochs", 50);
    cfg.set("train", "pre_lr", 0.001);
    cfg.set("train", "ft_epochs", 50);
    cfg.set("train", "ft_lr", 0.0001);
    cfg.set("train", "weight_decay", 0.0001);
    cfg.set("train", "batch_size", 128);
    cfg.set("train", "rho", 0.2);
    cfg.set("train", "beta", 2.0);
    cfg.set("train", "svm_c", 1.0);
    cfg.set("train", "svm_epochs", 60);
    cfg.set("train", "svm_lr", 0.5);
}

fn overlay_train_flags(cfg: &mut Cfg, args: &TrainArgs) {
    cfg.set("train", "data", args.data.display());
    cfg.set_opt("train", "fd_threshold", &args.fd_threshold);
    if args.no_fd_filter {
        cfg.set("train", "fd_filter", false);
    }
    cfg.set_opt("train", "selection_scope", &args.selection_scope);
    cfg.set_opt("train", "target_features", &args.target_features);
    cfg.set_opt("train", "k", &args.folds);
    cfg.set_opt("train", "val_fraction", &args.val_fraction);
    cfg.set_opt("train", "seed", &args.seed);
    cfg.set_opt("train", "dims", &args.dims);
    cfg.set_opt("train", "pre_epochs", &args.pre_epochs);
    cfg.set_opt("train", "pre_lr", &args.pre_lr);
    cfg.set_opt("train", "ft_epochs", &args.ft_epochs);
    cfg.set_opt("train", "ft_lr", &args.ft_lr);
    cfg.set_opt("train", "weight_decay", &args.weight_decay);
    cfg.set_opt("train", "batch_size", &args.batch_size);
    cfg.set_opt("train", "rho", &args.rho);
    cfg.set_opt("train", "beta", &args.beta);
    cfg.set_opt("train", "svm_c", &args.svm_c);
    cfg.set_opt("train", "svm_epochs", &args.svm_epochs);
    cfg.set_opt("train", "svm_lr", &args.svm_lr);
}

/// Load a run's echoed config as the base layer for a follow-on command.
fn run_config_base(run: &std::path::Path) -> Result<Cfg, fcexplain::Error> {
    let mut cfg = Cfg::default();
    train_defaults(&mut cfg);
    let echoed = run.join("config.txt");
    if !echoed.exists() {
        return Err(fcexplain::Error::Data(format!(
            "{}: no config.txt (is this a train run directory?)",
            run.display()
        )));
    }
    cfg.overlay_file(&echoed)?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), fcexplain::Error> {
    match cli.command {
        Command::Synth(args) => {
            let mut cfg = Cfg::default();
            cfg.set("synth", "mode", "edge");
            cfg.set("synth", "subjects", 884);
            cfg.set("synth", "planted", 100);
            cfg.set("synth", "effect", 0.3);
            cfg.set("synth", "timepoints", 150);
            cfg.set("synth", "high_fd_fraction", 0.0);
            cfg.set("synth", "noise_scale", 0.0);
            cfg.set("synth", "seed", 42);
            if let Some(path) = &cli.config {
                cfg.overlay_file(path)?;
            }
            cfg.set_opt("synth", "mode", &args.mode);
            cfg.set_opt("synth", "subjects", &args.subjects);
            cfg.set_opt("synth", "planted", &args.planted);
            cfg.set_opt("synth", "effect", &args.effect);
            cfg.set_opt("synth", "timepoints", &args.timepoints);
            cfg.set_opt("synth", "high_fd_fraction", &args.high_fd_fraction);
            cfg.set_opt("synth", "noise_scale", &args.noise_scale);
            cfg.set_opt("synth", "seed", &args.seed);
            commands::cmd_synth(&cfg, &args.out)
        }
        Command::Train(args) => {
            let mut cfg = Cfg::default();
            train_defaults(&mut cfg);
            if let Some(path) = &cli.config {
                cfg.overlay_file(path)?;
            }
            overlay_train_flags(&mut cfg, &args);
            commands::cmd_train(&cfg, &args.out)
        }
        Command::Attribute(args) => {
            let mut cfg = run_config_base(&args.run)?;
            cfg.set("attribute", "fold", 0);
            cfg.set(
                "attribute",
                "methods",
                "integrated_gradients,deep_lift,deep_lift_shap,gradient_shap,guided_backprop,lime,kernel_shap,random",
            );
            cfg.set("attribute", "ig_steps", 256);
            cfg.set("attribute", "background_size", 50);
            cfg.set("attribute", "gradient_shap_samples", 64);
            cfg.set("attribute", "gradient_shap_noise", 0.1);
            cfg.set("attribute", "lime_samples", 2000);
            cfg.set("attribute", "lime_kernel_width", 0.25);
            cfg.set("attribute", "ridge_lambda", 0.001);
            cfg.set("attribute", "kernel_shap_coalitions", 2048);
            if let Some(path) = &cli.config {
                cfg.overlay_file(path)?;
            }
            if let Some(data) = &args.data {
                cfg.set("train", "data", data.display());
            }
            cfg.set_opt("attribute", "methods", &args.methods);
            cfg.set_opt("attribute", "fold", &args.fold);
            cfg.set_opt("attribute", "ig_steps", &args.ig_steps);
            cfg.set_opt("attribute", "background_size", &args.background_size);
            cfg.set_opt("attribute", "gradient_shap_samples", &args.gradient_shap_samples);
            cfg.set_opt("attribute", "gradient_shap_noise", &args.gradient_shap_noise);
            cfg.set_opt("attribute", "lime_samples", &args.lime_samples);
            cfg.set_opt("attribute", "lime_kernel_width", &args.lime_kernel_width);
            cfg.set_opt("attribute", "ridge_lambda", &args.ridge_lambda);
            cfg.set_opt("attribute", "kernel_shap_coalitions", &args.kernel_shap_coalitions);
            let out = args.out.clone().unwrap_or_else(|| args.run.join("attributions"));
            commands::cmd_attribute(&cfg, &args.run, &out)
        }
        Command::Roar(args) => {
            let mut cfg = run_config_base(&args.run)?;
            cfg.set("roar", "ranking_fold", 0);
            cfg.set("roar", "methods", "integrated_gradients,random");
            cfg.set(
                "roar",
                "thresholds",
                DEFAULT_THRESHOLDS
                    .iter()
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            cfg.set("roar", "folds", "0");
            cfg.set("roar", "rankings", args.run.join("attributions").display());
            // Retraining reuses the run's epochs unless overridden.
            let pre = cfg.get_usize("train", "pre_epochs").unwrap_or(50);
            let ft = cfg.get_usize("train", "ft_epochs").unwrap_or(50);
            cfg.set("roar", "pre_epochs", pre);
            cfg.set("roar", "ft_epochs", ft);
            if let Some(path) = &cli.config {
                cfg.overlay_file(path)?;
            }
            if let Some(data) = &args.data {
                cfg.set("train", "data", data.display());
            }
            if let Some(rankings) = &args.rankings {
                cfg.set("roar", "rankings", rankings.display());
            }
            cfg.set_opt("roar", "methods", &args.methods);
            if let Some(planted) = &args.planted {
                cfg.set("roar", "planted", planted.display());
            }
            cfg.set_opt("roar", "thresholds", &args.thresholds);
            cfg.set_opt("roar", "ranking_fold", &args.ranking_fold);
            cfg.set_opt("roar", "folds", &args.folds);
            cfg.set_opt("roar", "pre_epochs", &args.pre_epochs);
            cfg.set_opt("roar", "ft_epochs", &args.ft_epochs);
            let out = args.out.clone().unwrap_or_else(|| args.run.join("roar"));
            commands::cmd_roar(&cfg, &args.run, &out)
        }
        Command::Report(args) => {
            let mut cfg = Cfg::default();
            cfg.set(
                "report",
                "ranking",
                args.run.join("attributions/ranking_integrated_gradients.txt").display(),
            );
            cfg.set(
                "report",
                "scores",
                args.run.join("attributions/attribution_integrated_gradients.csv").display(),
            );
            cfg.set("report", "top_fraction", 0.01);
            if let Some(path) = &cli.config {
                cfg.overlay_file(path)?;
            }
            if let Some(ranking) = &args.ranking {
                cfg.set("report", "ranking", ranking.display());
            }
            if let Some(scores) = &args.scores {
                cfg.set("report", "scores", scores.display());
            }
            cfg.set_opt("report", "top_fraction", &args.top_fraction);
            let out = args.out.clone().unwrap_or_else(|| args.run.join("report"));
            commands::cmd_report(&cfg, &out)
        }
        Command::CheckGrad(args) => {
            let mut cfg = Cfg::default();
            cfg.set("check_grad", "dims", "1000,500,100,2");
            cfg.set("check_grad", "batch", 16);
            cfg.set("check_grad", "h", 1e-5);
            cfg.set("check_grad", "samples", 200);
            cfg.set("check_grad", "seed", 42);
            if let Some(path) = &cli.config {
                cfg.overlay_file(path)?;
            }
            cfg.set_opt("check_grad", "dims", &args.dims);
            cfg.set_opt("check_grad", "batch", &args.batch);
            cfg.set_opt("check_grad", "h", &args.h);
            cfg.set_opt("check_grad", "samples", &args.samples);
            cfg.set_opt("check_grad", "seed", &args.seed);
            let err = commands::cmd_check_grad(&cfg)?;
            if err >= 1e-5 {
                return Err(fcexplain::Error::Numerical(format!(
                    "gradient check failed: max relative error {err:.3e} >= 1e-5"
                )));
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if jobs > 0 {
            builder = builder.num_threads(jobs);
        }
        match builder.build() {
            Ok(pool) => pool,
            Err(e) => {
                eprintln!("error: failed to build worker pool: {e}");
                std::process::exit(2);
            }
        }
    };
    let result = pool.install(|| dispatch(cli));
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
