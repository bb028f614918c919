use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use tempex::datagen::{generate_hmm, generate_icu_like, load_dataset, save_dataset, TimeSeriesDataset};
use tempex::experiment::{
    classifier_auroc, evaluate_maps, load_csv_source, report, run_experiment, run_method, Ablation, ExperimentConfig,
    ExperimentKind, Profile,
};
use tempex::explainers::{load_saliency, save_saliency, write_saliency_csv};
use tempex::metrics::write_metric_rows;
use tempex::nets::{load_checkpoint, save_checkpoint, train_classifier};
use tempex::par;

/// Saliency maps for recurrent time-series classifiers.
#[derive(Parser)]
#[command(name = "tempex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset archive.
    Generate {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the classifier on the training split of a dataset.
    Train {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
    },
    /// Explain test samples with one method.
    Explain {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Method name as listed by the experiment config, e.g.
        /// learned_bi_gru, learned_bi_gru_deletion, dynamask, occlusion.
        #[arg(long, default_value = "learned_bi_gru")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the maps as long-format CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Number of test samples to explain; all by default.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Score saliency maps against ground truth and masked predictions.
    Evaluate {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        /// Write the metric rows here as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment over all folds.
    Run {
        #[command(flatten)]
        setup: Setup,
        /// lambda or deletion.
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        compare_generators: bool,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the tables of a finished run and flag failed checks.
    Report {
        dir: PathBuf,
        /// Exit with status 1 when a check fails.
        #[arg(long)]
        strict: bool,
    },
}

/// Options shared by the verbs that need an experiment config.
#[derive(Args)]
struct Setup {
    /// hmm, icu_like or csv.
    #[arg(long, default_value = "hmm")]
    experiment: ExperimentKind,
    /// fast or full; ignored when --config is given.
    #[arg(long, default_value = "fast")]
    profile: Profile,
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed; TEMPEX_SEED does the same.
    #[arg(long)]
    seed: Option<u64>,
}

impl Setup {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::preset(self.experiment, self.profile),
        };
        if let Ok(v) = std::env::var("TEMPEX_SEED") {
            cfg.run.seed = v.parse().with_context(|| format!("TEMPEX_SEED={v} is not an integer"))?;
        }
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        Ok(cfg)
    }
}

fn split(cfg: &ExperimentConfig, data: &Path) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    let ds = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    Ok(ds.split(cfg.dataset.train_fraction))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate { setup, out } => {
            let cfg = setup.load()?;
            let seed = cfg.run.seed;
            let ds = match cfg.name {
                ExperimentKind::Hmm => generate_hmm(&tempex::datagen::HmmConfig {
                    seed,
                    ..cfg.dataset.hmm.clone()
                })?,
                ExperimentKind::IcuLike => generate_icu_like(&tempex::datagen::IcuConfig {
                    seed,
                    ..cfg.dataset.icu.clone()
                })?,
                ExperimentKind::Csv => load_csv_source(&cfg.dataset.csv)?,
            };
            save_dataset(&ds, &out)?;
            println!("wrote {} samples x {} steps x {} features to {}", ds.n_samples, ds.n_timesteps, ds.n_features, out.display());
        }
        Command::Train {
            setup,
            data,
            out,
            epochs,
            lr,
            hidden,
        } => {
            let cfg = setup.load()?;
            let (train, test) = split(&cfg, &data)?;
            let mut tc = cfg.model.clone();
            tc.seed = cfg.run.seed;
            tc.epochs = epochs.unwrap_or(tc.epochs);
            tc.lr = lr.unwrap_or(tc.lr);
            tc.hidden_size = hidden.unwrap_or(tc.hidden_size);
            let (f, rep) = train_classifier(&train, &tc)?;
            save_checkpoint(&f, &out)?;
            if let Some(last) = rep.epoch_losses.last() {
                println!("final training loss {last:.4}");
            }
            if let Some(a) = classifier_auroc(&f, &test)? {
                println!("test AUROC {a:.4}");
            }
        }
        Command::Explain {
            setup,
            data,
            model,
            method,
            out,
            csv,
            samples,
            jobs,
        } => {
            let mut cfg = setup.load()?;
            cfg.run.compare_generators = true;
            if method.ends_with("_deletion") {
                cfg.run.ablation = Ablation::Deletion;
            }
            let methods = cfg.methods();
            let Some(m) = methods.iter().find(|m| m.name == method) else {
                let names: Vec<&str> = methods.iter().map(|m| m.name.as_str()).collect();
                bail!("unknown method {method}; available: {}", names.join(", "));
            };
            let (train, test) = split(&cfg, &data)?;
            let f = load_checkpoint(&model)?;
            let n = samples.unwrap_or(test.n_samples).min(test.n_samples);
            let xs = test.subset(&(0..n).collect::<Vec<_>>()).samples();
            let ids: Vec<u64> = (0..n as u64).collect();
            let maps = par::with_jobs(jobs, || run_method(m, &f, &train, &xs, &ids, cfg.run.seed))?;
            save_saliency(&out, &ids, &maps)?;
            if let Some(path) = csv {
                let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_saliency_csv(file, &ids, &maps)?;
            }
            info!("explained {n} samples with {method}");
            println!("wrote {n} maps to {}", out.display());
        }
        Command::Evaluate {
            setup,
            data,
            model,
            maps,
            out,
        } => {
            let cfg = setup.load()?;
            let (_, test) = split(&cfg, &data)?;
            let f = load_checkpoint(&model)?;
            let (ids, maps) = load_saliency(&maps)?;
            let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
            if let Some(bad) = idx.iter().find(|&&i| i >= test.n_samples) {
                bail!("map id {bad} is outside the {} test samples", test.n_samples);
            }
            let sub = test.subset(&idx);
            let method = maps.first().map(|m| m.method.clone()).unwrap_or_default();
            let rows = evaluate_maps(&cfg, &f, &sub, &maps, &method, 0)?;
            for r in &rows {
                let setting = match (r.fraction, &r.substitution) {
                    (Some(fr), Some(s)) => format!(" @{:.0}% {s}", fr * 100.0),
                    _ => String::new(),
                };
                println!("{:<28} {:<18}{setting:<20} {:.4}", r.method, r.metric, r.mean);
            }
            if let Some(path) = out {
                let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_metric_rows(file, &rows)?;
            }
        }
        Command::Run {
            setup,
            ablation,
            compare_generators,
            folds,
            out,
            force,
            jobs,
        } => {
            let mut cfg = setup.load()?;
            if let Some(a) = ablation {
                cfg.run.ablation = a;
            }
            cfg.run.compare_generators |= compare_generators;
            if let Some(k) = folds {
                cfg.run.folds = k;
            }
            if out.is_some() {
                cfg.run.output_dir = out;
            }
            if jobs.is_some() {
                cfg.run.jobs = jobs;
            }
            let result = run_experiment(&cfg, force)?;
            let rep = report(&result.dir)?;
            print!("{}", rep.text);
            println!("results in {}", result.dir.display());
        }
        Command::Report { dir, strict } => {
            let rep = report(&dir)?;
            print!("{}", rep.text);
            if strict && rep.violations().next().is_some() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
