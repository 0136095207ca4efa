//! `scf`: generate, check, train, evaluate and run day-ahead irradiance
//! forecasters from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use solar_crossformer::baselines::Baseline;
use solar_crossformer::data::{load_dataset, save_dataset, synth_generate, validate_dataset_dir};
use solar_crossformer::geometry::TimeStamp;
use solar_crossformer::gradcheck::{model_suite, primitive_suite};
use solar_crossformer::metrics::{MetricsReport, Scores};
use solar_crossformer::pipeline::{
    evaluate_run, forecast_at, read_run_checkpoint, resolve_nodes, train_run, write_forecast_csv, write_points_csv,
};
use solar_crossformer::training::LossKind;
use solar_crossformer::{Error, Result};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "scf", version, about = "Day-ahead multimodal irradiance forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    Synth(Common),
    /// Check a dataset directory and print a summary.
    Validate(Common),
    /// Train a model and write checkpoints and a training log.
    Train(Common),
    /// Score a checkpoint and the baselines on the evaluation days.
    Eval(Common),
    /// Write per-node quantile trajectories for one start time.
    Forecast(Common),
    /// Run the finite-difference gradient suites.
    Gradcheck(Common),
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML file with `model`, `train`, `split`, `eval` and `synth` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    loss: Option<LossKind>,
    /// Train the variant without the image branch.
    #[arg(long)]
    no_images: bool,
    /// Comma-separated node ids whose past is hidden during evaluation.
    #[arg(long, value_delimiter = ',')]
    mask_nodes: Option<Vec<String>>,
    /// First forecast lead, `YYYY-MM-DDTHH:MM` UTC.
    #[arg(long)]
    start: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref())?.resolve(Overrides {
            dataset: self.dataset.clone(),
            checkpoint: self.checkpoint.clone(),
            out: self.out.clone(),
            start: self.start.clone(),
            seed: self.seed,
            loss: self.loss,
            no_images: self.no_images,
            mask_nodes: self.mask_nodes.clone(),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join("run_config.toml");
    std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::Io { path, source: e })
}

fn fmt_score(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = synth_generate(&cfg.synth)?;
    save_dataset(&ds, out)?;
    write_resolved(cfg, out)?;
    println!(
        "wrote {} nodes x {} steps to {}",
        ds.stations.len(),
        ds.steps,
        out.display()
    );
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let dir = RunConfig::require(&cfg.dataset, "dataset")?;
    let report = validate_dataset_dir(dir)?;
    println!("nodes: {}", report.nodes);
    println!("steps: {} from {}", report.steps, report.start);
    match report.image_dims {
        Some((h, w, c)) => println!("images: {h}x{w}x{c}"),
        None => println!("images: none"),
    }
    for p in &report.problems {
        println!("problem: {p}");
    }
    if report.is_valid() {
        println!("ok");
        Ok(())
    } else {
        Err(Error::Dataset {
            path: dir.clone(),
            message: format!("{} problem(s) found", report.problems.len()),
        })
    }
}

fn train(cfg: &RunConfig) -> Result<()> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_dataset(RunConfig::require(&cfg.dataset, "dataset")?)?;
    let mut cfg = cfg.clone();
    cfg.model.station_features = ds.feature_names.len();
    write_resolved(&cfg, out)?;
    let outcome = train_run(&ds, &cfg.model, &cfg.train, &cfg.split, out)?;
    let s = &outcome.summary;
    println!(
        "best step {} (validation loss {:.6}), {} updates logged{}",
        s.best_step,
        s.best_val_loss,
        s.log.len(),
        if s.stopped_early { ", stopped early" } else { "" }
    );
    println!("checkpoint: {}", outcome.best_checkpoint.display());
    Ok(())
}

fn write_summary(path: &Path, rows: &[(&str, &MetricsReport)]) -> Result<()> {
    let mut body = format!("forecaster,mode,{}\n", Scores::NAMES.join(","));
    for (name, r) in rows {
        for (mode, s) in [("all", r.overall.all), ("day", r.overall.day)] {
            let cells: Vec<String> = s
                .values()
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            body.push_str(&format!("{name},{mode},{}\n", cells.join(",")));
        }
    }
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let ds = load_dataset(RunConfig::require(&cfg.dataset, "dataset")?)?;
    resolve_nodes(&ds, &cfg.eval.mask_nodes)?;
    let (weights, meta) = read_run_checkpoint(RunConfig::require(&cfg.checkpoint, "checkpoint")?)?;
    write_resolved(cfg, out)?;
    let outcome = evaluate_run(&ds, &weights, &meta, &cfg.eval)?;
    let model = outcome.model_report();
    create_dir(&out.join("model"))?;
    model.write_csv(&out.join("model"))?;
    write_points_csv(&out.join("model/points.csv"), &outcome.model, &outcome.levels)?;
    let mut rows: Vec<(String, MetricsReport)> = vec![("model".into(), model)];
    for kind in Baseline::ALL {
        let report = outcome.baseline_report(kind).expect("every baseline is evaluated");
        let dir = out.join("baselines").join(kind.name());
        report.write_csv(&dir)?;
        rows.push((kind.name().into(), report));
    }
    let refs: Vec<(&str, &MetricsReport)> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    write_summary(&out.join("summary.csv"), &refs)?;
    println!(
        "{:<24} {:>8} {:>8} {:>8} {:>8}",
        "night excluded", "nrmse", "nmae", "mape", "picp"
    );
    for (name, r) in &refs {
        let d = r.overall.day;
        println!(
            "{:<24} {:>8} {:>8} {:>8} {:>8}",
            name,
            fmt_score(d.nrmse),
            fmt_score(d.nmae),
            fmt_score(d.mape),
            fmt_score(d.picp)
        );
    }
    Ok(())
}

fn forecast(cfg: &RunConfig) -> Result<()> {
    let out = RunConfig::require(&cfg.out, "out")?;
    let start: TimeStamp = RunConfig::require(&cfg.start, "start")?.parse()?;
    let ds = load_dataset(RunConfig::require(&cfg.dataset, "dataset")?)?;
    let (weights, meta) = read_run_checkpoint(RunConfig::require(&cfg.checkpoint, "checkpoint")?)?;
    let fc = forecast_at(&ds, &weights, &meta, start)?;
    let levels = if weights.config.output_heads == 1 {
        vec![0.5]
    } else {
        meta.train.quantile_levels.clone()
    };
    write_resolved(cfg, out)?;
    let files = write_forecast_csv(out, &fc, &levels)?;
    println!("wrote {} forecast files to {}", files.len(), out.display());
    Ok(())
}

fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed.unwrap_or(0);
    let mut failed = 0;
    for c in primitive_suite(seed)?.into_iter().chain(model_suite(seed)?) {
        let verdict = if c.passed() { "pass" } else { "FAIL" };
        println!(
            "{verdict} {:<40} {:.3e} (tolerance {:.0e})",
            c.name, c.deviation, c.tolerance
        );
        failed += usize::from(!c.passed());
    }
    if failed > 0 {
        return Err(Error::Training(format!(
            "{failed} gradient check(s) exceeded tolerance"
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (common, f): (&Common, fn(&RunConfig) -> Result<()>) = match &cli.command {
        Command::Synth(c) => (c, synth),
        Command::Validate(c) => (c, validate),
        Command::Train(c) => (c, train),
        Command::Eval(c) => (c, eval),
        Command::Forecast(c) => (c, forecast),
        Command::Gradcheck(c) => (c, gradcheck),
    };
    f(&common.resolve()?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or_default();
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
