//! End-to-end procedures over a [`Dataset`]: training runs with checkpoints
//! and logs, evaluation against the baselines, and single forecasts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_forecast, Baseline};
use crate::data::{windows_for_targets, Dataset, Normalizer, SplitConfig};
use crate::error::{Error, Result};
use crate::geometry::{clearsky_ghi_kw, TimeStamp};
use crate::metrics::{evaluate_points, MetricsReport, Point};
use crate::model::{load_checkpoint, predict, save_checkpoint, ForecastBatch, ModelConfig, ModelInput, ModelWeights};
use crate::tensor::Tensor;
use crate::training::{FitSummary, LogRow, Sample, TrainConfig, Trainer};
use crate::GHI_SCALE;

/// Builds model inputs and targets for windows of a dataset.
pub struct SampleBuilder<'a> {
    pub dataset: &'a Dataset,
    pub normalizer: &'a Normalizer,
    pub config: &'a ModelConfig,
}

impl<'a> SampleBuilder<'a> {
    pub fn new(dataset: &'a Dataset, normalizer: &'a Normalizer, config: &'a ModelConfig) -> Result<Self> {
        let f = dataset.feature_names.len();
        if f != config.station_features {
            return Err(Error::invalid(format!(
                "dataset has {f} station features, model expects {}",
                config.station_features
            )));
        }
        if normalizer.feature_names != dataset.feature_names {
            return Err(Error::invalid(format!(
                "normalization features {:?} differ from dataset features {:?}",
                normalizer.feature_names, dataset.feature_names
            )));
        }
        if config.use_images {
            let img = dataset
                .images
                .as_ref()
                .ok_or_else(|| Error::invalid("model uses images but the dataset has none"))?;
            let want = (config.image_height, config.image_width, config.channels);
            if img.dims() != want {
                return Err(Error::invalid(format!(
                    "dataset images are {:?} (h, w, c), model expects {want:?}",
                    img.dims()
                )));
            }
        }
        Ok(SampleBuilder {
            dataset,
            normalizer,
            config,
        })
    }

    /// Model input for the forecast whose first lead is step `issue`, over
    /// the stations `nodes`. Steps past the end of the dataset are allowed
    /// in the horizon since only clear-sky values are needed there.
    pub fn input(&self, issue: usize, nodes: &[usize]) -> Result<ModelInput> {
        let (t, h) = (self.config.past_steps, self.config.horizon);
        let ds = self.dataset;
        if issue < t || issue > ds.steps {
            return Err(Error::invalid(format!(
                "forecast at step {issue} needs {t} past steps inside {} dataset steps",
                ds.steps
            )));
        }
        let start = issue - t;
        let f = ds.feature_names.len();
        let mut series = Vec::with_capacity(nodes.len() * t * f);
        let mut clearsky = Vec::with_capacity(nodes.len() * h);
        let mut node_ids = Vec::with_capacity(nodes.len());
        let mut positions = Vec::with_capacity(nodes.len());
        for &n in nodes {
            let s = ds
                .stations
                .get(n)
                .ok_or_else(|| Error::invalid(format!("node index {n} out of range")))?;
            for i in start..issue {
                let mut row = s.features.data()[i * f..(i + 1) * f].to_vec();
                self.normalizer.normalize_row(&mut row);
                series.extend(row);
            }
            clearsky.extend((issue..issue + h).map(|i| clearsky_ghi_kw(&s.position, ds.timestamp(i)) / GHI_SCALE));
            node_ids.push(s.node_id.clone());
            positions.push(s.position);
        }
        let images = match (&ds.images, self.config.use_images) {
            (Some(img), true) => Some(img.window(start, t)?),
            _ => None,
        };
        Ok(ModelInput {
            node_ids,
            positions,
            series: Tensor::new(&[nodes.len(), t, f], series)?,
            timestamps: (start..issue).map(|i| ds.timestamp(i)).collect(),
            clearsky: Tensor::new(&[nodes.len(), h], clearsky)?,
            images,
            bbox: ds.bbox,
            masked_nodes: Vec::new(),
            masked_patches: Vec::new(),
        })
    }

    /// Training sample for the window starting at step `window`.
    pub fn sample(&self, window: usize, nodes: &[usize]) -> Result<Sample> {
        let (t, h) = (self.config.past_steps, self.config.horizon);
        let issue = window + t;
        if issue + h > self.dataset.steps {
            return Err(Error::invalid(format!(
                "window at step {window} runs past the dataset end"
            )));
        }
        let input = self.input(issue, nodes)?;
        let mut target = Vec::with_capacity(nodes.len() * h);
        for &n in nodes {
            let s = &self.dataset.stations[n];
            target.extend((issue..issue + h).map(|i| s.ghi(i) / GHI_SCALE));
        }
        Ok(Sample {
            input,
            target: Tensor::new(&[nodes.len(), h], target)?,
            seed: 0,
        })
    }
}

/// Metadata stored in every checkpoint written by [`train_run`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub normalizer: Normalizer,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub step: usize,
}

pub fn read_run_checkpoint(path: &Path) -> Result<(ModelWeights, RunMetadata)> {
    let ck = load_checkpoint(path)?;
    let meta: RunMetadata = serde_json::from_value(ck.metadata)
        .map_err(|e| Error::Checkpoint(format!("{}: metadata lacks run information: {e}", path.display())))?;
    meta.normalizer.validate()?;
    Ok((ck.weights, meta))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Validation samples: every window on the stride grid with targets inside
/// the validation days, all nodes, nothing masked.
fn validation_samples(b: &SampleBuilder<'_>, range: std::ops::Range<usize>, stride: usize) -> Result<Vec<Sample>> {
    let nodes: Vec<usize> = (0..b.dataset.stations.len()).collect();
    windows_for_targets(range, b.config.past_steps, b.config.horizon, stride)
        .into_iter()
        .map(|w| b.sample(w, &nodes))
        .collect()
}

pub struct TrainOutcome {
    pub summary: FitSummary,
    pub best_checkpoint: PathBuf,
    pub normalizer: Normalizer,
}

/// Trains a freshly initialized model on the training days of `ds`.
///
/// Writes into `out`: `checkpoints/step_NNNNNN.ckpt` at every validation
/// improvement, `best.ckpt`, `train_log.csv` and `normalization.toml`.
/// Everything is derived from `train.seed`, so reruns are bit-identical.
pub fn train_run(
    ds: &Dataset,
    model: &ModelConfig,
    train: &TrainConfig,
    split: &SplitConfig,
    out: &Path,
) -> Result<TrainOutcome> {
    ds.validate()?;
    model.validate()?;
    train.validate()?;
    let ranges = split.split(ds)?;
    let normalizer = Normalizer::fit(ds, ranges.train.clone())?;
    let b = SampleBuilder::new(ds, &normalizer, model)?;
    let windows = windows_for_targets(
        ranges.train.clone(),
        model.past_steps,
        model.horizon,
        train.window_stride,
    );
    if windows.is_empty() {
        return Err(Error::invalid("the training days hold no complete window"));
    }
    let val = validation_samples(&b, ranges.val.clone(), train.window_stride)?;

    create_dir(&out.join("checkpoints"))?;
    let norm_toml = toml::to_string(&normalizer).map_err(|e| Error::Serde(e.to_string()))?;
    write_file(&out.join("normalization.toml"), &norm_toml)?;

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let weights = ModelWeights::init(model, &mut rng)?;
    let mut trainer = Trainer::new(weights, train.clone())?;
    let meta = |step: usize| {
        serde_json::to_value(RunMetadata {
            normalizer: normalizer.clone(),
            train: train.clone(),
            split: *split,
            step,
        })
        .map_err(|e| Error::Serde(e.to_string()))
    };

    let log_path = out.join("train_log.csv");
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    writeln!(log, "step,lr,train_loss,val_loss").map_err(|e| Error::io(&log_path, e))?;
    let mut make = |w: usize, nodes: &[usize]| b.sample(w, nodes);
    let mut on_improve = |step: usize, w: &ModelWeights| {
        save_checkpoint(&out.join(format!("checkpoints/step_{step:06}.ckpt")), w, &meta(step)?)
    };
    let mut on_log = |r: &LogRow| {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(log, "{},{},{},{}", r.step, r.lr, r.train_loss, val).map_err(|e| Error::io(&log_path, e))
    };
    let summary = trainer.fit(
        &windows,
        ds.stations.len(),
        &val,
        &mut make,
        &mut on_improve,
        &mut on_log,
    )?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    drop(log);

    let best_checkpoint = out.join("best.ckpt");
    save_checkpoint(&best_checkpoint, &summary.best, &meta(summary.best_step)?)?;
    Ok(TrainOutcome {
        summary,
        best_checkpoint,
        normalizer,
    })
}

/// Which steps an evaluation covers and how.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Steps between consecutive issue times.
    pub stride: usize,
    /// Node ids whose whole past is replaced by the mask token.
    pub mask_nodes: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            stride: 4,
            mask_nodes: Vec::new(),
        }
    }
}

/// Point-level forecasts of the model and of every baseline.
pub struct EvalOutcome {
    pub levels: Vec<f64>,
    pub model: Vec<Point>,
    pub baselines: Vec<(Baseline, Vec<Point>)>,
}

impl EvalOutcome {
    pub fn model_report(&self) -> MetricsReport {
        evaluate_points(&self.model, &self.levels)
    }

    pub fn baseline_report(&self, kind: Baseline) -> Option<MetricsReport> {
        self.baselines
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, p)| evaluate_points(p, &[0.5]))
    }
}

/// Resolves node ids to dataset indices, rejecting unknown or repeated ids.
pub fn resolve_nodes(ds: &Dataset, ids: &[String]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let i = ds.node_index(id)?;
        if out.contains(&i) {
            return Err(Error::invalid(format!("node {id:?} listed twice")));
        }
        out.push(i);
    }
    out.sort_unstable();
    Ok(out)
}

/// Forecasts every window whose targets lie in the evaluation days, with all
/// nodes as input and the configured nodes masked, plus the baselines on the
/// same points.
pub fn evaluate_run(
    ds: &Dataset,
    weights: &ModelWeights,
    meta: &RunMetadata,
    eval: &EvalConfig,
) -> Result<EvalOutcome> {
    let masked = resolve_nodes(ds, &eval.mask_nodes)?;
    ds.validate()?;
    let cfg = &weights.config;
    let b = SampleBuilder::new(ds, &meta.normalizer, cfg)?;
    let range = meta.split.split(ds)?.eval;
    let windows = windows_for_targets(range, cfg.past_steps, cfg.horizon, eval.stride);
    if windows.is_empty() {
        return Err(Error::invalid("the evaluation days hold no complete window"));
    }
    let nodes: Vec<usize> = (0..ds.stations.len()).collect();
    let mut model = Vec::new();
    let mut baselines: Vec<(Baseline, Vec<Point>)> = Baseline::ALL.iter().map(|&k| (k, Vec::new())).collect();
    for w in windows {
        let issue = w + cfg.past_steps;
        let issue_time = ds.timestamp(issue);
        let mut input = b.input(issue, &nodes)?;
        input.masked_nodes = masked.clone();
        let fc = predict(weights, &input)?;
        let q = cfg.output_heads;
        for (k, s) in ds.stations.iter().enumerate() {
            let per_node = &fc.values.data()[k * cfg.horizon * q..(k + 1) * cfg.horizon * q];
            for lead in 0..cfg.horizon {
                model.push(Point {
                    node: s.node_id.clone(),
                    lead,
                    issue: issue_time,
                    truth: s.ghi(issue + lead),
                    quantiles: per_node[lead * q..(lead + 1) * q].to_vec(),
                });
            }
            for (kind, pts) in baselines.iter_mut() {
                let f = baseline_forecast(s, *kind, issue, cfg.past_steps, cfg.horizon);
                for (lead, v) in f.into_iter().enumerate() {
                    pts.push(Point {
                        node: s.node_id.clone(),
                        lead,
                        issue: issue_time,
                        truth: s.ghi(issue + lead),
                        quantiles: vec![v],
                    });
                }
            }
        }
    }
    let levels = if cfg.output_heads == 1 {
        vec![0.5]
    } else {
        meta.train.quantile_levels.clone()
    };
    Ok(EvalOutcome {
        levels,
        model,
        baselines,
    })
}

/// Column name of a quantile level, such as `q05` for 0.05.
pub fn quantile_column(level: f64) -> String {
    format!("q{:02}", (level * 100.0).round() as u32)
}

/// Writes one row per point with the forecast issue time (the first lead)
/// and the target time.
pub fn write_points_csv(path: &Path, points: &[Point], levels: &[f64]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let cols: Vec<String> = levels.iter().map(|&l| quantile_column(l)).collect();
    writeln!(f, "node,issue,lead,target_time,truth,{}", cols.join(",")).map_err(|e| Error::io(path, e))?;
    for p in points {
        let q: Vec<String> = p.quantiles.iter().map(|v| v.to_string()).collect();
        writeln!(
            f,
            "{},{},{},{},{},{}",
            p.node,
            p.issue,
            p.lead + 1,
            p.target_time(),
            p.truth,
            q.join(",")
        )
        .map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Forecast whose first lead is at `start`.
pub fn forecast_at(
    ds: &Dataset,
    weights: &ModelWeights,
    meta: &RunMetadata,
    start: TimeStamp,
) -> Result<ForecastBatch> {
    let b = SampleBuilder::new(ds, &meta.normalizer, &weights.config)?;
    let offset = ds.start.steps_until(start);
    if offset < 0 || ds.start.plus_steps(offset) != start {
        return Err(Error::invalid(format!(
            "start {start} is before the dataset begins at {}",
            ds.start
        )));
    }
    let nodes: Vec<usize> = (0..ds.stations.len()).collect();
    predict(weights, &b.input(offset as usize, &nodes)?)
}

/// Writes `<node>.csv` per node into `dir`: a timestamp column followed by
/// one column per quantile.
pub fn write_forecast_csv(dir: &Path, fc: &ForecastBatch, levels: &[f64]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let s = fc.values.shape();
    let (h, q) = (s[1], s[2]);
    let cols: Vec<String> = levels.iter().map(|&l| quantile_column(l)).collect();
    let mut paths = Vec::new();
    for (k, id) in fc.node_ids.iter().enumerate() {
        let path = dir.join(format!("{id}.csv"));
        let mut body = format!("timestamp,{}\n", cols.join(","));
        for (lead, t) in fc.lead_times.iter().enumerate() {
            let row = &fc.values.data()[(k * h + lead) * q..(k * h + lead + 1) * q];
            let v: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            body.push_str(&format!("{t},{}\n", v.join(",")));
        }
        write_file(&path, &body)?;
        paths.push(path);
    }
    Ok(paths)
}
