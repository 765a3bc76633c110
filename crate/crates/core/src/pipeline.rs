//! Config-driven commands behind the `spn` binary.
//!
//! Every command writes `resolved_config.json` next to its outputs and holds
//! a `.lock` file in its output directory while it runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::covariates::{
    compute_basis, preprocess_daily, read_covariate_cache, read_weather_file, synthetic_covariates,
    write_covariate_cache, BasisDaily, BasisParams, PatchCovariateSeries, SyntheticClimate,
};
use crate::dataset::{generate_dataset, load_dataset, save_dataset, DatasetConfig, Split};
use crate::model::{self, ModelConfig, N_COEFFICIENTS};
use crate::nn::{
    load_checkpoint, save_checkpoint, train, write_history, Checkpoint, CheckpointMeta, ResNetConfig,
    TrainConfig, TrainData,
};
use crate::report;
use crate::seed::{self, tags};
use crate::uq::{
    self, calibration_curve, compute_metrics, mc_dropout_batch, mc_dropout_predict, prediction_rows, UqConfig,
};
use crate::{Error, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const LOCK_FILE: &str = ".lock";
pub const COVARIATE_INDEX: &str = "covariates.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Station CSV; synthetic weather is used when absent.
    pub weather_csv: Option<PathBuf>,
    pub covariates_dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub eval_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            weather_csv: None,
            covariates_dir: "runs/covariates".into(),
            dataset_dir: "runs/dataset".into(),
            checkpoint: "runs/model/model.ckpt".into(),
            eval_dir: "runs/eval".into(),
            report_dir: "runs/report".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateConfig {
    pub basis: BasisParams,
    pub climate: SyntheticClimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub paths: Paths,
    pub covariates: CovariateConfig,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub network: ResNetConfig,
    pub train: TrainConfig,
    pub uq: UqConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            workers: 1,
            paths: Paths::default(),
            covariates: CovariateConfig::default(),
            model: ModelConfig::default(),
            dataset: DatasetConfig::default(),
            network: ResNetConfig::default(),
            train: TrainConfig::default(),
            uq: UqConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply a `dotted.path=value` override. The value is parsed as JSON,
    /// falling back to a plain string; the path must already exist.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let value: serde_json::Value =
            serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = match slot {
                serde_json::Value::Object(map) => map.get_mut(key),
                serde_json::Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.covariates.basis.validate()?;
        self.dataset.dropout.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.uq.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let d_in = model::N_PATCHES * model::PLACE_KINDS.len();
        if self.network.d_in != d_in || self.network.d_out != N_COEFFICIENTS {
            return Err(Error::Config(format!(
                "network must map {d_in} input channels to {N_COEFFICIENTS} outputs"
            )));
        }
        if self.network.horizon != self.dataset.horizon {
            return Err(Error::Config(format!(
                "network horizon {} differs from dataset horizon {}",
                self.network.horizon, self.dataset.horizon
            )));
        }
        Ok(())
    }

    fn write_resolved(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(&dir.join(RESOLVED_CONFIG), text.as_bytes())
    }
}

/// Exit status for an error: 2 input/validation, 3 generation failure rate, 4 numeric.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::GenerationFailures { .. } => 3,
        Error::Numeric(_) => 4,
        _ => 2,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(format!(
                "{} exists: another run is using this directory (delete the file if it is stale)",
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CovariateIndex {
    patches: Vec<String>,
    files: Vec<String>,
    horizon: usize,
    seed: u64,
    synthetic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovariateSummary {
    pub days: usize,
    pub patches: usize,
    /// Fraction of patch-days with a positive biting response.
    pub biting_fraction: f64,
}

/// Daily weather per patch: the configured station CSV, or synthetic weather.
pub fn covariate_series(cfg: &RunConfig) -> Result<Vec<PatchCovariateSeries>> {
    let horizon = cfg.dataset.horizon;
    let series = match &cfg.paths.weather_csv {
        Some(path) => preprocess_daily(&read_weather_file(path)?, horizon)?,
        None => synthetic_covariates(cfg.seed, horizon, model::N_PATCHES, &cfg.covariates.climate),
    };
    if series.len() != model::N_PATCHES {
        return Err(Error::Validation(format!(
            "weather data covers {} patches, the model needs {}",
            series.len(),
            model::N_PATCHES
        )));
    }
    Ok(series)
}

pub fn cmd_covariates(cfg: &RunConfig) -> Result<CovariateSummary> {
    cfg.validate()?;
    let horizon = cfg.dataset.horizon;
    let series = covariate_series(cfg)?;
    let dir = &cfg.paths.covariates_dir;
    let _lock = DirLock::acquire(dir)?;
    let mut files = Vec::new();
    let mut positive = 0;
    for s in &series {
        let basis = compute_basis(s, &cfg.covariates.basis);
        positive += basis.days.iter().filter(|d| d.bb > 0.0).count();
        let name = format!("patch_{}.csv", s.patch);
        let mut buf = Vec::new();
        write_covariate_cache(&mut buf, s, &basis)?;
        write_file(&dir.join(&name), &buf)?;
        files.push(name);
    }
    let index = CovariateIndex {
        patches: series.iter().map(|s| s.patch.clone()).collect(),
        files,
        horizon,
        seed: cfg.seed,
        synthetic: cfg.paths.weather_csv.is_none(),
    };
    write_file(&dir.join(COVARIATE_INDEX), &serde_json::to_vec_pretty(&index)?)?;
    cfg.write_resolved(dir)?;
    Ok(CovariateSummary {
        days: horizon,
        patches: series.len(),
        biting_fraction: positive as f64 / (horizon * series.len()) as f64,
    })
}

pub fn load_covariate_cache(dir: &Path) -> Result<Vec<BasisDaily>> {
    let index_path = dir.join(COVARIATE_INDEX);
    if !index_path.exists() {
        return Err(Error::Validation(format!(
            "no covariate cache at {} (run `spn covariates` first)",
            dir.display()
        )));
    }
    let index: CovariateIndex = serde_json::from_slice(&read_file(&index_path)?)?;
    index
        .patches
        .iter()
        .zip(&index.files)
        .map(|(patch, file)| {
            let path = dir.join(file);
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            Ok(read_covariate_cache(patch, f)?.1)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub records: usize,
    pub failed: usize,
    pub seconds: f64,
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let basis = load_covariate_cache(&cfg.paths.covariates_dir)?;
    if let Some(short) = basis.iter().find(|b| b.len() < cfg.dataset.horizon) {
        return Err(Error::Validation(format!(
            "covariates for patch {} cover {} days, horizon is {}",
            short.patch,
            short.len(),
            cfg.dataset.horizon
        )));
    }
    let dir = &cfg.paths.dataset_dir;
    let _lock = DirLock::acquire(dir)?;
    let start = Instant::now();
    let ds = generate_dataset(&cfg.model, &basis, &cfg.dataset, cfg.seed, cfg.workers)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!(
        "generated {} records in {seconds:.1} s, {} failed samples",
        ds.records.len(),
        ds.manifest.failed_samples.len()
    );
    save_dataset(dir, &ds)?;
    cfg.write_resolved(dir)?;
    Ok(GenerateSummary {
        records: ds.records.len(),
        failed: ds.manifest.failed_samples.len(),
        seconds,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.paths.dataset_dir)?;
    let m = &ds.manifest;
    if m.horizon != cfg.network.horizon || m.d_in != cfg.network.d_in {
        return Err(Error::Validation(format!(
            "dataset is {} × {}, network expects {} × {}",
            m.horizon, m.d_in, cfg.network.horizon, cfg.network.d_in
        )));
    }
    let tr = TrainData::from_dataset(&ds, &m.indices(Split::Train))
        .map_err(|_| Error::Validation("training split is empty".into()))?;
    let va = TrainData::from_dataset(&ds, &m.indices(Split::Val))
        .map_err(|_| Error::Validation("validation split is empty".into()))?;
    let out_dir = parent_dir(&cfg.paths.checkpoint);
    let _lock = DirLock::acquire(&out_dir)?;
    let outcome = train(&tr, &va, &cfg.network, &cfg.train)?;
    let ckpt = Checkpoint {
        model: outcome.model,
        meta: CheckpointMeta {
            targets: m.targets.clone(),
            gains: m.gains.clone(),
            places: m.places.clone(),
            feature_scale: m.feature_scale.clone(),
            dataset_hash: m.config_hash.clone(),
            best_epoch: outcome.best_epoch,
        },
    };
    save_checkpoint(&cfg.paths.checkpoint, &ckpt)?;
    let mut buf = Vec::new();
    write_history(&mut buf, &outcome.history)?;
    write_file(&out_dir.join("history.csv"), &buf)?;
    cfg.write_resolved(&out_dir)?;
    let best = outcome
        .history
        .iter()
        .find(|h| h.epoch == outcome.best_epoch)
        .map_or(f64::NAN, |h| h.val_loss);
    Ok(TrainSummary {
        epochs: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_loss: best,
    })
}

/// Read a `day,<place…>` CSV of raw counts into a `T × d_in` normalised matrix.
pub fn read_trajectory_csv(path: &Path, places: &[String], scale: &[f64], horizon: usize) -> Result<Vec<f32>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let headers = rdr.headers()?.clone();
    let mut columns = Vec::with_capacity(places.len());
    for p in places {
        let idx = headers
            .iter()
            .position(|h| h.trim() == p)
            .ok_or_else(|| Error::Validation(format!("{}: missing column `{p}`", path.display())))?;
        columns.push(idx);
    }
    let mut x = Vec::with_capacity(horizon * places.len());
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (&c, &s) in columns.iter().zip(scale) {
            let cell = rec.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::Validation(format!("{} row {}: `{cell}` is not a count", path.display(), i + 2))
            })?;
            if !(v >= 0.0) {
                return Err(Error::Validation(format!("{} row {}: negative count", path.display(), i + 2)));
            }
            x.push((v / s) as f32);
        }
        rows += 1;
    }
    if rows != horizon {
        return Err(Error::Validation(format!(
            "{} has {rows} days, the model was trained on {horizon}",
            path.display()
        )));
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferRow {
    pub parameter: String,
    pub mean_norm: f64,
    pub std_norm: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn cmd_infer(cfg: &RunConfig, input: &Path, output: Option<&Path>) -> Result<Vec<InferRow>> {
    cfg.uq.validate()?;
    let ckpt = load_checkpoint(&cfg.paths.checkpoint, None)?;
    let net_cfg = ckpt.model.config();
    let meta = &ckpt.meta;
    if meta.places.len() != net_cfg.d_in || meta.gains.len() != net_cfg.d_out {
        return Err(Error::load(&cfg.paths.checkpoint, "checkpoint lacks place or gain metadata"));
    }
    let x = read_trajectory_csv(input, &meta.places, &meta.feature_scale, net_cfg.horizon)?;
    let post = mc_dropout_predict(&ckpt.model, &x, &cfg.uq, seed::derive(cfg.seed, tags::MC, 0))?;
    let rows: Vec<InferRow> = (0..net_cfg.d_out)
        .map(|k| InferRow {
            parameter: meta.targets[k].clone(),
            mean_norm: post.mean[k],
            std_norm: post.std[k],
            mean: post.mean[k] * meta.gains[k],
            std: post.std[k] * meta.gains[k],
        })
        .collect();
    let out_path = output.map_or_else(|| cfg.paths.eval_dir.join("posterior.csv"), Path::to_path_buf);
    let out_dir = parent_dir(&out_path);
    let _lock = DirLock::acquire(&out_dir)?;
    let mut text = format!(
        "# M={} tau_inv={} mc_dropout={} seed={}\nparameter,mean_norm,std_norm,mean,std\n",
        cfg.uq.passes, cfg.uq.tau_inv, cfg.uq.mc_dropout, cfg.seed
    );
    for r in &rows {
        text.push_str(&format!("{},{},{},{},{}\n", r.parameter, r.mean_norm, r.std_norm, r.mean, r.std));
    }
    write_file(&out_path, text.as_bytes())?;
    cfg.write_resolved(&out_dir)?;
    Ok(rows)
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_DENORM_FILE: &str = "metrics_denormalized.csv";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const POSTERIOR_SAMPLES_FILE: &str = "posterior_samples.bin";

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<uq::MetricsReport> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.paths.dataset_dir)?;
    let ckpt = load_checkpoint(&cfg.paths.checkpoint, Some(&cfg.network))?;
    if ckpt.meta.dataset_hash != ds.manifest.config_hash {
        log::warn!("checkpoint was trained on a different dataset than {}", cfg.paths.dataset_dir.display());
    }
    let test = ds.manifest.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    let xs: Vec<&[f32]> = test.iter().map(|&i| ds.records[i].x.as_slice()).collect();
    let posts = mc_dropout_batch(&ckpt.model, &xs, &cfg.uq, cfg.seed, cfg.workers)?;
    let truths: Vec<Vec<f64>> = test
        .iter()
        .map(|&i| ds.records[i].theta_norm.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let means: Vec<Vec<f64>> = posts.iter().map(|p| p.mean.clone()).collect();
    let stds: Vec<Vec<f64>> = posts.iter().map(|p| p.std.clone()).collect();
    let names = &ds.manifest.targets;
    let report = compute_metrics(names, &means, &stds, &truths)?;
    let calib = calibration_curve(names, &means, &stds, &truths, &cfg.uq.levels)?;

    let dir = &cfg.paths.eval_dir;
    let _lock = DirLock::acquire(dir)?;
    let mut buf = Vec::new();
    uq::write_metrics_csv(&mut buf, &report)?;
    write_file(&dir.join(METRICS_FILE), &buf)?;
    let mut buf = Vec::new();
    uq::write_metrics_csv(&mut buf, &uq::denormalized(&report, &ds.manifest.gains))?;
    write_file(&dir.join(METRICS_DENORM_FILE), &buf)?;
    let mut buf = Vec::new();
    uq::write_calibration_csv(&mut buf, &calib)?;
    write_file(&dir.join(CALIBRATION_FILE), &buf)?;
    let mut buf = Vec::new();
    uq::write_predictions_csv(&mut buf, &prediction_rows(names, &test, &posts, &truths))?;
    write_file(&dir.join(PREDICTIONS_FILE), &buf)?;
    write_file(&dir.join(POSTERIOR_SAMPLES_FILE), &uq::posterior_samples_bytes(&posts))?;
    cfg.write_resolved(dir)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
}

pub fn cmd_report(cfg: &RunConfig) -> Result<ReportSummary> {
    let src = &cfg.paths.eval_dir;
    let need = |name: &str| -> Result<Vec<u8>> {
        let p = src.join(name);
        if !p.exists() {
            return Err(Error::Validation(format!("missing {} (run `spn evaluate` first)", p.display())));
        }
        read_file(&p)
    };
    let metrics_bytes = need(METRICS_FILE)?;
    let calib_bytes = need(CALIBRATION_FILE)?;
    let metrics = uq::read_metrics_csv(metrics_bytes.as_slice())?;
    let calib = uq::read_calibration_csv(calib_bytes.as_slice())?;
    let preds = uq::read_predictions_csv(need(PREDICTIONS_FILE)?.as_slice())?;
    let names: Vec<String> = metrics.params.iter().map(|p| p.parameter.clone()).collect();

    let dir = &cfg.paths.report_dir;
    let _lock = DirLock::acquire(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: String, bytes: &[u8]| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, bytes)?;
        files.push(p);
        Ok(())
    };
    for n in &names {
        emit(format!("calibration_{n}.svg"), report::calibration_svg(n, &calib).as_bytes())?;
        emit(format!("scatter_{n}.svg"), report::scatter_svg(n, &preds).as_bytes())?;
    }
    emit("distributions.svg".into(), report::distribution_svg(&names, &preds).as_bytes())?;
    emit(METRICS_FILE.into(), &metrics_bytes)?;
    emit(CALIBRATION_FILE.into(), &calib_bytes)?;
    let mut tables = String::from("## Results (normalised units)\n\n");
    tables.push_str(&report::format_metrics_table(&metrics));
    tables.push_str("\n## Ranking\n\n");
    tables.push_str(&report::format_ranking_table(&metrics));
    emit("tables.md".into(), tables.as_bytes())?;
    cfg.write_resolved(dir)?;
    Ok(ReportSummary { files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_override("dataset.n=8").unwrap();
        c.apply_override("train.adam.lr=0.001").unwrap();
        c.apply_override("paths.dataset_dir=out/ds").unwrap();
        c.apply_override("uq.levels.1=0.7").unwrap();
        assert_eq!(c.dataset.n, 8);
        assert_eq!(c.train.adam.lr, 0.001);
        assert_eq!(c.paths.dataset_dir, PathBuf::from("out/ds"));
        assert_eq!(c.uq.levels[1], 0.7);
        assert!(c.apply_override("dataset.nn=8").is_err());
        assert!(c.apply_override("dataset.n=minus").is_err());
        assert!(c.apply_override("novalue").is_err());
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.network.horizon = 100;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(a);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), 2);
        assert_eq!(exit_code(&Error::GenerationFailures { failed: 2, total: 10 }), 3);
        assert_eq!(exit_code(&Error::Numeric("nan".into())), 4);
    }
}
