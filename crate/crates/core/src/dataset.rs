//! Simulation campaigns: coefficient sampling, simulation, observation
//! dropout, normalisation, splitting and on-disk persistence.
//!
//! A dataset directory holds `manifest.json`, `samples.bin` and a small
//! human-readable `samples_preview.csv`. `samples.bin` is a flat sequence of
//! little-endian `f32`: for each record, the 13 normalised targets followed
//! by the `T × d_in` feature matrix in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariates::BasisDaily;
use crate::model::{
    self, build_two_patch_net, make_rate_schedule, sample_coefficients, CoefficientBounds,
    CoefficientVector, ModelConfig, N_COEFFICIENTS,
};
use crate::petri::{simulate_horizon, DayRates, PetriNet, Trajectory};
use crate::seed::{self, tags};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const PREVIEW_FILE: &str = "samples_preview.csv";
const FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    /// Delete logged firings and rebuild the daily snapshots.
    #[default]
    EventDrop,
    /// Carry the previous day's value forward in masked cells.
    CellMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropoutSpec {
    pub p_drop: f64,
    pub mode: DropoutMode,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self {
            p_drop: 0.2,
            mode: DropoutMode::EventDrop,
        }
    }
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Validation(format!("p_drop = {} outside [0, 1]", self.p_drop)));
        }
        Ok(())
    }

    fn needs_event_log(&self) -> bool {
        self.mode == DropoutMode::EventDrop && self.p_drop > 0.0
    }
}

/// Corrupted trajectory plus event accounting (event-drop mode only).
#[derive(Clone, Debug)]
pub struct DropoutOutcome {
    pub trajectory: Trajectory,
    pub total_events: usize,
    pub kept_events: usize,
}

/// Apply observation dropout to a simulated trajectory. The returned
/// trajectory carries no event log.
pub fn apply_event_dropout<R: Rng + ?Sized>(
    net: &PetriNet,
    trajectory: &Trajectory,
    spec: &DropoutSpec,
    rng: &mut R,
) -> Result<DropoutOutcome> {
    spec.validate()?;
    let n = trajectory.n_places;
    let horizon = trajectory.horizon();
    match spec.mode {
        DropoutMode::EventDrop => {
            if spec.p_drop == 0.0 {
                let total = trajectory.events.as_ref().map_or(0, Vec::len);
                return Ok(DropoutOutcome {
                    trajectory: Trajectory {
                        events: None,
                        ..trajectory.clone()
                    },
                    total_events: total,
                    kept_events: total,
                });
            }
            let events = trajectory.events.as_ref().ok_or_else(|| {
                Error::Config("event-drop dropout needs a trajectory simulated with an event log".into())
            })?;
            let mut counts = trajectory.initial.counts().to_vec();
            let mut states = Vec::with_capacity(horizon * n);
            let mut kept = 0;
            let mut it = events.iter().peekable();
            for d in 0..horizon {
                let day_end = (d + 1) as f64;
                while let Some(e) = it.next_if(|e| e.time < day_end) {
                    if rng.random::<f64>() >= spec.p_drop {
                        net.apply_saturating(&mut counts, e.transition);
                        kept += 1;
                    }
                }
                states.extend_from_slice(&counts);
            }
            Ok(DropoutOutcome {
                trajectory: Trajectory {
                    n_places: n,
                    states,
                    initial: trajectory.initial.clone(),
                    events: None,
                },
                total_events: events.len(),
                kept_events: kept,
            })
        }
        DropoutMode::CellMask => {
            let mut states = trajectory.states.clone();
            for d in 1..horizon {
                for p in 0..n {
                    if rng.random::<f64>() < spec.p_drop {
                        states[d * n + p] = states[(d - 1) * n + p];
                    }
                }
            }
            Ok(DropoutOutcome {
                trajectory: Trajectory {
                    n_places: n,
                    states,
                    initial: trajectory.initial.clone(),
                    events: None,
                },
                total_events: 0,
                kept_events: 0,
            })
        }
    }
}

/// Per-place divisor: a patch's initial human total for human places, its
/// initial mosquito total for mosquito places.
pub fn feature_scale(config: &ModelConfig) -> Vec<f64> {
    let init = &config.fixed.initial;
    (0..model::N_PATCHES)
        .flat_map(|_| {
            model::PLACE_KINDS.iter().map(|k| {
                if model::is_human_place(k) {
                    init.humans() as f64
                } else {
                    init.mosquitoes() as f64
                }
            })
        })
        .collect()
}

/// Row-major `T × d_in` features, not clamped.
pub fn normalize_features(trajectory: &Trajectory, scale: &[f64]) -> Vec<f32> {
    trajectory
        .states
        .chunks_exact(trajectory.n_places)
        .flat_map(|row| row.iter().zip(scale).map(|(&c, &s)| (c as f64 / s) as f32))
        .collect()
}

/// Inverse of [`normalize_features`] on integer counts.
pub fn denormalize_features(x: &[f32], scale: &[f64]) -> Vec<u64> {
    x.chunks_exact(scale.len())
        .flat_map(|row| {
            row.iter()
                .zip(scale)
                .map(|(&v, &s)| (f64::from(v) * s).round().max(0.0) as u64)
        })
        .collect()
}

/// `θ_k / ξ_k`; rejects coefficients outside `[0, ξ_k]`.
pub fn normalize_targets(theta: &CoefficientVector, bounds: &CoefficientBounds) -> Result<[f64; N_COEFFICIENTS]> {
    let mut out = [0.0; N_COEFFICIENTS];
    for (k, slot) in out.iter_mut().enumerate() {
        let gain = bounds.gain(k);
        let v = theta.0[k];
        let slack = 1e-12 * gain.max(1.0);
        if !(v >= -slack && v <= gain + slack) {
            return Err(Error::Validation(format!(
                "{} = {v} outside [0, {gain}]",
                model::COEFFICIENT_NAMES[k]
            )));
        }
        *slot = if gain > 0.0 { (v / gain).clamp(0.0, 1.0) } else { 0.0 };
    }
    Ok(out)
}

pub fn denormalize_targets(norm: &[f64], bounds: &CoefficientBounds) -> CoefficientVector {
    CoefficientVector(std::array::from_fn(|k| norm[k] * bounds.gain(k)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Seeded shuffle of `0..n`, then contiguous train / val / test blocks.
/// Validation and test sizes are `floor(n · f)`; the remainder goes to train.
pub fn split_dataset(n: usize, fractions: [f64; 3], seed_value: u64) -> Result<Vec<Split>> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Validation(format!("split fractions {fractions:?} outside [0, 1]")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("split fractions {fractions:?} do not sum to 1")));
    }
    let n_val = (n as f64 * fractions[1]).floor() as usize;
    let n_test = (n as f64 * fractions[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive(seed_value, tags::SPLIT, 0));
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut out = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n: usize,
    pub horizon: usize,
    pub runs_per_sample: usize,
    pub dropout: DropoutSpec,
    /// Train / validation / test.
    pub fractions: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n: 256,
            horizon: 365,
            runs_per_sample: 1,
            dropout: DropoutSpec::default(),
            fractions: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    /// Index of the θ draw this record belongs to.
    pub sample: usize,
    pub run: usize,
    pub seed: u64,
    pub split: Split,
    pub theta_raw: [f64; N_COEFFICIENTS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_samples: usize,
    pub horizon: usize,
    pub d_in: usize,
    pub n_targets: usize,
    pub places: Vec<String>,
    pub targets: Vec<String>,
    pub gains: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub dropout: DropoutSpec,
    pub runs_per_sample: usize,
    pub fractions: [f64; 3],
    pub master_seed: u64,
    pub model: ModelConfig,
    pub covariate_digest: String,
    pub failed_samples: Vec<usize>,
    pub records: Vec<RecordMeta>,
    pub samples_sha256: String,
    /// SHA-256 of this manifest serialised with an empty `config_hash`.
    pub config_hash: String,
}

impl DatasetManifest {
    pub fn record_len(&self) -> usize {
        self.n_targets + self.horizon * self.d_in
    }

    /// Byte offset of record `i` in `samples.bin`.
    pub fn offset(&self, i: usize) -> usize {
        i * self.record_len() * 4
    }

    pub fn compute_hash(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.config_hash.clear();
        sha256_hex(&serde_json::to_vec(&unsigned).expect("manifest serialises"))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub theta_norm: Vec<f32>,
    /// Row-major `T × d_in`.
    pub x: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.len() * self.manifest.record_len() * 4);
        for r in &self.records {
            for v in r.theta_norm.iter().chain(&r.x) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub fn covariate_digest(basis: &[BasisDaily]) -> String {
    sha256_hex(&serde_json::to_vec(basis).expect("basis serialises"))
}

/// One observed run: simulate under `schedule` with `run_seed`, thin with
/// `dropout`, and normalise to a `T × places` feature matrix.
pub fn simulate_observation(
    net: &PetriNet,
    schedule: &[DayRates],
    dropout: &DropoutSpec,
    scale: &[f64],
    run_seed: u64,
) -> Result<Vec<f32>> {
    let tr = simulate_horizon(net, schedule, &mut seed::rng(run_seed), dropout.needs_event_log())?;
    let mut drop_rng = seed::rng(seed::derive(run_seed, tags::DROPOUT, 0));
    let observed = apply_event_dropout(net, &tr, dropout, &mut drop_rng)?.trajectory;
    Ok(normalize_features(&observed, scale))
}

struct Generated {
    sample: usize,
    theta: CoefficientVector,
    runs: Vec<(u64, SampleRecord)>,
}

fn generate_sample(
    i: usize,
    net: &PetriNet,
    config: &ModelConfig,
    basis: &[BasisDaily],
    ds: &DatasetConfig,
    scale: &[f64],
    master_seed: u64,
) -> Result<Generated> {
    let sample_seed = seed::derive(master_seed, tags::SAMPLE, i as u64);
    let theta = sample_coefficients(
        &config.bounds,
        &mut seed::rng(seed::derive(sample_seed, tags::THETA, 0)),
    );
    let target = normalize_targets(&theta, &config.bounds)?;
    let theta_norm: Vec<f32> = target.iter().map(|&v| v as f32).collect();
    let schedule = make_rate_schedule(&theta, basis, config, ds.horizon)?;
    let mut runs = Vec::with_capacity(ds.runs_per_sample);
    for r in 0..ds.runs_per_sample {
        let run_seed = seed::derive(sample_seed, tags::SIMULATION, r as u64);
        runs.push((
            run_seed,
            SampleRecord {
                theta_norm: theta_norm.clone(),
                x: simulate_observation(net, &schedule, &ds.dropout, scale, run_seed)?,
            },
        ));
    }
    Ok(Generated {
        sample: i,
        theta,
        runs,
    })
}

/// Run a simulation campaign. Sample `i` depends only on `(master_seed, i)`,
/// so the output is identical for any `workers` count.
pub fn generate_dataset(
    config: &ModelConfig,
    basis: &[BasisDaily],
    ds: &DatasetConfig,
    master_seed: u64,
    workers: usize,
) -> Result<Dataset> {
    config.validate()?;
    ds.dropout.validate()?;
    if ds.runs_per_sample == 0 {
        return Err(Error::Config("runs_per_sample must be at least 1".into()));
    }
    let net = build_two_patch_net(&config.fixed, config.incidence)?;
    let scale = feature_scale(config);
    let splits = split_dataset(ds.n, ds.fractions, master_seed)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<Generated>> = pool.install(|| {
        (0..ds.n)
            .into_par_iter()
            .map(|i| generate_sample(i, &net, config, basis, ds, &scale, master_seed))
            .collect()
    });

    let mut failed = Vec::new();
    let mut metas = Vec::new();
    let mut records = Vec::new();
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok(g) => {
                for (run, (run_seed, rec)) in g.runs.into_iter().enumerate() {
                    metas.push(RecordMeta {
                        sample: g.sample,
                        run,
                        seed: run_seed,
                        split: splits[g.sample],
                        theta_raw: g.theta.0,
                    });
                    records.push(rec);
                }
            }
            Err(e) => {
                log::error!("sample {i} failed: {e}");
                failed.push(i);
            }
        }
    }
    if failed.len() * 100 > ds.n {
        return Err(Error::GenerationFailures {
            failed: failed.len(),
            total: ds.n,
        });
    }

    let mut manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n_samples: ds.n,
        horizon: ds.horizon,
        d_in: scale.len(),
        n_targets: N_COEFFICIENTS,
        places: net.places().to_vec(),
        targets: model::COEFFICIENT_NAMES.iter().map(|s| s.to_string()).collect(),
        gains: config.bounds.gains().to_vec(),
        feature_scale: scale,
        dropout: ds.dropout,
        runs_per_sample: ds.runs_per_sample,
        fractions: ds.fractions,
        master_seed,
        model: config.clone(),
        covariate_digest: covariate_digest(basis),
        failed_samples: failed,
        records: metas,
        samples_sha256: String::new(),
        config_hash: String::new(),
    };
    let mut dataset = Dataset {
        manifest: manifest.clone(),
        records,
    };
    manifest.samples_sha256 = sha256_hex(&dataset.to_bytes());
    manifest.config_hash = manifest.compute_hash();
    dataset.manifest = manifest;
    Ok(dataset)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = serde_json::to_vec_pretty(&dataset.manifest)?;
    manifest.push(b'\n');
    write_file(&dir.join(MANIFEST_FILE), &manifest)?;
    write_file(&dir.join(SAMPLES_FILE), &dataset.to_bytes())?;

    let mut preview = Vec::new();
    {
        let m = &dataset.manifest;
        let mut header = vec!["record".to_string(), "day".to_string()];
        header.extend(m.places.iter().cloned());
        writeln!(preview, "{}", header.join(",")).expect("write to Vec");
        for (i, r) in dataset.records.iter().take(3).enumerate() {
            for (d, row) in r.x.chunks_exact(m.d_in).enumerate() {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(preview, "{i},{},{}", d + 1, cells.join(",")).expect("write to Vec");
            }
        }
    }
    write_file(&dir.join(PREVIEW_FILE), &preview)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&text)
        .map_err(|e| Error::load(&manifest_path, format!("unreadable manifest: {e}")))?;
    if manifest.compute_hash() != manifest.config_hash {
        return Err(Error::load(&manifest_path, "config hash mismatch"));
    }
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::load(
            &manifest_path,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let samples_path = dir.join(SAMPLES_FILE);
    let bytes = fs::read(&samples_path).map_err(|e| Error::io(&samples_path, e))?;
    let expected = manifest.records.len() * manifest.record_len() * 4;
    if bytes.len() != expected {
        return Err(Error::load(
            &samples_path,
            format!("{} bytes, layout requires {expected}", bytes.len()),
        ));
    }
    if sha256_hex(&bytes) != manifest.samples_sha256 {
        return Err(Error::load(&samples_path, "sample data does not match manifest digest"));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let records = floats
        .chunks_exact(manifest.record_len().max(1))
        .take(manifest.records.len())
        .map(|chunk| SampleRecord {
            theta_norm: chunk[..manifest.n_targets].to_vec(),
            x: chunk[manifest.n_targets..].to_vec(),
        })
        .collect();
    Ok(Dataset { manifest, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::{compute_basis, synthetic_covariates, SyntheticClimate};
    use crate::petri::{Event, Marking};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn basis(horizon: usize) -> Vec<BasisDaily> {
        synthetic_covariates(42, horizon, 2, &SyntheticClimate::default())
            .iter()
            .map(|s| compute_basis(s, &Default::default()))
            .collect()
    }

    fn small(n: usize, horizon: usize) -> DatasetConfig {
        DatasetConfig {
            n,
            horizon,
            ..Default::default()
        }
    }

    #[test]
    fn empty_campaign_has_valid_manifest() {
        let ds = generate_dataset(&ModelConfig::default(), &basis(10), &small(0, 10), 42, 1).unwrap();
        assert!(ds.records.is_empty());
        assert_eq!(ds.manifest.config_hash, ds.manifest.compute_hash());
        assert_eq!(ds.manifest.d_in, 14);
    }

    #[test]
    fn campaign_is_independent_of_workers() {
        let b = basis(40);
        let cfg = ModelConfig::default();
        let one = generate_dataset(&cfg, &b, &small(6, 40), 7, 1).unwrap();
        let many = generate_dataset(&cfg, &b, &small(6, 40), 7, 3).unwrap();
        assert_eq!(one, many);
        let other = generate_dataset(&cfg, &b, &small(6, 40), 8, 1).unwrap();
        assert_ne!(one.records, other.records);
    }

    #[test]
    fn samples_do_not_depend_on_campaign_size() {
        let b = basis(30);
        let cfg = ModelConfig::default();
        let five = generate_dataset(&cfg, &b, &small(5, 30), 9, 1).unwrap();
        let three = generate_dataset(&cfg, &b, &small(3, 30), 9, 1).unwrap();
        assert_eq!(&five.records[..3], &three.records[..]);
    }

    #[test]
    fn runs_share_theta() {
        let ds = DatasetConfig {
            runs_per_sample: 2,
            ..small(3, 20)
        };
        let out = generate_dataset(&ModelConfig::default(), &basis(20), &ds, 1, 1).unwrap();
        assert_eq!(out.records.len(), 6);
        let m = &out.manifest.records;
        assert_eq!(m[0].theta_raw, m[1].theta_raw);
        assert_eq!(m[0].split, m[1].split);
        assert_ne!(out.records[0].x, out.records[1].x);
    }

    fn toy_net() -> PetriNet {
        use crate::petri::{HazardLaw, TransitionSpec};
        PetriNet::new(
            vec!["A".into(), "B".into()],
            vec![TransitionSpec::new("t", "r", HazardLaw::PerCapita { place: "A".into() }).moves("A", "B")],
            Marking::new(vec![20_000, 0]),
        )
        .unwrap()
    }

    fn toy_trajectory(events: usize) -> Trajectory {
        let ev: Vec<Event> = (0..events)
            .map(|k| Event {
                time: k as f64 / events as f64 * 3.0,
                transition: 0,
            })
            .collect();
        let mut states = Vec::new();
        for d in 1..=3 {
            let fired = ev.iter().filter(|e| e.time < d as f64).count() as u64;
            states.extend_from_slice(&[20_000 - fired, fired]);
        }
        Trajectory {
            n_places: 2,
            states,
            initial: Marking::new(vec![20_000, 0]),
            events: Some(ev),
        }
    }

    #[test]
    fn dropout_zero_is_identity() {
        let net = toy_net();
        let tr = toy_trajectory(300);
        for mode in [DropoutMode::EventDrop, DropoutMode::CellMask] {
            let spec = DropoutSpec { p_drop: 0.0, mode };
            let out = apply_event_dropout(&net, &tr, &spec, &mut seed::rng(1)).unwrap();
            assert_eq!(out.trajectory.states, tr.states);
        }
    }

    #[test]
    fn full_cell_mask_carries_first_row() {
        let net = toy_net();
        let tr = toy_trajectory(300);
        let spec = DropoutSpec {
            p_drop: 1.0,
            mode: DropoutMode::CellMask,
        };
        let out = apply_event_dropout(&net, &tr, &spec, &mut seed::rng(1)).unwrap();
        for row in out.trajectory.rows() {
            assert_eq!(row, tr.row(0));
        }
    }

    #[test]
    fn event_drop_keeps_about_eighty_percent() {
        let net = toy_net();
        let tr = toy_trajectory(10_000);
        let spec = DropoutSpec::default();
        let out = apply_event_dropout(&net, &tr, &spec, &mut seed::rng(2)).unwrap();
        let frac = out.kept_events as f64 / out.total_events as f64;
        assert!((frac - 0.8).abs() <= 0.012, "kept fraction {frac}");
        let last = out.trajectory.row(2);
        assert_eq!(last[1] as usize, out.kept_events);
    }

    #[test]
    fn event_drop_requires_log() {
        let net = toy_net();
        let mut tr = toy_trajectory(10);
        tr.events = None;
        let r = apply_event_dropout(&net, &tr, &DropoutSpec::default(), &mut seed::rng(0));
        assert!(matches!(r, Err(Error::Config(_))));
        let bad = DropoutSpec { p_drop: 1.5, mode: DropoutMode::CellMask };
        assert!(apply_event_dropout(&net, &tr, &bad, &mut seed::rng(0)).is_err());
    }

    #[test]
    fn feature_normalisation() {
        let cfg = ModelConfig::default();
        let scale = feature_scale(&cfg);
        let net = build_two_patch_net(&cfg.fixed, cfg.incidence).unwrap();
        let tr = Trajectory {
            n_places: 14,
            states: net.initial().counts().to_vec(),
            initial: net.initial().clone(),
            events: None,
        };
        let x = normalize_features(&tr, &scale);
        assert_relative_eq!(f64::from(x[0]), 4000.0 / 4040.0, max_relative = 1e-7);
        assert_eq!(x[5], 0.0);
        assert_eq!(denormalize_features(&x, &scale), tr.states);
    }

    #[test]
    fn target_normalisation() {
        let b = CoefficientBounds::default();
        let full = CoefficientVector(b.gains());
        assert_eq!(normalize_targets(&full, &b).unwrap(), [1.0; N_COEFFICIENTS]);
        let zero = CoefficientVector([0.0; N_COEFFICIENTS]);
        assert_eq!(normalize_targets(&zero, &b).unwrap(), [0.0; N_COEFFICIENTS]);
        let mut half = [0.0; N_COEFFICIENTS];
        half[0] = 0.395;
        assert_relative_eq!(normalize_targets(&CoefficientVector(half), &b).unwrap()[0], 0.5, epsilon = 1e-12);
        half[12] = 0.5;
        assert!(matches!(normalize_targets(&CoefficientVector(half), &b), Err(Error::Validation(_))));
    }

    #[test]
    fn split_sizes() {
        let count = |s: &[Split], k| s.iter().filter(|&&x| x == k).count();
        let s = split_dataset(10, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)), (8, 1, 1));
        let s = split_dataset(1204, [0.8, 0.1, 0.1], 42).unwrap();
        assert_eq!((count(&s, Split::Train), count(&s, Split::Val), count(&s, Split::Test)), (964, 120, 120));
        assert_eq!(s, split_dataset(1204, [0.8, 0.1, 0.1], 42).unwrap());
        assert!(split_dataset(10, [1.2, -0.1, -0.1], 1).is_err());
        assert!(split_dataset(10, [0.5, 0.1, 0.1], 1).is_err());
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&ModelConfig::default(), &basis(25), &small(4, 25), 3, 1).unwrap();
        save_dataset(dir.path(), &ds).unwrap();
        let size = fs::metadata(dir.path().join(SAMPLES_FILE)).unwrap().len();
        assert_eq!(size as usize, 4 * (13 + 25 * 14) * 4);
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);

        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap();
        let tampered = text.replacen("\"horizon\": 25", "\"horizon\": 26", 1);
        assert_ne!(text, tampered);
        fs::write(&mpath, tampered).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Load { .. })));

        fs::write(&mpath, &text).unwrap();
        let spath = dir.path().join(SAMPLES_FILE);
        let mut bytes = fs::read(&spath).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&spath, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Load { .. })));
    }

    proptest! {
        #[test]
        fn target_round_trip(seed_value in any::<u64>()) {
            let b = CoefficientBounds::default();
            let th = sample_coefficients(&b, &mut seed::rng(seed_value));
            let back = denormalize_targets(&normalize_targets(&th, &b).unwrap(), &b);
            for k in 0..N_COEFFICIENTS {
                prop_assert!((back.0[k] - th.0[k]).abs() <= 1e-15);
            }
        }

        #[test]
        fn feature_round_trip(counts in proptest::collection::vec(0u64..8081, 14)) {
            let scale = feature_scale(&ModelConfig::default());
            let tr = Trajectory { n_places: 14, states: counts.clone(), initial: Marking::zeros(14), events: None };
            prop_assert_eq!(denormalize_features(&normalize_features(&tr, &scale), &scale), counts);
        }
    }
}
