//! Monte Carlo dropout posteriors and the evaluation metrics.
//!
//! All metrics are computed on normalised coefficients; the `denormalized`
//! helpers only rescale for display.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::nn::{Mode, ResNet};
use crate::seed::{self, tags};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UqConfig {
    pub passes: usize,
    pub tau_inv: f64,
    pub levels: Vec<f64>,
    /// Keep dropout active during prediction; off gives `M` identical passes.
    pub mc_dropout: bool,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            passes: 50,
            tau_inv: 0.0,
            levels: vec![0.5, 0.68, 0.9, 0.95],
            mc_dropout: true,
        }
    }
}

impl UqConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::Validation("number of MC passes must be at least 1".into()));
        }
        if !(self.tau_inv >= 0.0) {
            return Err(Error::Validation(format!("tau_inv = {} must be non-negative", self.tau_inv)));
        }
        if let Some(q) = self.levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::Validation(format!("calibration level {q} outside (0, 1)")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `M × d`, row-major.
    pub samples: Vec<f32>,
}

/// Mean and standard deviation of `M × d` samples with
/// `var = τ⁻¹ + mean(θ²) − mean(θ)²`, floored at zero.
///
/// The second moment is taken about the first sample, which leaves the
/// variance unchanged but makes identical samples give exactly zero.
pub fn summarize(samples: &[f32], d: usize, tau_inv: f64) -> Result<Posterior> {
    if d == 0 || samples.is_empty() || samples.len() % d != 0 {
        return Err(Error::Validation(format!("{} samples cannot be split into rows of {d}", samples.len())));
    }
    let m = samples.len() / d;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for k in 0..d {
        let col = || samples.iter().skip(k).step_by(d).map(|&v| f64::from(v));
        let shift = f64::from(samples[k]);
        let (mut s, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for v in col() {
            s += v;
            s1 += v - shift;
            s2 += (v - shift) * (v - shift);
        }
        mean[k] = s / m as f64;
        let m1 = s1 / m as f64;
        let var = tau_inv + s2 / m as f64 - m1 * m1;
        std[k] = var.max(0.0).sqrt();
    }
    Ok(Posterior {
        mean,
        std,
        samples: samples.to_vec(),
    })
}

/// `M` stochastic passes over one `T × d_in` input.
pub fn mc_dropout_predict(model: &ResNet<f32>, x: &[f32], config: &UqConfig, seed_value: u64) -> Result<Posterior> {
    config.validate()?;
    let m = config.passes;
    let mut batch = Vec::with_capacity(m * x.len());
    for _ in 0..m {
        batch.extend_from_slice(x);
    }
    let mut rng = seed::rng(seed_value);
    let mode = if config.mc_dropout { Mode::McDropout } else { Mode::Eval };
    let samples = model.predict(&batch, m, mode, &mut rng)?;
    summarize(&samples, model.config().d_out, config.tau_inv)
}

/// Sample `i` uses the mask stream `derive(seed, MC, i)`; results come back
/// in input order whatever the worker count.
pub fn mc_dropout_batch(
    model: &ResNet<f32>,
    inputs: &[&[f32]],
    config: &UqConfig,
    seed_value: u64,
    workers: usize,
) -> Result<Vec<Posterior>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, x)| mc_dropout_predict(model, x, config, seed::derive(seed_value, tags::MC, i as u64)))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub parameter: String,
    pub bias: f64,
    pub rmse: f64,
    pub avg_std: f64,
    pub coverage_1sigma: f64,
    pub ratio: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub params: Vec<ParamMetrics>,
    pub overall_rmse: f64,
}

fn check_lengths(means: &[Vec<f64>], stds: &[Vec<f64>], truths: &[Vec<f64>], d: usize) -> Result<()> {
    if means.is_empty() {
        return Err(Error::Validation("no test samples".into()));
    }
    if means.len() != stds.len() || means.len() != truths.len() {
        return Err(Error::Validation(format!(
            "{} means, {} stds, {} truths",
            means.len(),
            stds.len(),
            truths.len()
        )));
    }
    if means.iter().chain(stds).chain(truths).any(|v| v.len() != d) {
        return Err(Error::Validation(format!("every sample needs {d} values")));
    }
    Ok(())
}

/// Indices sorted by ratio ascending, ties by index, infinities last.
pub fn rank_order(ratios: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| ratios[a].total_cmp(&ratios[b]).then(a.cmp(&b)));
    order
}

pub fn compute_metrics(names: &[String], means: &[Vec<f64>], stds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<MetricsReport> {
    let d = names.len();
    check_lengths(means, stds, truths, d)?;
    let n = means.len() as f64;
    let mut params: Vec<ParamMetrics> = (0..d)
        .map(|k| {
            let (mut pred, mut truth, mut se, mut sd, mut covered) = (0.0, 0.0, 0.0, 0.0, 0usize);
            for i in 0..means.len() {
                let e = means[i][k] - truths[i][k];
                pred += means[i][k];
                truth += truths[i][k];
                se += e * e;
                sd += stds[i][k];
                if e.abs() <= stds[i][k] {
                    covered += 1;
                }
            }
            let rmse = (se / n).sqrt();
            let avg_std = sd / n;
            ParamMetrics {
                parameter: names[k].clone(),
                bias: ((pred - truth) / n).abs(),
                rmse,
                avg_std,
                coverage_1sigma: covered as f64 / n,
                ratio: if avg_std > 0.0 { rmse / avg_std } else { f64::INFINITY },
                rank: 0,
            }
        })
        .collect();
    let ratios: Vec<f64> = params.iter().map(|p| p.ratio).collect();
    for (r, &k) in rank_order(&ratios).iter().enumerate() {
        params[k].rank = r + 1;
    }
    let overall_rmse = params.iter().map(|p| p.rmse).sum::<f64>() / d.max(1) as f64;
    Ok(MetricsReport { params, overall_rmse })
}

/// Multiply bias, RMSE and average std by each parameter's gain.
pub fn denormalized(report: &MetricsReport, gains: &[f64]) -> MetricsReport {
    let params: Vec<ParamMetrics> = report
        .params
        .iter()
        .zip(gains)
        .map(|(p, &g)| ParamMetrics {
            bias: p.bias * g,
            rmse: p.rmse * g,
            avg_std: p.avg_std * g,
            ..p.clone()
        })
        .collect();
    let overall_rmse = params.iter().map(|p| p.rmse).sum::<f64>() / params.len().max(1) as f64;
    MetricsReport { params, overall_rmse }
}

/// Two-sided Gaussian half-width for central coverage `q`.
pub fn z_for_level(q: f64) -> f64 {
    Normal::standard().inverse_cdf((1.0 + q) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub parameter: String,
    pub nominal: f64,
    pub empirical: f64,
}

pub fn calibration_curve(
    names: &[String],
    means: &[Vec<f64>],
    stds: &[Vec<f64>],
    truths: &[Vec<f64>],
    levels: &[f64],
) -> Result<Vec<CalibrationPoint>> {
    check_lengths(means, stds, truths, names.len())?;
    let mut out = Vec::with_capacity(names.len() * levels.len());
    for (k, name) in names.iter().enumerate() {
        for &q in levels {
            let z = z_for_level(q);
            let hits = (0..means.len())
                .filter(|&i| (means[i][k] - truths[i][k]).abs() <= z * stds[i][k])
                .count();
            out.push(CalibrationPoint {
                parameter: name.clone(),
                nominal: q,
                empirical: hits as f64 / means.len() as f64,
            });
        }
    }
    Ok(out)
}

pub const METRICS_HEADER: [&str; 7] = ["parameter", "bias", "rmse", "avg_std", "coverage_1sigma", "ratio", "rank"];

pub fn write_metrics_csv<W: Write>(writer: W, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for p in &report.params {
        w.write_record([
            p.parameter.clone(),
            p.bias.to_string(),
            p.rmse.to_string(),
            p.avg_std.to_string(),
            p.coverage_1sigma.to_string(),
            p.ratio.to_string(),
            p.rank.to_string(),
        ])?;
    }
    w.write_record(["overall", "", &report.overall_rmse.to_string(), "", "", "", ""])?;
    w.flush().map_err(|e| Error::io("metrics.csv", e))?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(reader: R) -> Result<MetricsReport> {
    let mut r = csv::Reader::from_reader(reader);
    let mut params = Vec::new();
    let mut overall = None;
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Ingestion(format!("metrics.csv: `{s}` is not a number")))
    };
    for row in r.records() {
        let row = row?;
        if row.len() != METRICS_HEADER.len() {
            return Err(Error::Ingestion("metrics.csv: wrong column count".into()));
        }
        if &row[0] == "overall" {
            overall = Some(num(&row[2])?);
            continue;
        }
        params.push(ParamMetrics {
            parameter: row[0].to_string(),
            bias: num(&row[1])?,
            rmse: num(&row[2])?,
            avg_std: num(&row[3])?,
            coverage_1sigma: num(&row[4])?,
            ratio: num(&row[5])?,
            rank: row[6]
                .parse()
                .map_err(|_| Error::Ingestion(format!("metrics.csv: bad rank `{}`", &row[6])))?,
        });
    }
    let overall_rmse = overall.ok_or_else(|| Error::Ingestion("metrics.csv: no overall row".into()))?;
    Ok(MetricsReport { params, overall_rmse })
}

pub fn write_calibration_csv<W: Write>(writer: W, points: &[CalibrationPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io("calibration.csv", e))?;
    Ok(())
}

pub fn read_calibration_csv<R: Read>(reader: R) -> Result<Vec<CalibrationPoint>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// One row per (test sample, parameter), normalised units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample: usize,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn prediction_rows(names: &[String], ids: &[usize], posts: &[Posterior], truths: &[Vec<f64>]) -> Vec<PredictionRow> {
    let mut out = Vec::with_capacity(posts.len() * names.len());
    for ((&id, p), t) in ids.iter().zip(posts).zip(truths) {
        for (k, name) in names.iter().enumerate() {
            out.push(PredictionRow {
                sample: id,
                parameter: name.clone(),
                truth: t[k],
                mean: p.mean[k],
                std: p.std[k],
            });
        }
    }
    out
}

pub fn write_predictions_csv<W: Write>(writer: W, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("predictions.csv", e))?;
    Ok(())
}

pub fn read_predictions_csv<R: Read>(reader: R) -> Result<Vec<PredictionRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Concatenated `M × d` float32 little-endian blocks, one per sample.
pub fn posterior_samples_bytes(posts: &[Posterior]) -> Vec<u8> {
    posts
        .iter()
        .flat_map(|p| p.samples.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}
