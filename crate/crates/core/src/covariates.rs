//! Environmental covariates: weather ingestion, smoothing, patch
//! aggregation and the temperature/humidity basis functions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::{Error, Result};

/// Mean Earth radius in statute miles.
const EARTH_RADIUS_MILES: f64 = 3958.8;

const ZERO_CELSIUS_IN_KELVIN: f64 = 273.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TempUnit {
    F,
    C,
}

pub fn f_to_c(t_f: f64) -> f64 {
    5.0 / 9.0 * (t_f - 32.0)
}

/// One row of the station weather table.
#[derive(Clone, Debug, PartialEq)]
pub struct StationRecord {
    pub date: NaiveDate,
    pub station: String,
    pub patch: String,
    pub t_avg: Option<f64>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub rh_min: Option<f64>,
    pub rh_max: Option<f64>,
    pub rh_avg: Option<f64>,
    pub unit: TempUnit,
}

impl StationRecord {
    fn to_celsius(&self, t: Option<f64>) -> Option<f64> {
        match self.unit {
            TempUnit::C => t,
            TempUnit::F => t.map(f_to_c),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("rh_min", self.rh_min),
            ("rh_max", self.rh_max),
            ("rh_avg", self.rh_avg),
        ] {
            if let Some(v) = v {
                if !(0.0..=100.0).contains(&v) {
                    return Err(format!("{name} = {v} outside [0, 100]"));
                }
            }
        }
        if let (Some(lo), Some(mid), Some(hi)) = (self.t_min, self.t_avg, self.t_max) {
            if !(lo <= mid && mid <= hi) {
                return Err(format!("temperatures not ordered: min {lo}, avg {mid}, max {hi}"));
            }
        }
        Ok(())
    }
}

pub const WEATHER_COLUMNS: [&str; 9] = [
    "date", "station", "patch", "t_avg", "t_min", "t_max", "rh_min", "rh_max", "unit",
];

/// Parse the station weather CSV. An optional `rh_avg` column is accepted.
pub fn read_weather_csv<R: Read>(reader: R) -> Result<Vec<StationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let mut idx = BTreeMap::new();
    for name in WEATHER_COLUMNS {
        let i = col(name)
            .ok_or_else(|| Error::Ingestion(format!("missing required column `{name}`")))?;
        idx.insert(name, i);
    }
    let rh_avg_col = col("rh_avg");

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        let field = |name: &str| rec.get(idx[name]).unwrap_or("");
        let num = |name: &str, cell: &str| -> Result<Option<f64>> {
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| Error::Ingestion(format!("row {line}: `{name}` = `{cell}` is not a number")))
        };
        let date = NaiveDate::parse_from_str(field("date"), "%Y-%m-%d").map_err(|_| {
            Error::Ingestion(format!("row {line}: `date` = `{}` is not YYYY-MM-DD", field("date")))
        })?;
        let unit = match field("unit") {
            "F" | "f" => TempUnit::F,
            "C" | "c" => TempUnit::C,
            other => {
                return Err(Error::Ingestion(format!(
                    "row {line}: `unit` = `{other}` must be F or C"
                )))
            }
        };
        let station = field("station").to_string();
        let patch = field("patch").to_string();
        if station.is_empty() || patch.is_empty() {
            return Err(Error::Ingestion(format!("row {line}: empty station or patch")));
        }
        let r = StationRecord {
            date,
            station,
            patch,
            t_avg: num("t_avg", field("t_avg"))?,
            t_min: num("t_min", field("t_min"))?,
            t_max: num("t_max", field("t_max"))?,
            rh_min: num("rh_min", field("rh_min"))?,
            rh_max: num("rh_max", field("rh_max"))?,
            rh_avg: match rh_avg_col {
                Some(i) => num("rh_avg", rec.get(i).unwrap_or(""))?,
                None => None,
            },
            unit,
        };
        r.validate()
            .map_err(|msg| Error::Ingestion(format!("row {line}: {msg}")))?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_weather_file(path: &Path) -> Result<Vec<StationRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_weather_csv(f)
}

/// Daily weather of one patch, temperatures in °C and humidity in %.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchCovariateSeries {
    pub patch: String,
    pub t: Vec<f64>,
    pub t_min: Vec<f64>,
    pub t_max: Vec<f64>,
    pub rh: Vec<f64>,
    pub rh_min: Vec<f64>,
    pub rh_max: Vec<f64>,
}

impl PatchCovariateSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Constant weather, mostly for tests.
    pub fn constant(patch: &str, days: usize, t: (f64, f64, f64), rh: (f64, f64)) -> Self {
        Self {
            patch: patch.into(),
            t: vec![t.0; days],
            t_min: vec![t.1; days],
            t_max: vec![t.2; days],
            rh: vec![(rh.0 + rh.1) / 2.0; days],
            rh_min: vec![rh.0; days],
            rh_max: vec![rh.1; days],
        }
    }
}

const HALF_WINDOW: usize = 3;

/// Linear interpolation over gaps; values before the first and after the
/// last observation are held at the nearest observation. `None` when the
/// series has no observation at all.
pub fn interpolate_gaps(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (known.first()?, known.last()?);
    let mut out = vec![0.0; values.len()];
    out[..=first_i].fill(first_v);
    out[last_i..].fill(last_v);
    for w in known.windows(2) {
        let (i0, v0) = w[0];
        let (i1, v1) = w[1];
        for (k, slot) in out.iter_mut().enumerate().take(i1 + 1).skip(i0) {
            let f = (k - i0) as f64 / (i1 - i0) as f64;
            *slot = v0 + f * (v1 - v0);
        }
    }
    Some(out)
}

/// Centered 7-day moving average. Near the ends the window shrinks
/// symmetrically so it stays centered on the day.
pub fn centered_moving_average(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|d| {
            let h = HALF_WINDOW.min(d).min(n - 1 - d);
            let w = &values[d - h..=d + h];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Field {
    TAvg,
    TMin,
    TMax,
    RhMin,
    RhMax,
}

impl Field {
    const ALL: [Field; 5] = [Field::TAvg, Field::TMin, Field::TMax, Field::RhMin, Field::RhMax];

    fn name(self) -> &'static str {
        match self {
            Field::TAvg => "t_avg",
            Field::TMin => "t_min",
            Field::TMax => "t_max",
            Field::RhMin => "rh_min",
            Field::RhMax => "rh_max",
        }
    }

    fn get(self, r: &StationRecord) -> Option<f64> {
        match self {
            Field::TAvg => r.to_celsius(r.t_avg),
            Field::TMin => r.to_celsius(r.t_min),
            Field::TMax => r.to_celsius(r.t_max),
            Field::RhMin => r.rh_min,
            Field::RhMax => r.rh_max,
        }
    }
}

/// Unit normalisation, per-station interpolation, centered smoothing, then
/// the per-day mean over each patch's stations. Day 0 is the earliest date
/// in `records`; patches are returned sorted by id.
pub fn preprocess_daily(
    records: &[StationRecord],
    horizon: usize,
) -> Result<Vec<PatchCovariateSeries>> {
    if horizon == 0 {
        return Err(Error::Validation("horizon must be at least one day".into()));
    }
    let start = records
        .iter()
        .map(|r| r.date)
        .min()
        .ok_or_else(|| Error::Config("weather table has no rows, so no patch has a station".into()))?;

    // patch → station → records
    let mut patches: BTreeMap<&str, BTreeMap<&str, Vec<&StationRecord>>> = BTreeMap::new();
    for r in records {
        patches
            .entry(r.patch.as_str())
            .or_default()
            .entry(r.station.as_str())
            .or_default()
            .push(r);
    }

    let mut out = Vec::with_capacity(patches.len());
    for (patch, stations) in patches {
        let mut fields: Vec<Vec<f64>> = Vec::with_capacity(Field::ALL.len());
        for field in Field::ALL {
            let mut smoothed_per_station = Vec::new();
            for rows in stations.values() {
                let mut sums = vec![(0.0, 0u32); horizon];
                for r in rows {
                    let day = (r.date - start).num_days() as usize;
                    if day >= horizon {
                        continue;
                    }
                    if let Some(v) = field.get(r) {
                        sums[day].0 += v;
                        sums[day].1 += 1;
                    }
                }
                let raw: Vec<Option<f64>> = sums
                    .iter()
                    .map(|&(s, c)| (c > 0).then(|| s / f64::from(c)))
                    .collect();
                if let Some(filled) = interpolate_gaps(&raw) {
                    smoothed_per_station.push(centered_moving_average(&filled));
                }
            }
            if smoothed_per_station.is_empty() {
                return Err(Error::Ingestion(format!(
                    "patch `{patch}`: field `{}` has no observations",
                    field.name()
                )));
            }
            let k = smoothed_per_station.len() as f64;
            fields.push(
                (0..horizon)
                    .map(|d| smoothed_per_station.iter().map(|s| s[d]).sum::<f64>() / k)
                    .collect(),
            );
        }
        let [t, t_min, t_max, rh_min, rh_max]: [Vec<f64>; 5] =
            fields.try_into().expect("five fields");
        let rh = rh_min
            .iter()
            .zip(&rh_max)
            .map(|(lo, hi)| (lo + hi) / 2.0)
            .collect();
        out.push(PatchCovariateSeries {
            patch: patch.to_string(),
            t,
            t_min,
            t_max,
            rh,
            rh_min,
            rh_max,
        });
    }
    Ok(out)
}

/// Constants of the thermal, mortality and humidity responses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisParams {
    pub a_b: f64,
    pub a_m: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub k: f64,
    pub rh_opt: f64,
    pub psi_ad: f64,
    pub ae_ad: f64,
    pub r_gas: f64,
}

impl Default for BasisParams {
    fn default() -> Self {
        let a_b = 2.71e-4;
        Self {
            a_b,
            a_m: a_b / 10.0,
            t_min: 14.67,
            t_max: 41.0,
            k: 0.1,
            rh_opt: 70.0,
            psi_ad: 13_327.0,
            ae_ad: 53_135.0,
            r_gas: 8.314,
        }
    }
}

impl BasisParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(Error::Config(format!(
                "basis T_min {} must be below T_max {}",
                self.t_min, self.t_max
            )));
        }
        let positive = [
            ("a_b", self.a_b),
            ("a_m", self.a_m),
            ("k", self.k),
            ("rh_opt", self.rh_opt),
            ("psi_ad", self.psi_ad),
            ("ae_ad", self.ae_ad),
            ("r_gas", self.r_gas),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("basis parameter {name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

fn unit_clamp(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Brière thermal response, zero outside the open interval `(t_min, t_max)`.
pub fn briere(t: f64, a: f64, t_min: f64, t_max: f64) -> f64 {
    if t > t_min && t < t_max {
        unit_clamp(a * t * (t - t_min) * (t_max - t).sqrt())
    } else {
        0.0
    }
}

/// Hour-of-day temperature on a sine profile through the daily min and max.
pub fn hourly_temperature(t_mean: f64, t_lo: f64, t_hi: f64, hour: u32) -> f64 {
    t_mean + (t_hi - t_lo) / 2.0 * (2.0 * PI * f64::from(hour) / 24.0 - PI / 2.0).sin()
}

/// Mean Brière response over a reconstructed 24-hour temperature profile.
pub fn briere_diurnal_avg(
    t_mean: f64,
    t_lo: f64,
    t_hi: f64,
    a: f64,
    t_min: f64,
    t_max: f64,
) -> f64 {
    let (lo, hi) = if t_lo <= t_hi { (t_lo, t_hi) } else { (t_hi, t_lo) };
    let mean = t_mean.clamp(lo, hi);
    let total: f64 = (0..24)
        .map(|h| briere(hourly_temperature(mean, lo, hi, h), a, t_min, t_max))
        .sum();
    unit_clamp(total / 24.0)
}

/// Eyring rate law on temperature in °C.
pub fn eyring(t: f64, psi_ad: f64, ae_ad: f64, r_gas: f64) -> f64 {
    let tk = t + ZERO_CELSIUS_IN_KELVIN;
    unit_clamp(psi_ad * tk * (-ae_ad / (r_gas * tk)).exp())
}

pub fn logistic_rh(rh: f64, k: f64, rh_opt: f64) -> f64 {
    1.0 / (1.0 + (-k * (rh - rh_opt)).exp())
}

/// Half-cosine humidity profile: the daily minimum at hour 0, the maximum at hour 12.
pub fn hourly_humidity(rh_lo: f64, rh_hi: f64, hour: u32) -> f64 {
    rh_lo + (rh_hi - rh_lo) / 2.0 * (1.0 - (2.0 * PI * f64::from(hour) / 24.0).cos())
}

pub const HUMIDITY_SAMPLE_HOURS: [u32; 6] = [0, 4, 8, 12, 16, 20];

/// Mean logistic humidity response over six four-hourly samples.
pub fn rh_diurnal_logistic_avg(rh_lo: f64, rh_hi: f64, k: f64, rh_opt: f64) -> f64 {
    let total: f64 = HUMIDITY_SAMPLE_HOURS
        .iter()
        .map(|&h| logistic_rh(hourly_humidity(rh_lo, rh_hi, h), k, rh_opt))
        .sum();
    unit_clamp(total / HUMIDITY_SAMPLE_HOURS.len() as f64)
}

/// Great-circle distance in miles between two `(lat, lon)` points in degrees.
pub fn haversine_miles(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lat1, lon1) = (a[0].to_radians(), a[1].to_radians());
    let (lat2, lon2) = (b[0].to_radians(), b[1].to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

/// Smallest pairwise distance between two patches' reference points.
pub fn patch_gap_miles(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .flat_map(|p| b.iter().map(move |q| haversine_miles(*p, *q)))
        .fold(f64::INFINITY, f64::min)
}

/// Distance kernel `1 / (c + Δ²)` for `Δ ≤ cutoff`, else 0.
pub fn kernel_weight(gap_miles: f64, c: f64, cutoff_miles: f64) -> f64 {
    if gap_miles <= cutoff_miles {
        1.0 / (c + gap_miles * gap_miles)
    } else {
        0.0
    }
}

pub fn migration_kernel(a: &[[f64; 2]], b: &[[f64; 2]], c: f64, cutoff_miles: f64) -> f64 {
    kernel_weight(patch_gap_miles(a, b), c, cutoff_miles)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MigrationKernelParams {
    pub c_s: f64,
    pub c_i: f64,
    pub cutoff_miles: f64,
    /// Reference boundary points per patch, `(lat, lon)` in degrees.
    pub patch_points: Vec<Vec<[f64; 2]>>,
}

impl Default for MigrationKernelParams {
    fn default() -> Self {
        // Two adjacent patches sharing a boundary vertex, so Δ = 0.
        let shared = [33.45, -112.07];
        Self {
            c_s: 1.0,
            c_i: 1.0,
            cutoff_miles: 3.0,
            patch_points: vec![
                vec![[33.70, -112.40], [33.45, -112.40], shared],
                vec![shared, [33.45, -111.70], [33.20, -111.90]],
            ],
        }
    }
}

impl MigrationKernelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_s > 0.0 && self.c_i > 0.0) {
            return Err(Error::Config("kernel constants c_S and c_I must be positive".into()));
        }
        if self.patch_points.iter().any(Vec::is_empty) {
            return Err(Error::Config("every patch needs at least one reference point".into()));
        }
        Ok(())
    }

    pub fn gap(&self, i: usize, j: usize) -> f64 {
        patch_gap_miles(&self.patch_points[i], &self.patch_points[j])
    }

    /// `(d^(c_S), d^(c_I))` for the pair.
    pub fn weights(&self, i: usize, j: usize) -> (f64, f64) {
        let gap = self.gap(i, j);
        (
            kernel_weight(gap, self.c_s, self.cutoff_miles),
            kernel_weight(gap, self.c_i, self.cutoff_miles),
        )
    }
}

/// Basis values for one patch and one day.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BasisDay {
    pub bb: f64,
    pub bm: f64,
    pub e: f64,
    pub l: f64,
}

/// Daily basis values of one patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDaily {
    pub patch: String,
    pub days: Vec<BasisDay>,
}

impl BasisDaily {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn constant(patch: &str, days: usize, value: BasisDay) -> Self {
        Self {
            patch: patch.into(),
            days: vec![value; days],
        }
    }
}

pub fn compute_basis(series: &PatchCovariateSeries, p: &BasisParams) -> BasisDaily {
    let days = (0..series.len())
        .map(|d| BasisDay {
            bb: briere_diurnal_avg(series.t[d], series.t_min[d], series.t_max[d], p.a_b, p.t_min, p.t_max),
            bm: briere_diurnal_avg(series.t[d], series.t_min[d], series.t_max[d], p.a_m, p.t_min, p.t_max),
            e: eyring(series.t[d], p.psi_ad, p.ae_ad, p.r_gas),
            l: rh_diurnal_logistic_avg(series.rh_min[d], series.rh_max[d], p.k, p.rh_opt),
        })
        .collect();
    BasisDaily {
        patch: series.patch.clone(),
        days,
    }
}

/// Seasonal weather generator used when no station data is supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticClimate {
    /// Annual mean of the daily mean temperature, °C.
    pub t_mean: f64,
    /// Seasonal half-swing of the daily mean temperature, °C.
    pub t_seasonal_amplitude: f64,
    /// Typical daily max − min, °C.
    pub t_diurnal_range: f64,
    /// Day of year at which temperature peaks.
    pub peak_day: f64,
    pub rh_mean: f64,
    pub rh_seasonal_amplitude: f64,
    /// Typical daily RH max − min, percentage points.
    pub rh_diurnal_range: f64,
    /// Standard deviation of the day-to-day temperature noise, °C.
    pub t_noise: f64,
    /// Standard deviation of the day-to-day humidity noise, percentage points.
    pub rh_noise: f64,
    /// Per-patch offsets added to the mean temperature and humidity.
    pub patch_t_offset: Vec<f64>,
    pub patch_rh_offset: Vec<f64>,
}

impl Default for SyntheticClimate {
    fn default() -> Self {
        Self {
            t_mean: 24.0,
            t_seasonal_amplitude: 9.0,
            t_diurnal_range: 12.0,
            peak_day: 40.0,
            rh_mean: 62.0,
            rh_seasonal_amplitude: 15.0,
            rh_diurnal_range: 30.0,
            t_noise: 2.0,
            rh_noise: 6.0,
            patch_t_offset: vec![0.0, -2.5],
            patch_rh_offset: vec![0.0, 8.0],
        }
    }
}

/// Deterministic seasonal weather for `patches` patches over `horizon` days.
/// Patch ids are `"1"`, `"2"`, ….
pub fn synthetic_covariates(
    seed_value: u64,
    horizon: usize,
    patches: usize,
    climate: &SyntheticClimate,
) -> Vec<PatchCovariateSeries> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    (0..patches)
        .map(|p| {
            let mut rng = seed::rng(seed::derive(seed_value, seed::tags::SYNTHETIC, p as u64));
            let t_off = climate.patch_t_offset.get(p).copied().unwrap_or(0.0);
            let rh_off = climate.patch_rh_offset.get(p).copied().unwrap_or(0.0);
            let mut s = PatchCovariateSeries {
                patch: (p + 1).to_string(),
                t: Vec::with_capacity(horizon),
                t_min: Vec::with_capacity(horizon),
                t_max: Vec::with_capacity(horizon),
                rh: Vec::with_capacity(horizon),
                rh_min: Vec::with_capacity(horizon),
                rh_max: Vec::with_capacity(horizon),
            };
            for d in 0..horizon {
                let phase = 2.0 * PI * (d as f64 - climate.peak_day) / 365.0;
                let season = phase.cos();
                let t = climate.t_mean + t_off + climate.t_seasonal_amplitude * season
                    + climate.t_noise * unit.sample(&mut rng);
                let range = (climate.t_diurnal_range * (1.0 + 0.2 * unit.sample(&mut rng))).max(1.0);
                // Asymmetric split keeps T_min ≤ T ≤ T_max without pinning T to the midpoint.
                let below = range * rng.random_range(0.4..0.6);
                let rh_mid = climate.rh_mean + rh_off - climate.rh_seasonal_amplitude * season
                    + climate.rh_noise * unit.sample(&mut rng);
                let rh_range =
                    (climate.rh_diurnal_range * (1.0 + 0.2 * unit.sample(&mut rng))).max(2.0);
                let rh_lo = (rh_mid - rh_range / 2.0).clamp(0.0, 100.0);
                let rh_hi = (rh_mid + rh_range / 2.0).clamp(0.0, 100.0);
                s.t.push(t);
                s.t_min.push(t - below);
                s.t_max.push(t + (range - below));
                s.rh_min.push(rh_lo);
                s.rh_max.push(rh_hi);
                s.rh.push((rh_lo + rh_hi) / 2.0);
            }
            s
        })
        .collect()
}

pub const CACHE_HEADER: [&str; 11] = [
    "day", "T", "Tmin", "Tmax", "RH", "RHmin", "RHmax", "Bb", "Bm", "E", "L",
];

pub fn write_covariate_cache<W: Write>(
    writer: W,
    series: &PatchCovariateSeries,
    basis: &BasisDaily,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CACHE_HEADER)?;
    for (d, b) in basis.days.iter().enumerate() {
        let row = [
            series.t[d],
            series.t_min[d],
            series.t_max[d],
            series.rh[d],
            series.rh_min[d],
            series.rh_max[d],
            b.bb,
            b.bm,
            b.e,
            b.l,
        ];
        let mut rec = vec![(d + 1).to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<covariate cache>", e))?;
    Ok(())
}

pub fn read_covariate_cache<R: Read>(
    patch: &str,
    reader: R,
) -> Result<(PatchCovariateSeries, BasisDaily)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CACHE_HEADER.iter().copied()) {
        return Err(Error::Ingestion(format!(
            "covariate cache header must be `{}`",
            CACHE_HEADER.join(",")
        )));
    }
    let mut s = PatchCovariateSeries::constant(patch, 0, (0.0, 0.0, 0.0), (0.0, 0.0));
    let mut b = BasisDaily {
        patch: patch.into(),
        days: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Ingestion(format!("cache row {}: {e}", i + 2)))?;
        if v.len() != 10 {
            return Err(Error::Ingestion(format!("cache row {}: expected 11 columns", i + 2)));
        }
        s.t.push(v[0]);
        s.t_min.push(v[1]);
        s.t_max.push(v[2]);
        s.rh.push(v[3]);
        s.rh_min.push(v[4]);
        s.rh_max.push(v[5]);
        b.days.push(BasisDay {
            bb: v[6],
            bm: v[7],
            e: v[8],
            l: v[9],
        });
    }
    Ok((s, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p() -> BasisParams {
        BasisParams::default()
    }

    #[test]
    fn fahrenheit_conversion() {
        assert_relative_eq!(f_to_c(32.0), 0.0);
        assert_relative_eq!(f_to_c(212.0), 100.0);
        assert_relative_eq!(f_to_c(50.0), 10.0);
    }

    #[test]
    fn briere_branches() {
        let p = p();
        assert_eq!(briere(14.67, p.a_b, p.t_min, p.t_max), 0.0);
        assert_eq!(briere(45.0, p.a_b, p.t_min, p.t_max), 0.0);
        assert_eq!(briere(41.0, p.a_b, p.t_min, p.t_max), 0.0);
        // 2.71e-4 · 30 · 15.33 · √11
        let expected = 2.71e-4 * 30.0 * 15.33 * 11f64.sqrt();
        assert_relative_eq!(briere(30.0, p.a_b, p.t_min, p.t_max), expected, max_relative = 1e-12);
        // 30-digit reference evaluation.
        assert_relative_eq!(briere(30.0, p.a_b, p.t_min, p.t_max), 0.413_360_565_833_885_5, max_relative = 1e-12);
    }

    #[test]
    fn briere_clamps_large_scale() {
        assert_eq!(briere(30.0, 1.0, 14.67, 41.0), 1.0);
    }

    #[test]
    fn diurnal_briere_cases() {
        let p = p();
        let flat = briere_diurnal_avg(20.0, 20.0, 20.0, p.a_b, p.t_min, p.t_max);
        assert_relative_eq!(flat, briere(20.0, p.a_b, p.t_min, p.t_max), max_relative = 1e-12);
        assert_relative_eq!(flat, 0.132_384_196_221_301_28, max_relative = 1e-12);
        assert_eq!(briere_diurnal_avg(5.0, 0.0, 10.0, p.a_b, p.t_min, p.t_max), 0.0);

        // Brute-force hourly oracle written out independently.
        let mut acc = 0.0;
        for h in 0..24 {
            let th = 28.0 + 8.0 * (PI * h as f64 / 12.0 - PI / 2.0).sin();
            if th > 14.67 && th < 41.0 {
                acc += 2.71e-4 * th * (th - 14.67) * (41.0 - th).sqrt();
            }
        }
        assert_relative_eq!(
            briere_diurnal_avg(28.0, 20.0, 36.0, p.a_b, p.t_min, p.t_max),
            acc / 24.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn eyring_values() {
        let p = p();
        assert_eq!(eyring(25.0, 0.0, p.ae_ad, p.r_gas), 0.0);
        let at300 = eyring(26.85, p.psi_ad, p.ae_ad, p.r_gas);
        assert_relative_eq!(at300, 2.238_175_761_023_391e-3, max_relative = 1e-12);
        let at314 = eyring(40.85, p.psi_ad, p.ae_ad, p.r_gas);
        assert_relative_eq!(at314, 6.056_341_115_937_248e-3, max_relative = 1e-12);
        assert!(at314 > at300);
    }

    #[test]
    fn logistic_values() {
        let p = p();
        assert_eq!(logistic_rh(70.0, p.k, 70.0), 0.5);
        assert_relative_eq!(logistic_rh(80.0, 0.1, 70.0), 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_relative_eq!(logistic_rh(60.0, 0.1, 70.0), 1.0 - logistic_rh(80.0, 0.1, 70.0), epsilon = 1e-12);
    }

    #[test]
    fn diurnal_humidity() {
        assert_eq!(rh_diurnal_logistic_avg(70.0, 70.0, 0.1, 70.0), 0.5);
        assert_relative_eq!(hourly_humidity(50.0, 90.0, 0), 50.0);
        assert_relative_eq!(hourly_humidity(50.0, 90.0, 12), 90.0, epsilon = 1e-12);

        let samples = [50.0, 60.0, 80.0, 90.0, 80.0, 60.0];
        let oracle: f64 = samples
            .iter()
            .map(|rh| 1.0 / (1.0 + (-0.1 * (rh - 70.0f64)).exp()))
            .sum::<f64>()
            / 6.0;
        assert_relative_eq!(rh_diurnal_logistic_avg(50.0, 90.0, 0.1, 70.0), oracle, epsilon = 1e-12);
    }

    #[test]
    fn kernel_cases() {
        let here = [[33.4, -112.0]];
        assert_relative_eq!(migration_kernel(&here, &here, 2.0, 3.0), 0.5);
        assert_eq!(kernel_weight(4.0, 1.0, 3.0), 0.0);
        assert_relative_eq!(kernel_weight(1.0, 1.0, 3.0), 0.5);
        assert_relative_eq!(kernel_weight(3.0, 1.0, 3.0), 0.1);
        assert_eq!(MigrationKernelParams::default().gap(0, 1), 0.0);
    }

    #[test]
    fn haversine_one_degree_latitude() {
        // One degree of arc on a 3958.8-mile sphere.
        let d = haversine_miles([0.0, 0.0], [1.0, 0.0]);
        assert_relative_eq!(d, 3958.8 * PI / 180.0, max_relative = 1e-12);
    }

    fn rec(date: &str, station: &str, patch: &str, t: Option<f64>) -> StationRecord {
        StationRecord {
            date: NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
            station: station.into(),
            patch: patch.into(),
            t_avg: t,
            t_min: t.map(|v| v - 5.0),
            t_max: t.map(|v| v + 5.0),
            rh_min: Some(40.0),
            rh_max: Some(80.0),
            rh_avg: None,
            unit: TempUnit::C,
        }
    }

    #[test]
    fn constant_series_is_a_fixed_point() {
        let rows: Vec<_> = (1..=20)
            .map(|d| rec(&format!("2022-01-{d:02}"), "a", "1", Some(20.0)))
            .collect();
        let out = preprocess_daily(&rows, 20).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].t.iter().all(|&v| (v - 20.0).abs() < 1e-12));
        assert!(out[0].rh.iter().all(|&v| (v - 60.0).abs() < 1e-12));
    }

    #[test]
    fn interpolation_fills_midpoint() {
        let filled = interpolate_gaps(&[Some(8.0), Some(10.0), None, Some(14.0), Some(16.0)]).unwrap();
        assert_eq!(filled, vec![8.0, 10.0, 12.0, 14.0, 16.0]);
        assert_eq!(interpolate_gaps(&[None, Some(3.0), None]).unwrap(), vec![3.0; 3]);
        assert!(interpolate_gaps(&[None, None]).is_none());
    }

    #[test]
    fn stations_in_a_patch_are_averaged() {
        let rows = vec![
            rec("2022-01-01", "a", "1", Some(10.0)),
            rec("2022-01-01", "b", "1", Some(20.0)),
        ];
        let out = preprocess_daily(&rows, 1).unwrap();
        assert_relative_eq!(out[0].t[0], 15.0);
    }

    #[test]
    fn moving_average_shrinks_symmetrically() {
        let v: Vec<f64> = (0..10).map(f64::from).collect();
        let ma = centered_moving_average(&v);
        // Linear input is preserved by any symmetric window.
        for (a, b) in ma.iter().zip(&v) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let spike = centered_moving_average(&[0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(spike[3], 1.0);
        assert_eq!(spike[0], 0.0);
    }

    #[test]
    fn missing_field_and_empty_table_errors() {
        let mut r = rec("2022-01-01", "a", "1", Some(10.0));
        r.t_avg = None;
        assert!(matches!(preprocess_daily(&[r], 3), Err(Error::Ingestion(_))));
        assert!(matches!(preprocess_daily(&[], 3), Err(Error::Config(_))));
    }

    #[test]
    fn csv_parsing_and_schema_errors() {
        let csv = "date,station,patch,t_avg,t_min,t_max,rh_min,rh_max,unit\n\
                   2022-01-01,s1,1,68,50,86,20,60,F\n\
                   2022-01-02,s1,1,,,,20,60,F\n";
        let rows = read_weather_csv(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_relative_eq!(rows[0].to_celsius(rows[0].t_avg).unwrap(), 20.0, epsilon = 1e-12);
        assert!(rows[1].t_avg.is_none());

        let missing = "date,station,t_avg,t_min,t_max,rh_min,rh_max,unit\n";
        let err = read_weather_csv(missing.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("`patch`"), "{err}");

        let bad_rh = "date,station,patch,t_avg,t_min,t_max,rh_min,rh_max,unit\n\
                      2022-01-01,s1,1,20,15,25,20,160,C\n";
        let err = read_weather_csv(bad_rh.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn synthetic_weather_contract() {
        let c = SyntheticClimate::default();
        let a = synthetic_covariates(42, 365, 2, &c);
        assert_eq!(a, synthetic_covariates(42, 365, 2, &c));
        assert_ne!(a, synthetic_covariates(43, 365, 2, &c));
        let p = p();
        for s in &a {
            assert_eq!(s.len(), 365);
            for d in 0..365 {
                assert!(s.t_min[d] <= s.t[d] && s.t[d] <= s.t_max[d]);
                assert!(s.rh_min[d] <= s.rh_max[d]);
            }
            let basis = compute_basis(s, &p);
            let active = basis.days.iter().filter(|b| b.bb > 0.0).count();
            assert!(active as f64 >= 0.3 * 365.0, "{active} active days");
        }
    }

    #[test]
    fn cache_round_trip() {
        let s = &synthetic_covariates(1, 10, 1, &SyntheticClimate::default())[0];
        let b = compute_basis(s, &p());
        let mut buf = Vec::new();
        write_covariate_cache(&mut buf, s, &b).unwrap();
        let (s2, b2) = read_covariate_cache("1", buf.as_slice()).unwrap();
        assert_eq!(&s2, s);
        assert_eq!(b2, b);
    }

    proptest! {
        #[test]
        fn basis_outputs_stay_in_unit_interval(
            t in -60.0f64..80.0, spread in 0.0f64..30.0, rh in -20.0f64..130.0,
            rh_spread in 0.0f64..60.0, a in 1e-6f64..1e-2,
        ) {
            let p = p();
            for v in [
                briere(t, a, p.t_min, p.t_max),
                briere_diurnal_avg(t, t - spread / 2.0, t + spread / 2.0, a, p.t_min, p.t_max),
                eyring(t, p.psi_ad, p.ae_ad, p.r_gas),
                logistic_rh(rh, p.k, p.rh_opt),
                rh_diurnal_logistic_avg(rh, rh + rh_spread, p.k, p.rh_opt),
            ] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn briere_vanishes_outside_range(t in prop_oneof![-50.0f64..14.67, 41.0f64..90.0]) {
            let p = p();
            prop_assert_eq!(briere(t, p.a_b, p.t_min, p.t_max), 0.0);
        }

        #[test]
        fn eyring_and_logistic_increase(t in -30.0f64..60.0, dt in 0.01f64..5.0, rh in 0.0f64..100.0, drh in 0.01f64..5.0) {
            let tk = |t: f64| t + 273.15;
            let raw = |t: f64| 13_327.0 * tk(t) * (-53_135.0 / (8.314 * tk(t))).exp();
            prop_assert!(raw(t + dt) > raw(t));
            prop_assert!(logistic_rh(rh + drh, 0.1, 70.0) > logistic_rh(rh, 0.1, 70.0));
        }

        #[test]
        fn zero_amplitude_degenerates(t in -10.0f64..50.0, rh in 0.0f64..100.0) {
            let p = p();
            prop_assert!((briere_diurnal_avg(t, t, t, p.a_b, p.t_min, p.t_max) - briere(t, p.a_b, p.t_min, p.t_max)).abs() < 1e-12);
            prop_assert!((rh_diurnal_logistic_avg(rh, rh, p.k, p.rh_opt) - logistic_rh(rh, p.k, p.rh_opt)).abs() < 1e-12);
        }

        #[test]
        fn kernel_non_increasing(g1 in 0.0f64..5.0, g2 in 0.0f64..5.0, c in 0.1f64..5.0) {
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            prop_assert!(kernel_weight(hi, c, 3.0) <= kernel_weight(lo, c, 3.0));
        }

        #[test]
        fn preprocessing_is_idempotent_on_constant_series(v in -10.0f64..45.0) {
            let series = vec![v; 30];
            let once = centered_moving_average(&series);
            let twice = centered_moving_average(&once);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - v).abs() < 1e-12 && (a - b).abs() < 1e-12);
            }
        }
    }
}
