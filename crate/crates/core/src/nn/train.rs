use std::io::Write;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::mse_loss;
use super::network::{Mode, ResNet, ResNetConfig};
use super::optim::{Adam, AdamConfig};
use crate::dataset::Dataset;
use crate::seed::{self, tags};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 50,
            patience: 10,
            noise_sigma: 0.05,
            seed: 42,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.adam.lr >= 0.0) {
            return Err(Error::Config("noise_sigma and lr must be non-negative".into()));
        }
        Ok(())
    }
}

/// Stacked inputs (`n × T × d_in`) and targets (`n × d_out`).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    pub n: usize,
    pub row_len: usize,
    pub d_out: usize,
}

impl TrainData {
    pub fn new(x: Vec<f32>, y: Vec<f32>, n: usize) -> Result<Self> {
        if n == 0 || x.len() % n != 0 || y.len() % n != 0 {
            return Err(Error::Validation(format!(
                "cannot split {} inputs / {} targets into {n} samples",
                x.len(),
                y.len()
            )));
        }
        let (row_len, d_out) = (x.len() / n, y.len() / n);
        Ok(Self { x, y, n, row_len, d_out })
    }

    pub fn from_dataset(ds: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("empty split".into()));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &i in indices {
            let r = &ds.records[i];
            x.extend_from_slice(&r.x);
            y.extend_from_slice(&r.theta_norm);
        }
        Self::new(x, y, indices.len())
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(idx.len() * self.row_len);
        let mut y = Vec::with_capacity(idx.len() * self.d_out);
        for &i in idx {
            x.extend_from_slice(&self.x[i * self.row_len..(i + 1) * self.row_len]);
            y.extend_from_slice(&self.y[i * self.d_out..(i + 1) * self.d_out]);
        }
        (x, y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_so_far: f64,
}

pub struct TrainOutcome {
    pub model: ResNet<f32>,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
}

/// Mean squared error with dropout off and no noise.
pub fn evaluate_loss(net: &ResNet<f32>, data: &TrainData, batch_size: usize) -> Result<f64> {
    let mut rng = seed::rng(0);
    let mut sum = 0.0;
    let all: Vec<usize> = (0..data.n).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (x, y) = data.gather(chunk);
        let yhat = net.predict(&x, chunk.len(), Mode::Eval, &mut rng)?;
        sum += mse_loss(&yhat, &y)?.0 * y.len() as f64;
    }
    Ok(sum / (data.n * data.d_out) as f64)
}

pub fn train(train: &TrainData, val: &TrainData, net_cfg: &ResNetConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    for (name, d) in [("train", train), ("validation", val)] {
        if d.n == 0 {
            return Err(Error::Validation(format!("empty {name} split")));
        }
        if d.d_out != net_cfg.d_out || d.row_len % net_cfg.d_in != 0 {
            return Err(Error::Validation(format!(
                "{name} split does not match the network's d_in = {} / d_out = {}",
                net_cfg.d_in, net_cfg.d_out
            )));
        }
    }
    let mut net = ResNet::<f32>::init(net_cfg.clone(), &mut seed::rng(seed::derive(cfg.seed, tags::INIT, 0)))?;
    let mut adam = Adam::new(cfg.adam, net.params());
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;

    let mut best = f64::INFINITY;
    let mut best_net = net.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.n).collect();
    for epoch in 1..=cfg.max_epochs {
        let e = epoch as u64;
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, tags::SHUFFLE, e)));
        let mut noise_rng = seed::rng(seed::derive(cfg.seed, tags::NOISE, e));
        let mut drop_rng = seed::rng(seed::derive(cfg.seed, tags::DROPOUT, e));
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, y) = train.gather(chunk);
            if cfg.noise_sigma > 0.0 {
                for v in &mut x {
                    *v += noise.sample(&mut noise_rng) as f32;
                }
            }
            let cache = net.forward(&x, chunk.len(), Mode::Train, &mut drop_rng).map_err(|err| {
                Error::Numeric(format!("epoch {epoch}, batch {}: {err}", bi + 1))
            })?;
            let (loss, dy) = mse_loss(cache.output(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss {loss} at epoch {epoch}, batch {}", bi + 1)));
            }
            sum += loss * y.len() as f64;
            let grads = net.backward(&cache, &dy)?;
            adam.step(net.params_mut(), &grads)?;
        }
        let train_loss = sum / (train.n * train.d_out) as f64;
        let val_loss = evaluate_loss(&net, val, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        if val_loss < best {
            best = val_loss;
            best_net = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} best {best:.6}");
        history.push(HistoryRow {
            epoch,
            train_loss,
            val_loss,
            best_so_far: best,
        });
        if since_best >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best_net,
        history,
        best_epoch,
    })
}

pub fn write_history<W: Write>(writer: W, history: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "val_loss", "best_so_far"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.best_so_far.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("history", e))?;
    Ok(())
}
