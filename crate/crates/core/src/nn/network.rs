use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv1d_backward_raw, conv1d_forward_raw, dropout_mask, relu_in_place, ConvDims};
use super::tensor::{gemm_acc, Scalar, Tensor, View};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResNetConfig {
    pub filters: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub d_in: usize,
    pub d_out: usize,
    pub horizon: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            filters: 128,
            kernel: 5,
            blocks: 3,
            dropout: 0.2,
            d_in: 14,
            d_out: 13,
            horizon: 365,
        }
    }
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 || self.kernel == 0 || self.d_out == 0 || self.d_in == 0 || self.horizon == 0 {
            return Err(Error::Config(format!(
                "filters, kernel, d_in, d_out and horizon must be positive: {self:?}"
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Parameter tensor names and shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.filters;
        let mut out = vec![
            ("proj.weight".to_string(), vec![f, self.d_in, 1]),
            ("proj.bias".to_string(), vec![f]),
        ];
        for i in 1..=self.blocks {
            out.push((format!("block{i}.weight"), vec![f, f, self.kernel]));
            out.push((format!("block{i}.bias"), vec![f]));
        }
        out.push(("fc.weight".to_string(), vec![f, self.d_out]));
        out.push(("fc.bias".to_string(), vec![self.d_out]));
        out
    }

    pub fn n_params(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Dropout active at prediction time.
    McDropout,
    /// Dropout off.
    Eval,
}

impl Mode {
    fn dropout_active(self) -> bool {
        matches!(self, Mode::Train | Mode::McDropout)
    }
}

/// Activations kept for the backward pass.
pub struct Cache<S> {
    batch: usize,
    t: usize,
    input: Vec<S>,
    proj_pre: Vec<S>,
    /// `x⁰ … x^B`.
    states: Vec<Vec<S>>,
    block_pre: Vec<Vec<S>>,
    block_masks: Vec<Option<Vec<S>>>,
    pooled: Vec<S>,
    head_mask: Option<Vec<S>>,
    z: Vec<S>,
    yhat: Vec<S>,
}

impl<S> Cache<S> {
    pub fn output(&self) -> &[S] {
        &self.yhat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResNet<S> {
    config: ResNetConfig,
    names: Vec<String>,
    params: Vec<Tensor<S>>,
}

fn check_finite<S: Scalar>(v: &[S], layer: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite activation in layer `{layer}`")))
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<S: Scalar> ResNet<S> {
    pub fn zeros(config: ResNetConfig) -> Result<Self> {
        config.validate()?;
        let (names, params) = config
            .param_shapes()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .unzip();
        Ok(Self { config, names, params })
    }

    /// He-uniform weights `U(±sqrt(6/fan_in))`, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ResNetConfig, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        for (name, p) in net.names.iter().zip(net.params.iter_mut()) {
            if !name.ends_with(".weight") {
                continue;
            }
            let shape = p.shape().to_vec();
            let fan_in = if shape.len() == 3 { shape[1] * shape[2] } else { shape[0] };
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in p.data_mut() {
                *v = S::from_f64(rng.random_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    /// Build from tensors in [`ResNetConfig::param_shapes`] order.
    pub fn from_params(config: ResNetConfig, params: Vec<Tensor<S>>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        if params.len() != net.params.len() {
            return Err(Error::Structure(format!(
                "expected {} parameter tensors, got {}",
                net.params.len(),
                params.len()
            )));
        }
        for ((name, slot), p) in net.names.iter().zip(net.params.iter_mut()).zip(params) {
            if p.shape() != slot.shape() {
                return Err(Error::Structure(format!(
                    "{name}: shape {:?}, expected {:?}",
                    p.shape(),
                    slot.shape()
                )));
            }
            *slot = p;
        }
        Ok(net)
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn cast<T: Scalar>(&self) -> ResNet<T> {
        ResNet {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    fn block_index(&self, i: usize) -> (usize, usize) {
        (2 + 2 * i, 3 + 2 * i)
    }

    fn head_index(&self) -> (usize, usize) {
        let b = self.config.blocks;
        (2 + 2 * b, 3 + 2 * b)
    }

    /// `x` is `batch × T × d_in`, row-major; returns `batch × d_out` in (0, 1).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[S],
        batch: usize,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Cache<S>> {
        let c = &self.config;
        let (f, d_in) = (c.filters, c.d_in);
        if batch == 0 || x.len() % (batch * d_in) != 0 || x.is_empty() {
            return Err(Error::Structure(format!(
                "input of {} values is not batch({batch}) × T × d_in({d_in})",
                x.len()
            )));
        }
        let t = x.len() / (batch * d_in);
        let p = c.dropout;
        let drop = mode.dropout_active() && p > 0.0;

        let mut input = vec![S::ZERO; x.len()];
        for b in 0..batch {
            for ti in 0..t {
                for ch in 0..d_in {
                    input[(b * d_in + ch) * t + ti] = x[(b * t + ti) * d_in + ch];
                }
            }
        }

        let proj = ConvDims { batch, c_in: d_in, c_out: f, k: 1, t };
        let proj_pre = conv1d_forward_raw(proj, &input, self.params[0].data(), self.params[1].data());
        check_finite(&proj_pre, "proj")?;
        let mut x0 = proj_pre.clone();
        relu_in_place(&mut x0);

        let dims = ConvDims { batch, c_in: f, c_out: f, k: c.kernel, t };
        let mut states = vec![x0];
        let mut block_pre = Vec::with_capacity(c.blocks);
        let mut block_masks = Vec::with_capacity(c.blocks);
        for i in 0..c.blocks {
            let (wi, bi) = self.block_index(i);
            let prev = states.last().expect("x0 present");
            let pre = conv1d_forward_raw(dims, prev, self.params[wi].data(), self.params[bi].data());
            check_finite(&pre, &self.names[wi])?;
            let mask = drop.then(|| dropout_mask::<S, R>(pre.len(), p, rng));
            let mut next = prev.clone();
            for (j, (n, &a)) in next.iter_mut().zip(&pre).enumerate() {
                if a > S::ZERO {
                    *n += match &mask {
                        Some(m) => a * m[j],
                        None => a,
                    };
                }
            }
            block_pre.push(pre);
            block_masks.push(mask);
            states.push(next);
        }

        let last = states.last().expect("x0 present");
        let inv_t = S::from_f64(1.0 / t as f64);
        let pooled: Vec<S> = last
            .chunks_exact(t)
            .map(|row| {
                let mut acc = S::ZERO;
                for &v in row {
                    acc += v;
                }
                acc * inv_t
            })
            .collect();
        check_finite(&pooled, "pool")?;
        let head_mask = drop.then(|| dropout_mask::<S, R>(pooled.len(), p, rng));
        let z: Vec<S> = pooled
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v > S::ZERO {
                    head_mask.as_ref().map_or(v, |m| v * m[j])
                } else {
                    S::ZERO
                }
            })
            .collect();

        let (fw, fb) = self.head_index();
        let d_out = c.d_out;
        let mut logits: Vec<S> = (0..batch).flat_map(|_| self.params[fb].data().iter().copied()).collect();
        gemm_acc(
            batch,
            f,
            d_out,
            &z,
            View::new(0, f, 1),
            self.params[fw].data(),
            View::new(0, d_out, 1),
            &mut logits,
            View::new(0, d_out, 1),
        );
        check_finite(&logits, "fc")?;
        let yhat = logits.iter().map(|&v| S::from_f64(sigmoid(v.to_f64()))).collect();

        Ok(Cache {
            batch,
            t,
            input,
            proj_pre,
            states,
            block_pre,
            block_masks,
            pooled,
            head_mask,
            z,
            yhat,
        })
    }

    pub fn predict<R: Rng + ?Sized>(&self, x: &[S], batch: usize, mode: Mode, rng: &mut R) -> Result<Vec<S>> {
        Ok(self.forward(x, batch, mode, rng)?.yhat)
    }

    /// Parameter gradients, in storage order, given `∂L/∂ŷ`.
    pub fn backward(&self, cache: &Cache<S>, dyhat: &[S]) -> Result<Vec<Tensor<S>>> {
        let c = &self.config;
        let (f, d_out, batch, t) = (c.filters, c.d_out, cache.batch, cache.t);
        if dyhat.len() != batch * d_out {
            return Err(Error::Structure(format!(
                "output gradient has {} values, expected {}",
                dyhat.len(),
                batch * d_out
            )));
        }
        let mut grads: Vec<Tensor<S>> = self.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();

        let dlogit: Vec<S> = dyhat
            .iter()
            .zip(&cache.yhat)
            .map(|(&g, &y)| g * y * (S::ONE - y))
            .collect();
        let (fw, fb) = self.head_index();
        gemm_acc(
            f,
            batch,
            d_out,
            &cache.z,
            View::new(0, 1, f),
            &dlogit,
            View::new(0, d_out, 1),
            grads[fw].data_mut(),
            View::new(0, d_out, 1),
        );
        for row in dlogit.chunks_exact(d_out) {
            for (g, &v) in grads[fb].data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dz = vec![S::ZERO; batch * f];
        gemm_acc(
            batch,
            d_out,
            f,
            &dlogit,
            View::new(0, d_out, 1),
            self.params[fw].data(),
            View::new(0, 1, d_out),
            &mut dz,
            View::new(0, f, 1),
        );

        let inv_t = S::from_f64(1.0 / t as f64);
        let mut dx = vec![S::ZERO; batch * f * t];
        for (j, (&g, &pooled)) in dz.iter().zip(&cache.pooled).enumerate() {
            if !(pooled > S::ZERO) {
                continue;
            }
            let g = cache.head_mask.as_ref().map_or(g, |m| g * m[j]) * inv_t;
            for v in &mut dx[j * t..(j + 1) * t] {
                *v = g;
            }
        }

        let dims = ConvDims { batch, c_in: f, c_out: f, k: c.kernel, t };
        for i in (0..c.blocks).rev() {
            let (wi, bi) = self.block_index(i);
            let pre = &cache.block_pre[i];
            let mask = &cache.block_masks[i];
            let da: Vec<S> = dx
                .iter()
                .zip(pre)
                .enumerate()
                .map(|(j, (&g, &a))| {
                    if a > S::ZERO {
                        mask.as_ref().map_or(g, |m| g * m[j])
                    } else {
                        S::ZERO
                    }
                })
                .collect();
            let (gw, gb) = {
                let (lo, hi) = grads.split_at_mut(bi);
                (&mut lo[wi], &mut hi[0])
            };
            let dprev = conv1d_backward_raw(
                dims,
                &cache.states[i],
                self.params[wi].data(),
                &da,
                gw.data_mut(),
                gb.data_mut(),
                true,
            )
            .expect("dx requested");
            for (d, v) in dx.iter_mut().zip(dprev) {
                *d += v;
            }
        }

        let da0: Vec<S> = dx
            .iter()
            .zip(&cache.proj_pre)
            .map(|(&g, &a)| if a > S::ZERO { g } else { S::ZERO })
            .collect();
        let proj = ConvDims { batch, c_in: c.d_in, c_out: f, k: 1, t };
        let (g0, g1) = grads.split_at_mut(1);
        conv1d_backward_raw(
            proj,
            &cache.input,
            self.params[0].data(),
            &da0,
            g0[0].data_mut(),
            g1[0].data_mut(),
            false,
        );
        Ok(grads)
    }
}
