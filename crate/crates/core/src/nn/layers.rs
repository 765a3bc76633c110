use rand::Rng;

use super::tensor::{gemm_acc, Scalar, Tensor, View};
use crate::{Error, Result};

/// Dimensions of a same-padded, stride-1 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub t: usize,
}

impl ConvDims {
    /// For tap `j`, the output range `[lo, hi)` whose input index `t + j − pad` is valid.
    fn tap(&self, j: usize) -> Option<(usize, usize, isize)> {
        let shift = j as isize - (self.k / 2) as isize;
        let lo = (-shift).max(0) as usize;
        let hi = (self.t as isize - shift).min(self.t as isize);
        if hi <= lo as isize {
            None
        } else {
            Some((lo, hi as usize, shift))
        }
    }
}

/// `y[b, o, t] = bias[o] + Σ_{c,j} w[o, c, j] · x[b, c, t + j − pad]`.
pub(crate) fn conv1d_forward_raw<S: Scalar>(d: ConvDims, x: &[S], w: &[S], bias: &[S]) -> Vec<S> {
    let mut y = Vec::with_capacity(d.batch * d.c_out * d.t);
    for _ in 0..d.batch {
        for &b in bias {
            y.extend(std::iter::repeat_n(b, d.t));
        }
    }
    for bi in 0..d.batch {
        let xo = bi * d.c_in * d.t;
        let yo = bi * d.c_out * d.t;
        for j in 0..d.k {
            let Some((lo, hi, shift)) = d.tap(j) else { continue };
            gemm_acc(
                d.c_out,
                d.c_in,
                hi - lo,
                w,
                View::new(j, d.c_in * d.k, d.k),
                x,
                View::new((xo as isize + lo as isize + shift) as usize, d.t, 1),
                &mut y,
                View::new(yo + lo, d.t, 1),
            );
        }
    }
    y
}

/// Accumulates `∂L/∂w` and `∂L/∂b` into `dw`, `db`; returns `∂L/∂x` if asked.
pub(crate) fn conv1d_backward_raw<S: Scalar>(
    d: ConvDims,
    x: &[S],
    w: &[S],
    dy: &[S],
    dw: &mut [S],
    db: &mut [S],
    want_dx: bool,
) -> Option<Vec<S>> {
    let mut dx = want_dx.then(|| vec![S::ZERO; x.len()]);
    for bi in 0..d.batch {
        let xo = bi * d.c_in * d.t;
        let yo = bi * d.c_out * d.t;
        for (o, slot) in db.iter_mut().enumerate() {
            let row = &dy[yo + o * d.t..yo + (o + 1) * d.t];
            let mut acc = S::ZERO;
            for &v in row {
                acc += v;
            }
            *slot += acc;
        }
        for j in 0..d.k {
            let Some((lo, hi, shift)) = d.tap(j) else { continue };
            let n = hi - lo;
            let xs = (xo as isize + lo as isize + shift) as usize;
            gemm_acc(
                d.c_out,
                n,
                d.c_in,
                dy,
                View::new(yo + lo, d.t, 1),
                x,
                View::new(xs, 1, d.t),
                dw,
                View::new(j, d.c_in * d.k, d.k),
            );
            if let Some(dx) = dx.as_mut() {
                gemm_acc(
                    d.c_in,
                    d.c_out,
                    n,
                    w,
                    View::new(j, d.k, d.c_in * d.k),
                    dy,
                    View::new(yo + lo, d.t, 1),
                    dx,
                    View::new(xs, d.t, 1),
                );
            }
        }
    }
    dx
}

fn conv_dims<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<ConvDims> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 || b.shape().len() != 1 {
        return Err(Error::Structure(format!(
            "conv1d expects x: batch×C_in×T, w: C_out×C_in×k, b: C_out; got {xs:?}, {ws:?}, {:?}",
            b.shape()
        )));
    }
    if ws[1] != xs[1] || b.shape()[0] != ws[0] {
        return Err(Error::Structure(format!(
            "conv1d shape mismatch: x {xs:?}, w {ws:?}, b {:?}",
            b.shape()
        )));
    }
    if ws[2] % 2 == 0 {
        return Err(Error::Structure(format!("conv1d kernel size {} is even", ws[2])));
    }
    Ok(ConvDims {
        batch: xs[0],
        c_in: xs[1],
        c_out: ws[0],
        k: ws[2],
        t: xs[2],
    })
}

/// Same-padded, stride-1 cross-correlation.
pub fn conv1d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let d = conv_dims(x, w, b)?;
    Tensor::new(vec![d.batch, d.c_out, d.t], conv1d_forward_raw(d, x.data(), w.data(), b.data()))
}

/// Returns `(∂L/∂x, ∂L/∂w, ∂L/∂b)` given the upstream gradient `dy`.
pub fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    dy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let d = conv_dims(x, w, b)?;
    if dy.shape() != [d.batch, d.c_out, d.t] {
        return Err(Error::Structure(format!(
            "conv1d upstream gradient has shape {:?}, expected {:?}",
            dy.shape(),
            [d.batch, d.c_out, d.t]
        )));
    }
    let mut dw = vec![S::ZERO; w.len()];
    let mut db = vec![S::ZERO; b.len()];
    let dx = conv1d_backward_raw(d, x.data(), w.data(), dy.data(), &mut dw, &mut db, true)
        .expect("dx requested");
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(b.shape().to_vec(), db)?,
    ))
}

pub(crate) fn relu_in_place<S: Scalar>(v: &mut [S]) {
    for x in v {
        if !(*x > S::ZERO) {
            *x = S::ZERO;
        }
    }
}

/// Inverted dropout mask: `1/(1−p)` with probability `1−p`, else 0.
pub(crate) fn dropout_mask<S: Scalar, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<S> {
    let keep = S::from_f64(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.random::<f64>() < p { S::ZERO } else { keep })
        .collect()
}

/// Mean squared error and its gradient with respect to `yhat`.
pub fn mse_loss<S: Scalar>(yhat: &[S], y: &[S]) -> Result<(f64, Vec<S>)> {
    if yhat.len() != y.len() {
        return Err(Error::Structure(format!(
            "mse: prediction has {} values, target {}",
            yhat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let count = y.len() as f64;
    let mut sum = 0.0;
    let scale = S::from_f64(2.0 / count);
    let grad = yhat
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let e = a - b;
            sum += e.to_f64() * e.to_f64();
            scale * e
        })
        .collect();
    Ok((sum / count, grad))
}
