use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element type of the engine: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + AddAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;

    /// `C ← βC + α·A·B` on strided views.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must be in
    /// bounds of the corresponding pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A strided 2-D view into a slice: `(offset, row stride, column stride)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn new(off: usize, rs: usize, cs: usize) -> Self {
        Self { off, rs, cs }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.off + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C += A·B` where `A` is `m×k`, `B` is `k×n`, `C` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    va: View,
    b: &[S],
    vb: View,
    c: &mut [S],
    vc: View,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(va.last(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(vb.last(k, n) < b.len(), "gemm: B view out of bounds");
    assert!(vc.last(m, n) < c.len(), "gemm: C view out of bounds");
    // SAFETY: the asserts above bound every reachable index of each view.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::ONE,
            a.as_ptr().add(va.off),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.off),
            vb.rs as isize,
            vb.cs as isize,
            S::ONE,
            c.as_mut_ptr().add(vc.off),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// Dense row-major tensor with up to three axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Structure(format!("tensor rank {} not in 1..=3", shape.len())));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::Structure(format!(
                "shape {shape:?} needs {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let count = shape.iter().product();
        Self {
            shape,
            data: vec![S::ZERO; count],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_strided_transpose() {
        // A = [[1,2],[3,4]] read transposed through the strides.
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 1.0];
        let mut c = [10.0f64, 20.0];
        gemm_acc(2, 2, 1, &a, View::new(0, 1, 2), &b, View::new(0, 1, 1), &mut c, View::new(0, 1, 1));
        assert_eq!(c, [14.0, 26.0]);
    }

    #[test]
    fn tensor_shape_checks() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![1.5; 6]).unwrap();
        assert_eq!(t.cast::<f64>().data()[5], 1.5);
    }
}
