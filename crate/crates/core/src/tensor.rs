//! Dense row-major `f64` arrays.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{param_err, shape_err, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn fmt_shapes(shapes: &[&[usize]]) -> String {
    let parts: Vec<String> = shapes.iter().map(|s| format!("{s:?}")).collect();
    parts.join(", ")
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(shape_err!(
                "tensor",
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self { shape, data: vec![value; n] }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(&mut f).collect();
        Self { shape, data }
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }

    pub fn rand_uniform(shape: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        let dist = Uniform::new(lo, hi).map_err(|e| param_err!("uniform({lo}, {hi}): {e}"))?;
        Ok(Self::from_fn(shape, |_| dist.sample(rng)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(shape_err!("reshape", "{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, &extent) in index.iter().zip(&self.shape) {
            flat = flat * extent + i;
        }
        self.data[flat]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }

    /// Rows `[.., i, ..]` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Plain `a[m×k] · b[k×n]` accumulated into `out[m×n]`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += aᵀ · b` for `a[k×m]`, `b[k×n]`.
pub(crate) fn gemm_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×k] += a · bᵀ` for `a[m×n]`, `b[k×n]`.
pub(crate) fn gemm_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + j] += dot;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new([2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::scalar(2.0).len(), 1);
    }

    #[test]
    fn seeded_sampling_is_bit_identical() {
        let a = Tensor::randn([4, 5], 1.0, &mut seeded(3));
        let b = Tensor::randn([4, 5], 1.0, &mut seeded(3));
        assert_eq!(a.data(), b.data());
        let u = Tensor::rand_uniform([10], -1.0, 1.0, &mut seeded(3)).unwrap();
        assert!(u.data().iter().all(|&x| (-1.0..1.0).contains(&x)));
    }

    #[test]
    fn at_is_row_major() {
        let t = Tensor::from_fn([2, 3, 4], |i| i as f64);
        assert_eq!(t.at(&[1, 2, 3]), 23.0);
    }
}
