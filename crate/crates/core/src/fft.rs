//! Real-input discrete Fourier transform along the last axis.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other
//! length falls back to a twiddle-table DFT. Both keep bins `0..=C/2`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Complex spectrum with `C' = C/2 + 1` bins on the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexSpectrum {
    /// Leading extents followed by the bin count.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bins(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn magnitude(&self) -> Tensor {
        let data = self
            .re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| libm::hypot(*r, *i))
            .collect();
        Tensor::new(self.shape.clone(), data).expect("spectrum shape")
    }
}

pub fn num_bins(len: usize) -> usize {
    len / 2 + 1
}

/// Precomputed twiddles for a fixed signal length.
#[derive(Debug, Clone)]
pub struct RfftPlan {
    len: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RfftPlan {
    pub fn new(len: usize) -> Self {
        let (cos, sin) = (0..len)
            .map(|j| {
                let theta = 2.0 * PI * j as f64 / len as f64;
                (libm::cos(theta), libm::sin(theta))
            })
            .unzip();
        Self { len, cos, sin }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bins(&self) -> usize {
        num_bins(self.len)
    }

    /// `cos(2πkn/C)` and `sin(2πkn/C)`.
    #[inline]
    pub fn twiddle(&self, k: usize, n: usize) -> (f64, f64) {
        let j = (k * n) % self.len;
        (self.cos[j], self.sin[j])
    }

    /// Transforms one signal into `re`/`im` (each `bins()` long).
    pub fn process(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        debug_assert_eq!(x.len(), self.len);
        if self.len.is_power_of_two() && self.len > 1 {
            self.radix2(x, re, im);
        } else {
            for k in 0..self.bins() {
                let (mut sr, mut si) = (0.0, 0.0);
                for (n, &v) in x.iter().enumerate() {
                    let (c, s) = self.twiddle(k, n);
                    sr += v * c;
                    si -= v * s;
                }
                re[k] = sr;
                im[k] = si;
            }
        }
    }

    fn radix2(&self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        let n = self.len;
        let bits = n.trailing_zeros();
        let mut ar = vec![0.0; n];
        let mut ai = vec![0.0; n];
        for (i, &v) in x.iter().enumerate() {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            ar[j] = v;
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for j in 0..half {
                    let (c, s) = (self.cos[j * stride], self.sin[j * stride]);
                    // w = exp(-iθ)
                    let (wr, wi) = (c, -s);
                    let (br, bi) = (ar[start + j + half], ai[start + j + half]);
                    let tr = br * wr - bi * wi;
                    let ti = br * wi + bi * wr;
                    let (ur, ui) = (ar[start + j], ai[start + j]);
                    ar[start + j] = ur + tr;
                    ai[start + j] = ui + ti;
                    ar[start + j + half] = ur - tr;
                    ai[start + j + half] = ui - ti;
                }
            }
            size *= 2;
        }
        let bins = self.bins();
        re.copy_from_slice(&ar[..bins]);
        im.copy_from_slice(&ai[..bins]);
    }
}

/// rFFT of every length-`C` vector along the last axis.
pub fn rfft(x: &Tensor) -> Result<ComplexSpectrum> {
    let Some(&len) = x.shape().last() else {
        return Err(shape_err!("rfft", "scalar input"));
    };
    if len == 0 {
        return Err(shape_err!("rfft", "empty last axis"));
    }
    let plan = RfftPlan::new(len);
    let bins = plan.bins();
    let rows = x.len() / len;
    let mut re = vec![0.0; rows * bins];
    let mut im = vec![0.0; rows * bins];
    for r in 0..rows {
        plan.process(
            &x.data()[r * len..(r + 1) * len],
            &mut re[r * bins..(r + 1) * bins],
            &mut im[r * bins..(r + 1) * bins],
        );
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = bins;
    Ok(ComplexSpectrum { shape, re, im })
}
