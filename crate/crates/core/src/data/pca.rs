use alloc::vec;
use alloc::vec::Vec;

use super::HsiCube;
use crate::error::{param_err, Result};

/// Principal axes of the per-pixel spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `C × C_pca`, row-major, orthonormal columns.
    pub components: Vec<f64>,
    pub explained_variance: Vec<f64>,
    bands: usize,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn n_components(&self) -> usize {
        self.explained_variance.len()
    }

    /// Column `j` of the component matrix.
    pub fn component(&self, j: usize) -> Vec<f64> {
        let k = self.n_components();
        (0..self.bands).map(|i| self.components[i * k + j]).collect()
    }

    pub fn project(&self, spectrum: &[f64]) -> Vec<f64> {
        let k = self.n_components();
        let mut out = vec![0.0; k];
        for (i, (&x, &m)) in spectrum.iter().zip(&self.mean).enumerate() {
            let centered = x - m;
            for (o, c) in out.iter_mut().zip(&self.components[i * k..(i + 1) * k]) {
                *o += centered * c;
            }
        }
        out
    }

    /// Maps projected coordinates back into centered band space.
    pub fn back_project(&self, coords: &[f64]) -> Vec<f64> {
        let k = self.n_components();
        (0..self.bands)
            .map(|i| self.components[i * k..(i + 1) * k].iter().zip(coords).map(|(c, z)| c * z).sum())
            .collect()
    }

    /// Projects every pixel, keeping labels and name.
    pub fn transform(&self, cube: &HsiCube) -> Result<HsiCube> {
        if cube.bands() != self.bands {
            return Err(param_err!("PCA fit on {} bands applied to {}", self.bands, cube.bands()));
        }
        let data: Vec<f64> = cube.reflectance().chunks(self.bands).flat_map(|s| self.project(s)).collect();
        let mut out = HsiCube::new(
            cube.name.clone(),
            cube.height(),
            cube.width(),
            self.n_components(),
            data,
            Some(cube.labels().to_vec()),
        )?;
        out.class_names = cube.class_names.clone();
        Ok(out)
    }
}

/// Eigen-decomposition of a symmetric `n × n` matrix by cyclic Jacobi
/// rotations. Returns eigenvalues (descending) and eigenvectors as columns
/// of a row-major `n × n` matrix.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j] * a[i * n + j]).sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (libm::fabs(theta) + libm::sqrt(theta * theta + 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    (values, vectors)
}

/// Fits the top `c_pca` principal components over all pixels, labeled or
/// not. Each component's largest-magnitude entry is made positive.
pub fn fit_pca(cube: &HsiCube, c_pca: usize) -> Result<PcaModel> {
    let c = cube.bands();
    if c_pca == 0 || c_pca > c {
        return Err(param_err!("c_pca must be in 1..={c}, got {c_pca}"));
    }
    let n = cube.pixels();
    let mut mean = vec![0.0; c];
    for s in cube.reflectance().chunks(c) {
        mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    // Second pass removes the rounding left by the first.
    let mut fix = vec![0.0; c];
    for s in cube.reflectance().chunks(c) {
        fix.iter_mut().zip(s.iter().zip(&mean)).for_each(|(f, (x, m))| *f += x - m);
    }
    mean.iter_mut().zip(&fix).for_each(|(m, f)| *m += f / n as f64);
    let mut cov = vec![0.0; c * c];
    let mut centered = vec![0.0; c];
    for s in cube.reflectance().chunks(c) {
        centered.iter_mut().zip(s.iter().zip(&mean)).for_each(|(d, (x, m))| *d = x - m);
        for i in 0..c {
            let di = centered[i];
            if di == 0.0 {
                continue;
            }
            for j in i..c {
                cov[i * c + j] += di * centered[j];
            }
        }
    }
    for i in 0..c {
        for j in i..c {
            let v = cov[i * c + j] / n as f64;
            cov[i * c + j] = v;
            cov[j * c + i] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov, c);
    let mut components = vec![0.0; c * c_pca];
    for j in 0..c_pca {
        let col: Vec<f64> = (0..c).map(|i| vectors[i * c + j]).collect();
        let pivot = col.iter().copied().fold(0.0f64, |best, x| if libm::fabs(x) > libm::fabs(best) { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..c {
            components[i * c_pca + j] = sign * col[i];
        }
    }
    let explained_variance = values.iter().take(c_pca).map(|v| v.max(0.0)).collect();
    Ok(PcaModel { mean, components, explained_variance, bands: c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_pixels_have_zero_variance() {
        let cube = HsiCube::new("flat", 3, 3, 4, [0.2, 0.4, 0.6, 0.8].repeat(9), None).unwrap();
        let pca = fit_pca(&cube, 2).unwrap();
        assert!(pca.explained_variance.iter().all(|&v| v == 0.0));
        let z = pca.transform(&cube).unwrap();
        assert!(z.reflectance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfectly_correlated_bands_are_rank_one() {
        let data: Vec<f64> = (0..20).flat_map(|i| {
            let x = i as f64 * 0.1 - 1.0;
            [x, 2.0 * x]
        }).collect();
        let cube = HsiCube::new("line", 4, 5, 2, data, None).unwrap();
        let pca = fit_pca(&cube, 2).unwrap();
        assert!(pca.explained_variance[0] > 0.1);
        assert!(pca.explained_variance[1].abs() < 1e-12);
        let s5 = libm::sqrt(5.0);
        let first = pca.component(0);
        assert!((first[0] - 1.0 / s5).abs() < 1e-12 && (first[1] - 2.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_dimension() {
        let cube = HsiCube::new("x", 1, 2, 3, alloc::vec![0.0; 6], None).unwrap();
        assert!(fit_pca(&cube, 0).is_err());
        assert!(fit_pca(&cube, 4).is_err());
    }
}
