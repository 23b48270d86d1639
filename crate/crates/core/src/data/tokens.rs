use alloc::vec::Vec;

use rand::seq::index;

use super::{HsiCube, Pixel};
use crate::error::{param_err, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Per-sample token sequences with their visible/masked partition.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    /// `[B, N, C]`.
    pub tokens: Tensor,
    pub window: usize,
    pub patch: usize,
    pub origins: Vec<Pixel>,
    pub visible_idx: Vec<Vec<usize>>,
    pub masked_idx: Vec<Vec<usize>>,
}

impl TokenBatch {
    pub fn batch(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tokens.shape()[2]
    }

    pub fn n_visible(&self) -> usize {
        self.visible_idx.first().map_or(0, Vec::len)
    }

    pub fn n_masked(&self) -> usize {
        self.masked_idx.first().map_or(0, Vec::len)
    }

    /// Same tokens, fresh mask.
    pub fn remask(&mut self, masking_ratio: f64, rng: &mut Rng) -> Result<()> {
        let (vis, masked) = sample_mask(self.batch(), self.n_tokens(), masking_ratio, rng)?;
        self.visible_idx = vis;
        self.masked_idx = masked;
        Ok(())
    }

    /// Rows `rows` of the batch as a new batch.
    pub fn select(&self, rows: &[usize]) -> Result<TokenBatch> {
        let (n, c) = (self.n_tokens(), self.channels());
        let mut data = Vec::with_capacity(rows.len() * n * c);
        for &r in rows {
            data.extend_from_slice(&self.tokens.data()[r * n * c..(r + 1) * n * c]);
        }
        Ok(TokenBatch {
            tokens: Tensor::new([rows.len(), n, c], data)?,
            window: self.window,
            patch: self.patch,
            origins: rows.iter().map(|&r| self.origins[r]).collect(),
            visible_idx: rows.iter().map(|&r| self.visible_idx[r].clone()).collect(),
            masked_idx: rows.iter().map(|&r| self.masked_idx[r].clone()).collect(),
        })
    }
}

/// `round(ρ · N)`, halves rounding away from zero.
pub fn masked_count(n: usize, masking_ratio: f64) -> usize {
    libm::round(masking_ratio * n as f64) as usize
}

/// Uniform without-replacement masks, one per sample. Index lists are
/// sorted ascending.
pub fn sample_mask(batch: usize, n: usize, masking_ratio: f64, rng: &mut Rng) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    if !(0.0..1.0).contains(&masking_ratio) {
        return Err(param_err!("masking ratio must be in [0, 1), got {masking_ratio}"));
    }
    let m = masked_count(n, masking_ratio);
    let mut visible = Vec::with_capacity(batch);
    let mut masked = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut flag = alloc::vec![false; n];
        for i in index::sample(rng, n, m).into_iter() {
            flag[i] = true;
        }
        masked.push((0..n).filter(|&i| flag[i]).collect());
        visible.push((0..n).filter(|&i| !flag[i]).collect());
    }
    Ok((visible, masked))
}

fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= len as isize {
        j = period - j;
    }
    j as usize
}

/// Tokens for the `window × window` neighbourhood of each pixel, reflect
/// padded at the borders. Each `patch × patch` block becomes one token,
/// the spatial mean of its spectra. Shape `[B, (window/patch)², C]`.
pub fn extract_tokens(cube: &HsiCube, coords: &[Pixel], window: usize, patch: usize) -> Result<Tensor> {
    if window.is_multiple_of(2) {
        return Err(param_err!("window must be odd, got {window}"));
    }
    if patch == 0 || !window.is_multiple_of(patch) {
        return Err(param_err!("patch {patch} must divide window {window}"));
    }
    let grid = window / patch;
    let n = grid * grid;
    let c = cube.bands();
    let half = (window / 2) as isize;
    let norm = 1.0 / (patch * patch) as f64;
    let mut data = alloc::vec![0.0; coords.len() * n * c];
    for (b, &(row, col)) in coords.iter().enumerate() {
        if row >= cube.height() || col >= cube.width() {
            return Err(param_err!("pixel ({row}, {col}) outside {}x{}", cube.height(), cube.width()));
        }
        for dy in 0..window {
            let r = reflect(row as isize - half + dy as isize, cube.height());
            for dx in 0..window {
                let cc = reflect(col as isize - half + dx as isize, cube.width());
                let token = (dy / patch) * grid + dx / patch;
                let dst = &mut data[(b * n + token) * c..(b * n + token + 1) * c];
                for (d, s) in dst.iter_mut().zip(cube.spectrum(r, cc)) {
                    *d += s * norm;
                }
            }
        }
    }
    Tensor::new([coords.len(), n, c], data)
}

/// Windowed tokens plus a seeded visible/masked split per sample.
pub fn extract_patches(
    cube: &HsiCube,
    coords: &[Pixel],
    window: usize,
    patch: usize,
    masking_ratio: f64,
    seed: u64,
) -> Result<TokenBatch> {
    let tokens = extract_tokens(cube, coords, window, patch)?;
    let n = tokens.shape()[1];
    let mut rng = rng::stream(seed, &[0x6d61_736b]);
    let (visible_idx, masked_idx) = sample_mask(coords.len(), n, masking_ratio, &mut rng)?;
    Ok(TokenBatch { tokens, window, patch, origins: coords.to_vec(), visible_idx, masked_idx })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_cube() -> HsiCube {
        let (h, w, c) = (5, 6, 2);
        let data = (0..h * w * c).map(|i| i as f64).collect();
        HsiCube::new("ramp", h, w, c, data, None).unwrap()
    }

    #[test]
    fn reflect_padding() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn window_equal_patch_gives_mean_spectrum() {
        let cube = ramp_cube();
        let b = extract_patches(&cube, &[(2, 2)], 3, 3, 0.0, 1).unwrap();
        assert_eq!(b.n_tokens(), 1);
        assert_eq!(b.n_visible(), 1);
        let mut want = [0.0; 2];
        for r in 1..4 {
            for c in 1..4 {
                want[0] += cube.spectrum(r, c)[0] / 9.0;
                want[1] += cube.spectrum(r, c)[1] / 9.0;
            }
        }
        assert!((b.tokens.data()[0] - want[0]).abs() < 1e-12);
        assert!((b.tokens.data()[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn sixteen_tokens_at_three_quarters() {
        let cube = ramp_cube();
        let b = extract_patches(&cube, &[(0, 0), (4, 5)], 5, 5, 0.0, 1).unwrap();
        assert_eq!(b.n_tokens(), 1);
        let (vis, masked) = sample_mask(3, 16, 0.75, &mut rng::seeded(9)).unwrap();
        assert!(vis.iter().all(|v| v.len() == 4));
        assert!(masked.iter().all(|m| m.len() == 12));
    }

    #[test]
    fn same_seed_same_mask() {
        let cube = ramp_cube();
        let a = extract_patches(&cube, &[(1, 1), (3, 3)], 9, 3, 0.75, 42).unwrap();
        let b = extract_patches(&cube, &[(1, 1), (3, 3)], 9, 3, 0.75, 42).unwrap();
        assert_eq!(a.masked_idx, b.masked_idx);
        assert_eq!(a.n_masked(), 7);
        assert_eq!(a.n_visible(), 2);
    }

    #[test]
    fn parameter_errors() {
        let cube = ramp_cube();
        assert!(extract_patches(&cube, &[(0, 0)], 4, 2, 0.5, 1).is_err());
        assert!(extract_patches(&cube, &[(0, 0)], 9, 2, 0.5, 1).is_err());
        assert!(extract_patches(&cube, &[(0, 0)], 9, 3, 1.0, 1).is_err());
    }
}
