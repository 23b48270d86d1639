use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// `H × W × C` reflectance, band-interleaved by pixel, with an aligned
/// label map where 0 marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    pub name: String,
    height: usize,
    width: usize,
    bands: usize,
    reflectance: Vec<f64>,
    labels: Vec<u16>,
    pub class_names: Vec<String>,
}

impl HsiCube {
    pub fn new(
        name: impl Into<String>,
        height: usize,
        width: usize,
        bands: usize,
        reflectance: Vec<f64>,
        labels: Option<Vec<u16>>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Data(alloc::format!("empty cube {height}x{width}x{bands}")));
        }
        let pixels = height.checked_mul(width).ok_or_else(|| Error::Data("dimension overflow".into()))?;
        let total = pixels.checked_mul(bands).ok_or_else(|| Error::Data("dimension overflow".into()))?;
        if reflectance.len() != total {
            return Err(Error::Data(alloc::format!("{} reflectance values for {height}x{width}x{bands}", reflectance.len())));
        }
        if let Some(i) = reflectance.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(alloc::format!("non-finite reflectance at value {i}")));
        }
        let labels = labels.unwrap_or_else(|| alloc::vec![0; pixels]);
        if labels.len() != pixels {
            return Err(Error::Data(alloc::format!("{} labels for {pixels} pixels", labels.len())));
        }
        Ok(Self { name: name.into(), height, width, bands, reflectance, labels, class_names: Vec::new() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn reflectance(&self) -> &[f64] {
        &self.reflectance
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.bands;
        &self.reflectance[i..i + self.bands]
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    /// Largest label present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn labeled_pixels(&self) -> Vec<super::Pixel> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.label(r, c) != 0)
            .collect()
    }

    pub fn all_pixels(&self) -> Vec<super::Pixel> {
        (0..self.height).flat_map(|r| (0..self.width).map(move |c| (r, c))).collect()
    }

    pub fn with_labels(mut self, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != self.pixels() {
            return Err(Error::Data(alloc::format!("{} labels for {} pixels", labels.len(), self.pixels())));
        }
        self.labels = labels;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_payloads() {
        assert!(HsiCube::new("x", 2, 2, 3, alloc::vec![0.0; 11], None).is_err());
        assert!(HsiCube::new("x", 2, 2, 3, alloc::vec![0.0; 12], Some(alloc::vec![0; 3])).is_err());
        let mut bad = alloc::vec![0.0; 12];
        bad[5] = f64::NAN;
        assert!(HsiCube::new("x", 2, 2, 3, bad, None).is_err());
        let c = HsiCube::new("x", 2, 2, 3, alloc::vec![0.0; 12], Some(alloc::vec![0, 2, 1, 0])).unwrap();
        assert_eq!(c.num_classes(), 2);
        assert_eq!(c.labeled_pixels(), alloc::vec![(0, 1), (1, 0)]);
    }
}
