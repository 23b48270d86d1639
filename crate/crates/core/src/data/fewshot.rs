use alloc::vec::Vec;

use rand::seq::index;

use super::{HsiCube, Pixel};
use crate::error::{Error, Result};
use crate::rng;

/// k labeled training pixels per class; everything else labeled is test.
/// `train[i]` and `test[i]` hold class `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSplit {
    pub k: usize,
    pub train: Vec<Vec<Pixel>>,
    pub test: Vec<Vec<Pixel>>,
}

impl FewShotSplit {
    pub fn num_classes(&self) -> usize {
        self.train.len()
    }

    /// Training pixels with 0-based class indices, class-major.
    pub fn train_samples(&self) -> Vec<(Pixel, usize)> {
        self.train.iter().enumerate().flat_map(|(c, px)| px.iter().map(move |&p| (p, c))).collect()
    }

    pub fn test_samples(&self) -> Vec<(Pixel, usize)> {
        self.test.iter().enumerate().flat_map(|(c, px)| px.iter().map(move |&p| (p, c))).collect()
    }
}

/// Uniform without-replacement draw of `k` pixels per class.
///
/// A class with fewer than `k` pixels is an error; a class with exactly `k`
/// is an error too unless `allow_empty_test` is set.
pub fn sample_few_shot(cube: &HsiCube, k: usize, seed: u64, allow_empty_test: bool) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    let classes = cube.num_classes();
    if classes == 0 {
        return Err(Error::Data("no labeled pixels".into()));
    }
    let mut per_class: Vec<Vec<Pixel>> = alloc::vec![Vec::new(); classes];
    for (r, c) in cube.labeled_pixels() {
        per_class[cube.label(r, c) as usize - 1].push((r, c));
    }
    let mut train = Vec::with_capacity(classes);
    let mut test = Vec::with_capacity(classes);
    for (i, pixels) in per_class.into_iter().enumerate() {
        let class = i + 1;
        let name = cube.class_names.get(i).map(|s| alloc::format!(" ({s})")).unwrap_or_default();
        if pixels.len() < k {
            return Err(Error::Data(alloc::format!("class {class}{name} has {} labeled pixels, need {k}", pixels.len())));
        }
        if pixels.len() == k && !allow_empty_test {
            return Err(Error::Data(alloc::format!("class {class}{name} has exactly {k} pixels, leaving no test pixels")));
        }
        let mut rng = rng::stream(seed, &[0x6673, class as u64]);
        let mut chosen = alloc::vec![false; pixels.len()];
        for j in index::sample(&mut rng, pixels.len(), k).into_iter() {
            chosen[j] = true;
        }
        let (tr, te): (Vec<_>, Vec<_>) = pixels.into_iter().zip(chosen).partition(|(_, c)| *c);
        train.push(tr.into_iter().map(|(p, _)| p).collect());
        test.push(te.into_iter().map(|(p, _)| p).collect());
    }
    Ok(FewShotSplit { k, train, test })
}
