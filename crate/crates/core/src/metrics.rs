//! Confusion-matrix accounting, OA / AA / Cohen's κ, and aggregation over
//! repeated runs (population standard deviation).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions, both 0-based class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Param(alloc::format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Param("truth and prediction lengths differ".into()));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            return Err(Error::Param(alloc::format!("class pair ({truth}, {predicted}) outside 0..{}", self.classes)));
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }
}

/// Scores of a single evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Chance agreement `p_e`.
    pub expected_agreement: f64,
    /// `None` for classes with no evaluated pixels.
    pub per_class: Vec<Option<f64>>,
    /// Set when `p_e == 1` and κ was assigned by convention.
    pub kappa_degenerate: bool,
}

/// OA, AA and κ of a confusion matrix. AA averages only classes that have
/// at least one evaluated pixel.
pub fn metrics(cm: &ConfusionMatrix) -> Result<RunMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let n = total as f64;
    let k = cm.classes();
    let trace: u64 = (0..k).map(|i| cm.get(i, i)).sum();
    let oa = trace as f64 / n;
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|i| {
            let row = cm.row_sum(i);
            (row > 0).then(|| cm.get(i, i) as f64 / row as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = present.iter().sum::<f64>() / present.len() as f64;
    let pe = (0..k).map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64).sum::<f64>() / (n * n);
    let (kappa, kappa_degenerate) = if pe >= 1.0 {
        (if oa == 1.0 { 1.0 } else { 0.0 }, true)
    } else {
        ((oa - pe) / (1.0 - pe), false)
    };
    Ok(RunMetrics { oa, aa, kappa, expected_agreement: pe, per_class, kappa_degenerate })
}

/// Mean and population standard deviation of one quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: libm::sqrt(var) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub runs: Vec<RunMetrics>,
    pub oa: Summary,
    pub aa: Summary,
    pub kappa: Summary,
    pub per_class: Vec<Option<Summary>>,
}

pub fn aggregate_runs(runs: &[RunMetrics]) -> Result<EvalReport> {
    let first = runs.first().ok_or_else(|| Error::Param("no runs to aggregate".into()))?;
    let classes = first.per_class.len();
    if runs.iter().any(|r| r.per_class.len() != classes) {
        return Err(Error::Param("runs disagree on class count".into()));
    }
    let pick = |f: fn(&RunMetrics) -> f64| Summary::of(&runs.iter().map(f).collect::<Vec<_>>()).expect("non-empty");
    let per_class = (0..classes)
        .map(|c| Summary::of(&runs.iter().filter_map(|r| r.per_class[c]).collect::<Vec<_>>()))
        .collect();
    Ok(EvalReport {
        runs: runs.to_vec(),
        oa: pick(|r| r.oa),
        aa: pick(|r| r.aa),
        kappa: pick(|r| r.kappa),
        per_class,
    })
}
