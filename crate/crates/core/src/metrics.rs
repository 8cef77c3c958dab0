//! Classification quality and episode-length reporting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for c in [truth, predicted] {
            if c >= self.k {
                return Err(Error::InvalidConfig(format!("class {c} out of range for k = {}", self.k)));
            }
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.row(c).iter().sum()
    }

    pub fn predicted_count(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum()
    }

    /// CSV with a header of predicted-class names; each row starts with the
    /// true-class name.
    pub fn write_csv(&self, path: &Path, class_names: &[String]) -> Result<()> {
        if class_names.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: class_names.len(),
            });
        }
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (t, name) in class_names.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.row(t).iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: preds.len(),
        });
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(labels) {
        m.add(t, p)?;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub length: usize,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub n_samples: u64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub episode_length: LengthStats,
    /// Non-empty bins only, ascending by length.
    pub length_histogram: Vec<HistogramBin>,
    /// `n / mean episode length`; `None` when nothing was revealed.
    pub efficiency_ratio: Option<f64>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn histogram(lengths: &[usize]) -> Vec<HistogramBin> {
    let mut map = std::collections::BTreeMap::<usize, u64>::new();
    for &l in lengths {
        *map.entry(l).or_default() += 1;
    }
    map.into_iter().map(|(length, count)| HistogramBin { length, count }).collect()
}

pub fn length_stats(lengths: &[usize]) -> LengthStats {
    if lengths.is_empty() {
        return LengthStats {
            mean: 0.0,
            std: 0.0,
            min: 0,
            max: 0,
        };
    }
    let n = lengths.len() as f64;
    let mean = lengths.iter().sum::<usize>() as f64 / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    LengthStats {
        mean,
        std: var.sqrt(),
        min: *lengths.iter().min().unwrap(),
        max: *lengths.iter().max().unwrap(),
    }
}

pub fn efficiency_ratio(n_features: usize, mean_length: f64) -> Option<f64> {
    (mean_length > 0.0).then(|| n_features as f64 / mean_length)
}

pub fn summarize(confusion: &ConfusionMatrix, lengths: &[usize], n_features: usize) -> MetricsReport {
    let k = confusion.n_classes();
    let total = confusion.total();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion.get(c, c);
            let precision = ratio(tp, confusion.predicted_count(c));
            let recall = ratio(tp, confusion.support(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: confusion.support(c),
            }
        })
        .collect();

    let macro_avg = if k == 0 {
        Averages {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    } else {
        Averages {
            precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k as f64,
            recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k as f64,
            f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64,
        }
    };
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    let stats = length_stats(lengths);
    MetricsReport {
        accuracy: ratio(confusion.trace(), total),
        n_samples: total,
        per_class,
        macro_avg,
        weighted_avg,
        efficiency_ratio: if lengths.is_empty() {
            None
        } else {
            efficiency_ratio(n_features, stats.mean)
        },
        episode_length: stats,
        length_histogram: histogram(lengths),
        confusion: confusion.clone(),
    }
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// `length,count` rows.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["length", "count"]).map_err(csv_err)?;
        for bin in &self.length_histogram {
            w.write_record([bin.length.to_string(), bin.count.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
