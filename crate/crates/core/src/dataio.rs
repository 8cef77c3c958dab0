//! Dataset ingestion, z-score normalization, train/test splitting, synthetic
//! task generation and feature-category metadata.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are replaced by 1.0.
pub const MIN_STD: f64 = 1e-12;

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// A labelled feature matrix. Rows are samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f32>,
    labels: Vec<usize>,
    n_classes: usize,
    pub feature_names: Option<Vec<String>>,
    /// Original label strings, indexed by class id, when labels were textual.
    pub label_names: Option<Vec<String>>,
    pub norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(features: Array2<f32>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if n_classes == 0 || features.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "dataset needs at least one feature and one class".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
            feature_names: None,
            label_names: None,
            norm_stats: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    /// Row `i` as a contiguous slice.
    pub fn sample(&self, i: usize) -> &[f32] {
        let start = i * self.n_features();
        &self.features.as_slice().expect("standard layout")[start..start + self.n_features()]
    }

    /// New dataset with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let features = self.features.select(Axis(0), rows);
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Dataset {
            features: features.as_standard_layout().into_owned(),
            labels,
            n_classes: self.n_classes,
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Sample counts per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Display name of a class.
    pub fn class_name(&self, class: usize) -> String {
        match &self.label_names {
            Some(names) if class < names.len() => names[class].clone(),
            _ => class.to_string(),
        }
    }

    pub fn feature_name(&self, i: usize) -> String {
        match &self.feature_names {
            Some(names) => names[i].clone(),
            None => format!("f{i}"),
        }
    }

    /// Write in the same CSV layout `load_csv` reads, label column last.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let header: Vec<String> = (0..self.n_features())
            .map(|i| self.feature_name(i))
            .chain(std::iter::once(label_column.to_string()))
            .collect();
        writeln!(out, "{}", header.join(",")).map_err(io)?;
        for (row, &label) in self.features.rows().into_iter().zip(&self.labels) {
            let mut line = String::with_capacity(self.n_features() * 12);
            for v in row.iter() {
                // `{}` on f32 prints the shortest round-tripping representation.
                line.push_str(&format!("{v},"));
            }
            line.push_str(&self.class_name(label));
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Load a CSV with a header row. Every column except `label_column` is a
/// feature. Labels that are all non-negative integers are used as class ids
/// directly; otherwise label strings are mapped to ids in order of first
/// appearance.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    load_csv_with_labels(path, label_column, None)
}

/// Like [`load_csv`], but textual labels are resolved against `known_labels`
/// (as recorded by a previous load) so class ids stay consistent across files.
pub fn load_csv_with_labels(
    path: &Path,
    label_column: &str,
    known_labels: Option<&[String]>,
) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let n = feature_names.len();
    if n == 0 {
        return Err(Error::InvalidConfig("CSV has no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != header.len() {
            return Err(Error::Cell {
                row,
                column: String::new(),
                message: format!("expected {} cells, found {}", header.len(), record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f32 = cell.parse().map_err(|_| Error::Cell {
                row,
                column: header[c].clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Cell {
                    row,
                    column: header[c].clone(),
                    message: format!("'{cell}' is not finite"),
                });
            }
            values.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let (labels, n_classes, label_names) = map_labels(&raw_labels, known_labels)?;
    let features = Array2::from_shape_vec((raw_labels.len(), n), values)
        .expect("row lengths checked above");
    let mut ds = Dataset::new(features, labels, n_classes)?;
    ds.feature_names = Some(feature_names);
    ds.label_names = label_names;
    Ok(ds)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

type LabelMapping = (Vec<usize>, usize, Option<Vec<String>>);

fn map_labels(raw: &[String], known: Option<&[String]>) -> Result<LabelMapping> {
    if let Some(names) = known {
        let lookup: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let labels = raw
            .iter()
            .enumerate()
            .map(|(r, s)| {
                lookup.get(s.as_str()).copied().ok_or_else(|| Error::Cell {
                    row: r + 1,
                    column: "label".into(),
                    message: format!("unknown label '{s}'"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((labels, names.len(), Some(names.to_vec())));
    }

    let ints: Option<Vec<usize>> = raw.iter().map(|s| s.parse().ok()).collect();
    if let Some(ints) = ints {
        let k = ints.iter().max().map_or(0, |&m| m + 1);
        return Ok((ints, k, None));
    }

    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let mut labels = Vec::with_capacity(raw.len());
    for s in raw {
        let id = *lookup.entry(s.as_str()).or_insert_with(|| {
            names.push(s.clone());
            names.len() - 1
        });
        labels.push(id);
    }
    let k = names.len();
    Ok((labels, k, Some(names)))
}

/// Column means and population standard deviations.
pub fn zscore_fit(dataset: &Dataset) -> Result<NormStats> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rows = dataset.n_samples() as f64;
    let mut mean = vec![0.0f64; dataset.n_features()];
    for row in dataset.features().rows() {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows);
    let mut var = vec![0.0f64; dataset.n_features()];
    for row in dataset.features().rows() {
        for ((s, &v), &m) in var.iter_mut().zip(row.iter()).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / rows).sqrt();
            if sd < MIN_STD {
                1.0
            } else {
                sd
            }
        })
        .collect();
    Ok(NormStats { mean, std })
}

/// Standardize every cell with `stats` and record them on the result.
pub fn zscore_apply(dataset: &Dataset, stats: &NormStats) -> Result<Dataset> {
    if stats.len() != dataset.n_features() || stats.std.len() != stats.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_features(),
            got: stats.len(),
        });
    }
    if let Some(bad) = stats.std.iter().find(|&&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "normalization std must be positive, got {bad}"
        )));
    }
    let mut out = dataset.clone();
    for mut row in out.features.rows_mut() {
        for ((v, &m), &s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    out.norm_stats = Some(stats.clone());
    Ok(out)
}

/// Deterministic train/test partition. Rows keep their original relative
/// order inside each part.
pub fn split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if dataset.n_samples() < 2 {
        return Err(Error::Insufficient(
            "need at least two samples to split".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_rows = Vec::new();
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
        for (i, &y) in dataset.labels().iter().enumerate() {
            by_class[y].push(i);
        }
        for (class, rows) in by_class.iter_mut().enumerate() {
            if rows.is_empty() {
                continue;
            }
            if rows.len() < 2 {
                return Err(Error::Insufficient(format!(
                    "class {class} has {} sample(s); stratified split needs at least 2",
                    rows.len()
                )));
            }
            rows.shuffle(&mut rng);
            let count = ((rows.len() as f64 * test_fraction).round() as usize).min(rows.len() - 1);
            test_rows.extend_from_slice(&rows[..count]);
        }
    } else {
        let mut rows: Vec<usize> = (0..dataset.n_samples()).collect();
        rows.shuffle(&mut rng);
        let count = ((rows.len() as f64 * test_fraction).round() as usize).clamp(1, rows.len() - 1);
        test_rows.extend_from_slice(&rows[..count]);
    }
    let in_test: BTreeSet<usize> = test_rows.into_iter().collect();
    let train_rows: Vec<usize> = (0..dataset.n_samples())
        .filter(|i| !in_test.contains(i))
        .collect();
    let test_rows: Vec<usize> = in_test.into_iter().collect();
    Ok((dataset.select_rows(&train_rows), dataset.select_rows(&test_rows)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SynthRule {
    /// Class is 1 when the single informative feature is positive.
    Sign,
    /// Class is the parity of the sign bits of two informative features. With
    /// three classes, the class is the number of positive signs instead.
    XorSign,
}

impl SynthRule {
    pub fn arity(self) -> usize {
        match self {
            SynthRule::Sign => 1,
            SynthRule::XorSign => 2,
        }
    }

    /// Apply the rule to the informative feature values.
    pub fn label(self, informative: &[f32], n_classes: usize) -> usize {
        let positive = informative.iter().filter(|&&v| v > 0.0).count();
        match (self, n_classes) {
            (SynthRule::Sign, _) => positive,
            (SynthRule::XorSign, 3) => positive,
            (SynthRule::XorSign, _) => positive % 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_features: usize,
    #[serde(default = "default_synth_classes")]
    pub n_classes: usize,
    pub informative_indices: Vec<usize>,
    pub rule: SynthRule,
    pub n_samples: usize,
    #[serde(default)]
    pub noise_std: f64,
}

fn default_synth_classes() -> usize {
    2
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_features == 0 || self.n_samples == 0 {
            return bad("n_features and n_samples must be positive".into());
        }
        match (self.rule, self.n_classes) {
            (SynthRule::Sign, 2) | (SynthRule::XorSign, 2 | 3) => {}
            (rule, k) => return bad(format!("{rule:?} does not support {k} classes")),
        }
        if self.informative_indices.len() != self.rule.arity() {
            return bad(format!(
                "{:?} needs {} informative feature(s), got {}",
                self.rule,
                self.rule.arity(),
                self.informative_indices.len()
            ));
        }
        if let Some(&i) = self.informative_indices.iter().find(|&&i| i >= self.n_features) {
            return bad(format!("informative index {i} >= n_features"));
        }
        let distinct: BTreeSet<_> = self.informative_indices.iter().collect();
        if distinct.len() != self.informative_indices.len() {
            return bad("informative indices must be distinct".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a non-negative finite number".into());
        }
        Ok(())
    }
}

/// Informative features are uniform on [-1, -0.1] ∪ [0.1, 1]; all others are
/// standard normal. The label is computed before noise is added.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise std");
    let n = spec.n_features;
    let mut features = Array2::<f32>::zeros((spec.n_samples, n));
    let mut labels = Vec::with_capacity(spec.n_samples);
    let mut informative = vec![0.0f32; spec.informative_indices.len()];
    for mut row in features.rows_mut() {
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z as f32;
        }
        for (slot, &idx) in informative.iter_mut().zip(&spec.informative_indices) {
            let magnitude = rng.random_range(0.1..=1.0f64);
            let value = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            *slot = value as f32;
            row[idx] = value as f32;
        }
        labels.push(spec.rule.label(&informative, spec.n_classes));
        if spec.noise_std > 0.0 {
            for &idx in &spec.informative_indices {
                row[idx] += noise.sample(&mut rng) as f32;
            }
        }
    }
    let mut ds = Dataset::new(features, labels, spec.n_classes)?;
    ds.feature_names = Some((0..n).map(|i| format!("f{i}")).collect());
    Ok(ds)
}

/// Named, pairwise-disjoint groups of feature indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryMap {
    categories: Vec<(String, BTreeSet<usize>)>,
}

impl CategoryMap {
    pub fn new(categories: Vec<(String, Vec<usize>)>, n_features: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(categories.len());
        for (name, indices) in categories {
            let mut set = BTreeSet::new();
            for i in indices {
                if i >= n_features {
                    return Err(Error::InvalidCategories(format!(
                        "category '{name}' has index {i} outside [0, {n_features})"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::InvalidCategories(format!(
                        "feature {i} appears in more than one category"
                    )));
                }
                set.insert(i);
            }
            out.push((name, set));
        }
        if out.is_empty() {
            return Err(Error::InvalidCategories("no categories".into()));
        }
        Ok(Self { categories: out })
    }

    /// Parse a JSON object mapping category name to an index array. File
    /// order of the keys is kept.
    pub fn from_json(text: &str, n_features: usize) -> Result<Self> {
        let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let mut cats = Vec::with_capacity(map.len());
        for (name, value) in map {
            let indices: Vec<usize> = serde_json::from_value(value).map_err(|_| {
                Error::InvalidCategories(format!(
                    "category '{name}' must be an array of non-negative integers"
                ))
            })?;
            cats.push((name, indices));
        }
        Self::new(cats, n_features)
    }

    pub fn load(path: &Path, n_features: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, n_features)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .categories
            .iter()
            .map(|(name, set)| (name.clone(), serde_json::json!(set)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    /// `count` contiguous categories of (nearly) equal size covering all features.
    pub fn equal_blocks(n_features: usize, count: usize) -> Result<Self> {
        if count == 0 || count > n_features {
            return Err(Error::InvalidCategories(format!(
                "cannot split {n_features} features into {count} categories"
            )));
        }
        let cats = (0..count)
            .map(|c| {
                let lo = c * n_features / count;
                let hi = (c + 1) * n_features / count;
                (format!("cat{c}"), (lo..hi).collect())
            })
            .collect();
        Self::new(cats, n_features)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|(n, _)| n.as_str())
    }

    pub fn indices(&self, category: usize) -> &BTreeSet<usize> {
        &self.categories[category].1
    }

    pub fn size(&self, category: usize) -> usize {
        self.categories[category].1.len()
    }

    pub fn coverage(&self) -> BTreeSet<usize> {
        self.categories
            .iter()
            .flat_map(|(_, s)| s.iter().copied())
            .collect()
    }

    /// Category of every feature index in `[0, n_features)`.
    pub fn lookup(&self, n_features: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_features];
        for (c, (_, set)) in self.categories.iter().enumerate() {
            for &i in set {
                if i < n_features {
                    out[i] = Some(c);
                }
            }
        }
        out
    }
}
