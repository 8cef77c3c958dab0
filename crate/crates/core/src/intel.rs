//! Quantitative assessment of a learned selection policy: category
//! preference, learning score, feature specialization, temporal usage and
//! sample-type adaptation.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::agent::SelectionLog;
use crate::dataio::{CategoryMap, Dataset};
use crate::error::{Error, Result};

/// Steps covered by the temporal usage matrices.
pub const TEMPORAL_STEPS: usize = 15;
pub const DEFAULT_SIG_THRESHOLD: f64 = 0.2;
pub const DEFAULT_SPEC_THRESHOLD: f64 = 0.05;
const DEGENERATE_VAR: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryUsage {
    pub name: String,
    pub size: usize,
    /// Share of all selection events that fell in this category.
    pub observed: f64,
    /// `size / n`.
    pub expected: f64,
    pub preference: f64,
}

pub fn preference_ratios(log: &SelectionLog, cats: &CategoryMap, n_features: usize) -> Result<Vec<CategoryUsage>> {
    if log.is_empty() {
        return Err(Error::Insufficient("empty selection log".into()));
    }
    if n_features == 0 {
        return Err(Error::InvalidConfig("n_features must be positive".into()));
    }
    for (c, name) in cats.names().enumerate() {
        if cats.size(c) == 0 {
            return Err(Error::InvalidCategories(format!("category '{name}' covers no features")));
        }
    }
    let lookup = cats.lookup(n_features);
    let mut counts = vec![0u64; cats.len()];
    let mut total = 0u64;
    for ep in &log.episodes {
        for &f in &ep.features {
            if f >= n_features {
                return Err(Error::DimensionMismatch {
                    expected: n_features,
                    got: f + 1,
                });
            }
            total += 1;
            if let Some(c) = lookup[f] {
                counts[c] += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Insufficient("log contains no feature selections".into()));
    }
    Ok(cats
        .names()
        .enumerate()
        .map(|(c, name)| {
            let observed = counts[c] as f64 / total as f64;
            let expected = cats.size(c) as f64 / n_features as f64;
            CategoryUsage {
                name: name.to_string(),
                size: cats.size(c),
                observed,
                expected,
                preference: observed / expected,
            }
        })
        .collect())
}

/// Fraction of categories whose preference ratio is further than
/// `threshold` from 1.
pub fn learning_score(ratios: &[CategoryUsage], threshold: f64) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    let deviant = ratios.iter().filter(|u| (u.preference - 1.0).abs() > threshold).count();
    deviant as f64 / ratios.len() as f64
}

/// Discrimination strength. Infinite when both groups are constant but
/// differ; serialized as `"degenerate"` in that case.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Strength(pub f64);

impl Strength {
    pub fn is_degenerate(self) -> bool {
        self.0.is_infinite()
    }
}

impl Serialize for Strength {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("degenerate")
        }
    }
}

impl<'de> Deserialize<'de> for Strength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Strength(v)),
            Repr::Tag(t) if t == "degenerate" => Ok(Strength(f64::INFINITY)),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!("unexpected strength '{t}'"))),
        }
    }
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Standardized mean difference of `feature` between the rows labelled with
/// a class in `class_a` and those in `class_b`, using population variances.
pub fn discrimination_strength(
    dataset: &Dataset,
    feature: usize,
    class_a: &[usize],
    class_b: &[usize],
) -> Result<Strength> {
    if feature >= dataset.n_features() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n_features(),
            got: feature + 1,
        });
    }
    let column = dataset.features().column(feature);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (&v, &y) in column.iter().zip(dataset.labels()) {
        if class_a.contains(&y) {
            a.push(v as f64);
        } else if class_b.contains(&y) {
            b.push(v as f64);
        }
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Insufficient(format!("empty class group for feature {feature}")));
    }
    Ok(Strength(pooled_difference(&a, &b)))
}

fn pooled_difference(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let diff = (ma - mb).abs();
    if va < DEGENERATE_VAR && vb < DEGENERATE_VAR {
        return if diff == 0.0 { 0.0 } else { f64::INFINITY };
    }
    diff / ((va + vb) / 2.0).sqrt()
}

/// Fraction of the given strengths whose magnitude exceeds `tau`.
pub fn specialization_score(d_values: &[Strength], tau: f64) -> Result<f64> {
    if d_values.is_empty() {
        return Err(Error::Insufficient("no analyzed features".into()));
    }
    let above = d_values.iter().filter(|d| d.0.abs() > tau).count();
    Ok(above as f64 / d_values.len() as f64)
}

/// Category usage per decision step for one sample type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalUsageMatrix {
    pub class: usize,
    /// `usage[c][t]`: share of categorized selections at step `t + 1` that
    /// fell in category `c`. Zero columns are unpopulated steps.
    pub usage: Vec<Vec<f64>>,
    /// Categorized selections observed at each step.
    pub step_counts: Vec<u64>,
}

impl TemporalUsageMatrix {
    pub fn populated_steps(&self) -> usize {
        self.step_counts.iter().filter(|&&c| c > 0).count()
    }

    /// Header `category,step1,...,step15`.
    pub fn write_csv(&self, path: &Path, category_names: &[String]) -> Result<()> {
        if category_names.len() != self.usage.len() {
            return Err(Error::DimensionMismatch {
                expected: self.usage.len(),
                got: category_names.len(),
            });
        }
        let csv_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["category".to_string()];
        header.extend((1..=TEMPORAL_STEPS).map(|t| format!("step{t}")));
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in category_names.iter().zip(&self.usage) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn temporal_matrix(log: &SelectionLog, cats: &CategoryMap, n_features: usize, class: usize) -> TemporalUsageMatrix {
    let lookup = cats.lookup(n_features);
    let mut counts = vec![vec![0u64; TEMPORAL_STEPS]; cats.len()];
    let mut step_counts = vec![0u64; TEMPORAL_STEPS];
    for ep in log.episodes.iter().filter(|e| e.true_label == class) {
        for (t, &f) in ep.features.iter().take(TEMPORAL_STEPS).enumerate() {
            if let Some(c) = lookup.get(f).copied().flatten() {
                counts[c][t] += 1;
                step_counts[t] += 1;
            }
        }
    }
    let usage = counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&step_counts)
                .map(|(&c, &total)| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect();
    TemporalUsageMatrix {
        class,
        usage,
        step_counts,
    }
}

/// Mean over categories of the population variance of the category's usage
/// across all steps.
pub fn temporal_intelligence(matrix: &TemporalUsageMatrix) -> Result<f64> {
    if matrix.populated_steps() < 2 {
        return Err(Error::Insufficient(format!(
            "class {} has {} populated steps, need 2",
            matrix.class,
            matrix.populated_steps()
        )));
    }
    if matrix.usage.is_empty() {
        return Err(Error::InvalidCategories("no categories".into()));
    }
    let total: f64 = matrix.usage.iter().map(|row| mean_var(row).1).sum();
    Ok(total / matrix.usage.len() as f64)
}

/// Normalized category usage over the episodes whose true label is in
/// `classes`. All zeros when no such selection was categorized.
pub fn category_distribution(log: &SelectionLog, cats: &CategoryMap, n_features: usize, classes: &[usize]) -> Vec<f64> {
    let lookup = cats.lookup(n_features);
    let mut counts = vec![0u64; cats.len()];
    for ep in log.episodes.iter().filter(|e| classes.contains(&e.true_label)) {
        for &f in &ep.features {
            if let Some(c) = lookup.get(f).copied().flatten() {
                counts[c] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

/// L1 distance between two category-usage distributions.
pub fn sample_type_adaptation(usage_a: &[f64], usage_b: &[f64]) -> Result<f64> {
    if usage_a.len() != usage_b.len() {
        return Err(Error::DimensionMismatch {
            expected: usage_a.len(),
            got: usage_b.len(),
        });
    }
    Ok(usage_a.iter().zip(usage_b).map(|(a, b)| (a - b).abs()).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStrength {
    pub feature: usize,
    pub name: String,
    pub d: Strength,
}

/// One class contrast (class 1 vs class 0 for binary data, class vs rest
/// otherwise).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Specialization {
    pub class: String,
    pub versus: String,
    #[serde(rename = "per_feature_D")]
    pub per_feature_d: Vec<FeatureStrength>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub class: String,
    pub versus: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub class: String,
    /// `None` when fewer than two steps were populated.
    pub intelligence: Option<f64>,
    pub matrix: TemporalUsageMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub name: String,
    pub selection_frequency: f64,
    pub d: Strength,
    pub importance: Strength,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntelligenceReport {
    pub n_episodes: usize,
    pub n_selections: u64,
    pub sig_threshold: f64,
    pub spec_threshold: f64,
    pub categories: Vec<String>,
    pub preference_ratios: Vec<CategoryUsage>,
    pub learning_score: f64,
    /// Features selected at least once.
    pub analyzed_features: Vec<usize>,
    pub specialization: Vec<Specialization>,
    pub temporal: Vec<TemporalReport>,
    /// Mean of the defined per-class temporal values.
    pub temporal_intelligence: Option<f64>,
    pub adaptation: Vec<Adaptation>,
    /// Descending by importance.
    pub feature_importance: Vec<FeatureImportance>,
}

impl IntelligenceReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AnalyzeOptions {
    pub sig_threshold: f64,
    pub spec_threshold: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            sig_threshold: DEFAULT_SIG_THRESHOLD,
            spec_threshold: DEFAULT_SPEC_THRESHOLD,
        }
    }
}

/// Class contrasts used for discrimination and adaptation:
/// `(label, positive classes, negative classes, negative label)`.
fn contrasts(dataset: &Dataset) -> Vec<(String, Vec<usize>, Vec<usize>, String)> {
    let k = dataset.n_classes();
    if k == 2 {
        return vec![(dataset.class_name(1), vec![1], vec![0], dataset.class_name(0))];
    }
    (0..k)
        .map(|c| {
            let rest = (0..k).filter(|&o| o != c).collect();
            (dataset.class_name(c), vec![c], rest, "rest".to_string())
        })
        .collect()
}

pub fn analyze(log: &SelectionLog, dataset: &Dataset, cats: &CategoryMap, opts: AnalyzeOptions) -> Result<IntelligenceReport> {
    let n = dataset.n_features();
    if log.episodes.iter().any(|e| e.true_label >= dataset.n_classes()) {
        return Err(Error::InvalidConfig("log label outside dataset classes".into()));
    }
    let preference = preference_ratios(log, cats, n)?;
    let learning = learning_score(&preference, opts.sig_threshold);

    let mut freq = vec![0u64; n];
    for ep in &log.episodes {
        for &f in &ep.features {
            freq[f] += 1;
        }
    }
    let n_selections: u64 = freq.iter().sum();
    let analyzed: Vec<usize> = (0..n).filter(|&f| freq[f] > 0).collect();
    let class_counts = dataset.class_counts();

    let mut specialization = Vec::new();
    let mut adaptation = Vec::new();
    let mut best_d = vec![Strength(0.0); n];
    for (label, pos, neg, versus) in contrasts(dataset) {
        let populated = |cls: &[usize]| cls.iter().any(|&c| class_counts[c] > 0);
        if populated(&pos) && populated(&neg) {
            let per_feature_d = analyzed
                .iter()
                .map(|&f| {
                    let d = discrimination_strength(dataset, f, &pos, &neg)?;
                    if d.0.abs() > best_d[f].0.abs() {
                        best_d[f] = d;
                    }
                    Ok(FeatureStrength {
                        feature: f,
                        name: dataset.feature_name(f),
                        d,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ds: Vec<Strength> = per_feature_d.iter().map(|x| x.d).collect();
            specialization.push(Specialization {
                class: label.clone(),
                versus: versus.clone(),
                per_feature_d,
                score: specialization_score(&ds, opts.spec_threshold)?,
            });
        }
        let a = category_distribution(log, cats, n, &pos);
        let b = category_distribution(log, cats, n, &neg);
        adaptation.push(Adaptation {
            class: label,
            versus,
            value: sample_type_adaptation(&a, &b)?,
        });
    }

    let temporal: Vec<TemporalReport> = (0..dataset.n_classes())
        .map(|c| {
            let matrix = temporal_matrix(log, cats, n, c);
            TemporalReport {
                class: dataset.class_name(c),
                intelligence: temporal_intelligence(&matrix).ok(),
                matrix,
            }
        })
        .collect();
    let defined: Vec<f64> = temporal.iter().filter_map(|t| t.intelligence).collect();
    let temporal_intelligence = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

    let mut feature_importance: Vec<FeatureImportance> = analyzed
        .iter()
        .map(|&f| {
            let selection_frequency = freq[f] as f64 / n_selections as f64;
            FeatureImportance {
                feature: f,
                name: dataset.feature_name(f),
                selection_frequency,
                d: best_d[f],
                importance: Strength(selection_frequency * best_d[f].0.abs()),
            }
        })
        .collect();
    feature_importance.sort_by(|a, b| b.importance.0.total_cmp(&a.importance.0).then(a.feature.cmp(&b.feature)));

    Ok(IntelligenceReport {
        n_episodes: log.len(),
        n_selections,
        sig_threshold: opts.sig_threshold,
        spec_threshold: opts.spec_threshold,
        categories: cats.names().map(str::to_string).collect(),
        preference_ratios: preference,
        learning_score: learning,
        analyzed_features: analyzed,
        specialization,
        temporal,
        temporal_intelligence,
        adaptation,
        feature_importance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::EpisodeRecord;
    use ndarray::Array2;
    use proptest::collection::vec;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ep(label: usize, features: &[usize]) -> EpisodeRecord {
        EpisodeRecord {
            true_label: label,
            predicted_label: label,
            features: features.to_vec(),
        }
    }

    fn log(eps: Vec<EpisodeRecord>) -> SelectionLog {
        SelectionLog { episodes: eps }
    }

    fn usage(preference: f64) -> CategoryUsage {
        CategoryUsage {
            name: String::new(),
            size: 1,
            observed: preference,
            expected: 1.0,
            preference,
        }
    }

    #[test]
    fn preference_from_counts() {
        let cats = CategoryMap::new(vec![("a".into(), vec![0, 1]), ("b".into(), vec![2, 3])], 4).unwrap();
        let l = log(vec![ep(0, &[0, 1, 2]), ep(1, &[0])]);
        let r = preference_ratios(&l, &cats, 4).unwrap();
        assert_eq!(r[0].observed, 0.75);
        assert_eq!(r[0].expected, 0.5);
        assert_eq!(r[0].preference, 1.5);
        assert_eq!(r[1].preference, 0.5);
        let never = log(vec![ep(0, &[0, 1])]);
        assert_eq!(preference_ratios(&never, &cats, 4).unwrap()[1].preference, 0.0);
    }

    #[test]
    fn preference_errors() {
        let cats = CategoryMap::new(vec![("a".into(), vec![0]), ("empty".into(), vec![])], 4).unwrap();
        assert!(preference_ratios(&log(vec![]), &cats, 4).is_err());
        assert!(matches!(
            preference_ratios(&log(vec![ep(0, &[0])]), &cats, 4),
            Err(Error::InvalidCategories(_))
        ));
    }

    #[test]
    fn back_computed_usage_for_large_n() {
        // 10 features out of 2381 at 7.73x preference
        let expected: f64 = 10.0 / 2381.0;
        assert!((7.73 * expected - 0.0325).abs() < 5e-5);
    }

    #[test]
    fn learning_score_examples() {
        let mut ratios: Vec<_> = [1.5, 0.5, 2.0, 0.1, 1.3].into_iter().map(usage).collect();
        ratios.extend([1.0, 1.1, 0.9].into_iter().map(usage));
        assert_eq!(learning_score(&ratios, 0.2), 0.625);
        assert_eq!(learning_score(&vec![usage(1.0); 4], 0.2), 0.0);
        assert_eq!(learning_score(&vec![usage(2.0); 4], 0.2), 1.0);
    }

    fn two_group(a: &[f32], b: &[f32]) -> Dataset {
        let values: Vec<f32> = a.iter().chain(b).copied().collect();
        let labels = std::iter::repeat_n(0, a.len()).chain(std::iter::repeat_n(1, b.len())).collect();
        Dataset::new(Array2::from_shape_vec((values.len(), 1), values).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn discrimination_examples() {
        let ds = two_group(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]);
        assert_eq!(discrimination_strength(&ds, 0, &[0], &[1]).unwrap().0, 0.0);
        // means 1 and 0, population std 1 in both groups
        let ds = two_group(&[0.0, 2.0], &[-1.0, 1.0]);
        assert_eq!(discrimination_strength(&ds, 0, &[0], &[1]).unwrap().0, 1.0);
        let ds = two_group(&[5.0, 5.0], &[5.0, 5.0]);
        assert_eq!(discrimination_strength(&ds, 0, &[0], &[1]).unwrap().0, 0.0);
        let ds = two_group(&[5.0, 5.0], &[4.0]);
        let d = discrimination_strength(&ds, 0, &[0], &[1]).unwrap();
        assert!(d.is_degenerate());
        assert_eq!(serde_json::to_string(&d).unwrap(), "\"degenerate\"");
        let back: Strength = serde_json::from_str("\"degenerate\"").unwrap();
        assert!(back.is_degenerate());
        assert!(discrimination_strength(&ds, 0, &[0], &[7]).is_err());
    }

    #[test]
    fn specialization_examples() {
        assert_eq!(specialization_score(&[Strength(0.0); 3], 0.05).unwrap(), 0.0);
        assert_eq!(specialization_score(&[Strength(1.0), Strength(-1.0)], 0.05).unwrap(), 1.0);
        assert_eq!(specialization_score(&[Strength(0.04), Strength(f64::INFINITY)], 0.05).unwrap(), 0.5);
        assert!(specialization_score(&[], 0.05).is_err());
    }

    #[test]
    fn temporal_examples() {
        let cats = CategoryMap::new(vec![("a".into(), vec![0, 1]), ("b".into(), vec![2, 3])], 4).unwrap();
        // category a at every step for every episode: constant row
        let l = log(vec![ep(0, &[0, 1]), ep(0, &[1, 0])]);
        let m = temporal_matrix(&l, &cats, 4, 0);
        assert_eq!(m.usage[0][..2], [1.0, 1.0]);
        assert_eq!(m.populated_steps(), 2);
        // row a is [1, 1, 0 x 13], row b all zeros
        let var_a = 2.0 / 15.0 - (2.0f64 / 15.0).powi(2);
        assert!((temporal_intelligence(&m).unwrap() - var_a / 2.0).abs() < 1e-15);

        // alternating a, b over all 15 steps is not possible with 4 features,
        // so check the row variance directly
        let alternating: Vec<f64> = (0..16).map(|t| (t % 2) as f64).collect();
        assert_eq!(mean_var(&alternating).1, 0.25);

        let single = log(vec![ep(0, &[0])]);
        assert!(temporal_intelligence(&temporal_matrix(&single, &cats, 4, 0)).is_err());
    }

    #[test]
    fn temporal_constant_usage_is_zero() {
        let cats = CategoryMap::equal_blocks(30, 2).unwrap();
        let all: Vec<usize> = (0..15).collect();
        let m = TemporalUsageMatrix {
            class: 0,
            usage: vec![vec![0.5; TEMPORAL_STEPS]; 2],
            step_counts: vec![2; TEMPORAL_STEPS],
        };
        assert_eq!(temporal_intelligence(&m).unwrap(), 0.0);
        let full = temporal_matrix(&log(vec![ep(0, &all)]), &cats, 30, 0);
        assert_eq!(temporal_intelligence(&full).unwrap(), 0.0);
    }

    #[test]
    fn adaptation_examples() {
        assert_eq!(sample_type_adaptation(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert_eq!(sample_type_adaptation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(sample_type_adaptation(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn temporal_csv_layout() {
        let cats = CategoryMap::new(vec![("a".into(), vec![0]), ("b".into(), vec![1])], 2).unwrap();
        let m = temporal_matrix(&log(vec![ep(0, &[0, 1])]), &cats, 2, 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        m.write_csv(&p, &["a".into(), "b".into()]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("category,step1,step2,"));
        assert!(lines[0].ends_with("step15"));
        assert!(lines[1].starts_with("a,1,0,0"));
        assert!(lines[2].starts_with("b,0,1,0"));
    }

    fn random_dataset(rng: &mut ChaCha8Rng, rows: usize, n: usize, k: usize) -> Dataset {
        let values = (0..rows * n).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let labels = (0..rows).map(|i| i % k).collect();
        Dataset::new(Array2::from_shape_vec((rows, n), values).unwrap(), labels, k).unwrap()
    }

    fn random_log(rng: &mut ChaCha8Rng, episodes: usize, n: usize, k: usize) -> SelectionLog {
        log((0..episodes)
            .map(|_| {
                let len = rng.random_range(1..=n);
                let mut feats: Vec<usize> = (0..n).collect();
                for i in 0..len {
                    let j = rng.random_range(i..n);
                    feats.swap(i, j);
                }
                ep(rng.random_range(0..k), &feats[..len])
            })
            .collect())
    }

    #[test]
    fn analyze_binary_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = random_dataset(&mut rng, 40, 20, 2);
        let cats = CategoryMap::equal_blocks(20, 4).unwrap();
        let l = random_log(&mut rng, 30, 20, 2);
        let r = analyze(&l, &ds, &cats, AnalyzeOptions::default()).unwrap();
        assert_eq!(r.specialization.len(), 1);
        assert_eq!(r.adaptation.len(), 1);
        assert_eq!(r.temporal.len(), 2);
        let sum_u: f64 = r.preference_ratios.iter().map(|u| u.observed).sum();
        assert!((sum_u - 1.0).abs() < 1e-12);
        for w in r.feature_importance.windows(2) {
            assert!(w[0].importance.0 >= w[1].importance.0);
        }
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["specialization"][0]["per_feature_D"].is_array());
        let back: IntelligenceReport = serde_json::from_value(json).unwrap();
        assert_eq!(back.learning_score, r.learning_score);
    }

    #[test]
    fn analyze_multiclass_is_one_vs_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = random_dataset(&mut rng, 30, 10, 3);
        let cats = CategoryMap::equal_blocks(10, 2).unwrap();
        let l = random_log(&mut rng, 12, 10, 3);
        let r = analyze(&l, &ds, &cats, AnalyzeOptions::default()).unwrap();
        assert_eq!(r.specialization.len(), 3);
        assert_eq!(r.adaptation.len(), 3);
        assert!(r.adaptation.iter().all(|a| a.versus == "rest"));
    }

    #[test]
    fn analyze_single_episode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = random_dataset(&mut rng, 10, 6, 2);
        let cats = CategoryMap::equal_blocks(6, 2).unwrap();
        let r = analyze(&log(vec![ep(1, &[0, 4, 2])]), &ds, &cats, AnalyzeOptions::default()).unwrap();
        assert!(r.learning_score.is_finite());
        assert!(r.temporal[1].intelligence.is_some());
        assert!(r.temporal[0].intelligence.is_none());
        assert_eq!(r.temporal_intelligence, r.temporal[1].intelligence);
        assert_eq!(r.analyzed_features, vec![0, 2, 4]);
    }

    proptest! {
        #[test]
        fn duplication_invariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cats = CategoryMap::equal_blocks(12, 3).unwrap();
            let l = random_log(&mut rng, 8, 12, 2);
            let mut doubled = l.clone();
            doubled.episodes.extend(l.episodes.iter().cloned());
            let a = preference_ratios(&l, &cats, 12).unwrap();
            let b = preference_ratios(&doubled, &cats, 12).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(learning_score(&a, 0.2), learning_score(&b, 0.2));
            let adapt = |x: &SelectionLog| sample_type_adaptation(
                &category_distribution(x, &cats, 12, &[0]),
                &category_distribution(x, &cats, 12, &[1]),
            ).unwrap();
            prop_assert_eq!(adapt(&l), adapt(&doubled));
        }

        #[test]
        fn specialization_monotone_in_tau(ds in vec(-3.0f64..3.0, 1..30), t1 in 0.001f64..2.0, t2 in 0.001f64..2.0) {
            let d: Vec<Strength> = ds.into_iter().map(Strength).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(specialization_score(&d, hi).unwrap() <= specialization_score(&d, lo).unwrap());
        }

        #[test]
        fn adaptation_symmetric_and_bounded(a in vec(0.0f64..1.0, 4), b in vec(0.0f64..1.0, 4)) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum::<f64>() + 1e-9; v.into_iter().map(|x| x / s).collect::<Vec<_>>() };
            let (a, b) = (norm(a), norm(b));
            let ab = sample_type_adaptation(&a, &b).unwrap();
            prop_assert_eq!(ab, sample_type_adaptation(&b, &a).unwrap());
            prop_assert!((0.0..=2.0 + 1e-12).contains(&ab));
        }

        #[test]
        fn temporal_columns_sum_to_one(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cats = CategoryMap::equal_blocks(20, 4).unwrap();
            let l = random_log(&mut rng, 10, 20, 2);
            let m = temporal_matrix(&l, &cats, 20, 0);
            for t in 0..TEMPORAL_STEPS {
                let s: f64 = m.usage.iter().map(|row| row[t]).sum();
                if m.step_counts[t] > 0 {
                    prop_assert!((s - 1.0).abs() < 1e-9);
                } else {
                    prop_assert_eq!(s, 0.0);
                }
            }
        }
    }
}
