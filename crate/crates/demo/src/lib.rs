//! Browser front end for seqsel.
//!
//! A [`Session`] trains a small agent on a synthetic task in chunks, replays
//! greedy episodes on held-out samples with the Q-values seen at each step,
//! and summarizes which features the policy ends up using. [`Demo`] is the
//! wasm-bindgen wrapper; every method exchanges JSON strings.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use seqsel::agent::{evaluate, greedy_action, SelectionLog, TrainConfig, Trainer};
use seqsel::dataio::{split, synth_generate, zscore_apply, zscore_fit, CategoryMap, Dataset, SynthRule, SynthSpec};
use seqsel::intel::{self, CategoryUsage};
use seqsel::mdp::Action;
use seqsel::metrics::{histogram, HistogramBin};

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionOptions {
    pub rule: SynthRule,
    pub n_features: usize,
    pub informative_indices: Vec<usize>,
    pub n_samples: usize,
    pub noise_std: f64,
    pub episodes: u64,
    pub lambda: f32,
    pub seed: u64,
    /// Equal-sized feature blocks used for the usage summary.
    pub categories: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            rule: SynthRule::Sign,
            n_features: 8,
            informative_indices: vec![0],
            n_samples: 1000,
            noise_std: 0.0,
            episodes: 3000,
            lambda: 0.05,
            seed: 0,
            categories: 4,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Progress {
    pub episodes_done: u64,
    pub episodes_total: u64,
    pub epsilon: f64,
    /// Over the episodes of this chunk.
    pub accuracy: f64,
    pub mean_length: f64,
}

#[derive(Debug, Serialize)]
pub struct StepView {
    pub revealed: Vec<usize>,
    pub q_values: Vec<f32>,
    pub valid: Vec<bool>,
    pub action: usize,
    /// Feature index for a reveal, class for the final step.
    pub target: usize,
    pub classify: bool,
}

#[derive(Debug, Serialize)]
pub struct EpisodeTrace {
    pub index: usize,
    pub features: Vec<f32>,
    pub label: usize,
    pub predicted: usize,
    pub steps: Vec<StepView>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub n_test: usize,
    pub accuracy: f64,
    pub mean_length: f64,
    pub histogram: Vec<HistogramBin>,
    /// Fraction of test episodes revealing each feature.
    pub feature_frequency: Vec<f64>,
    pub informative_indices: Vec<usize>,
    pub categories: Vec<CategoryUsage>,
    pub learning_score: f64,
}

pub struct Session {
    trainer: Trainer,
    train: Dataset,
    test: Dataset,
    categories: CategoryMap,
    informative: Vec<usize>,
}

impl Session {
    pub fn new(opts: &SessionOptions) -> seqsel::Result<Self> {
        let spec = SynthSpec {
            n_features: opts.n_features,
            n_classes: 2,
            informative_indices: opts.informative_indices.clone(),
            rule: opts.rule,
            n_samples: opts.n_samples,
            noise_std: opts.noise_std,
        };
        let data = synth_generate(&spec, opts.seed)?;
        let (train_raw, test_raw) = split(&data, 0.2, opts.seed, true)?;
        let stats = zscore_fit(&train_raw)?;
        let cfg = TrainConfig {
            episodes: opts.episodes,
            lambda: opts.lambda,
            seed: opts.seed,
            warmup_transitions: 500,
            ..TrainConfig::default()
        };
        Ok(Self {
            trainer: Trainer::new(opts.n_features, 2, cfg)?,
            train: zscore_apply(&train_raw, &stats)?,
            test: zscore_apply(&test_raw, &stats)?,
            categories: CategoryMap::equal_blocks(opts.n_features, opts.categories)?,
            informative: opts.informative_indices.clone(),
        })
    }

    pub fn n_test(&self) -> usize {
        self.test.n_samples()
    }

    /// Run up to `episodes` more training episodes, stopping at the budget.
    pub fn train(&mut self, episodes: u32) -> seqsel::Result<Progress> {
        let total = self.trainer.config().episodes;
        let mut log = SelectionLog::default();
        for _ in 0..episodes {
            if self.trainer.episodes_done() >= total {
                break;
            }
            log.episodes.push(self.trainer.run_episode(&self.train)?);
        }
        Ok(Progress {
            episodes_done: self.trainer.episodes_done(),
            episodes_total: total,
            epsilon: self.trainer.epsilon(),
            accuracy: if log.is_empty() { 0.0 } else { log.accuracy() },
            mean_length: if log.is_empty() { 0.0 } else { log.mean_length() },
        })
    }

    /// Greedy walk through test sample `index`.
    pub fn episode(&self, index: usize) -> seqsel::Result<EpisodeTrace> {
        if index >= self.test.n_samples() {
            return Err(seqsel::Error::DimensionMismatch {
                expected: self.test.n_samples(),
                got: index,
            });
        }
        let env = self.trainer.env();
        let net = self.trainer.online();
        let x = self.test.sample(index);
        let label = self.test.labels()[index];
        let mut state = env.reset(x)?;
        let mut steps = Vec::new();
        loop {
            let q_values = net.q_values(&state.network_input())?;
            let mut valid = vec![false; env.n_actions()];
            for a in env.valid_actions(&state) {
                valid[a.0] = true;
            }
            let action = greedy_action(net, env, &state)?;
            let (target, classify) = match env.decode(action)? {
                Action::Reveal(i) => (i, false),
                Action::Classify(c) => (c, true),
            };
            steps.push(StepView {
                revealed: state.revealed().to_vec(),
                q_values,
                valid,
                action: action.0,
                target,
                classify,
            });
            match env.step(&state, action, label)?.next_state {
                Some(next) => state = next,
                None => break,
            }
        }
        Ok(EpisodeTrace {
            index,
            features: x.to_vec(),
            label,
            predicted: steps.last().map(|s| s.target).unwrap_or_default(),
            steps,
        })
    }

    /// Greedy evaluation on the whole test split.
    pub fn report(&self) -> seqsel::Result<Report> {
        let n = self.test.n_features();
        let (log, _) = evaluate(self.trainer.online(), &self.test, self.trainer.env().max_steps)?;
        let mut counts = vec![0usize; n];
        for e in &log.episodes {
            for &f in &e.features {
                counts[f] += 1;
            }
        }
        let lengths = log.lengths();
        // a policy that never reveals anything has no usage to summarize
        let categories = if lengths.iter().any(|&l| l > 0) {
            intel::preference_ratios(&log, &self.categories, n)?
        } else {
            Vec::new()
        };
        Ok(Report {
            n_test: log.len(),
            accuracy: log.accuracy(),
            mean_length: log.mean_length(),
            histogram: histogram(&lengths),
            feature_frequency: counts.iter().map(|&c| c as f64 / log.len() as f64).collect(),
            informative_indices: self.informative.clone(),
            learning_score: if categories.is_empty() { 0.0 } else { intel::learning_score(&categories, 0.2) },
            categories,
        })
    }
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(js_err)
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    /// `options` is a JSON object; missing keys take their defaults.
    #[wasm_bindgen(constructor)]
    pub fn new(options: &str) -> Result<Demo, JsError> {
        let opts: SessionOptions = serde_json::from_str(options).map_err(js_err)?;
        Session::new(&opts).map(Demo).map_err(js_err)
    }

    #[wasm_bindgen(js_name = testSize)]
    pub fn test_size(&self) -> usize {
        self.0.n_test()
    }

    pub fn train(&mut self, episodes: u32) -> Result<String, JsError> {
        to_json(&self.0.train(episodes).map_err(js_err)?)
    }

    pub fn episode(&self, index: usize) -> Result<String, JsError> {
        to_json(&self.0.episode(index).map_err(js_err)?)
    }

    pub fn report(&self) -> Result<String, JsError> {
        to_json(&self.0.report().map_err(js_err)?)
    }
}
