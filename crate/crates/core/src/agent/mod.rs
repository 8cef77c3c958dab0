//! Learning and acting: exploration schedule, masked action selection,
//! double-Q targets, soft target updates, the training loop and greedy
//! evaluation.

mod replay;

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use replay::{ReplayBuffer, Transition};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::mdp::{argmax, ActionId, EpisodeState, FeatureEnv};
use crate::qnet::{clip_global_norm, Adam, AdamConfig, Arch, LrSchedule, QNet, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: u64,
    pub lambda: f32,
    pub gamma: f64,
    pub tau: f64,
    pub eps_start: f64,
    pub eps_min: f64,
    /// Linear decay per episode. Defaults to reaching `eps_min` after 80% of
    /// the episodes.
    pub eps_decay: Option<f64>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub updates_per_episode: usize,
    /// Feature budget per episode; defaults to every feature.
    pub max_steps: Option<usize>,
    pub arch: Arch,
    pub seed: u64,
    pub warmup_transitions: usize,
    pub max_grad_norm: f64,
    pub lr_schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Episodes between trace records; defaults to `episodes / 50`.
    pub eval_interval: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 10_000,
            lambda: 1e-4,
            gamma: 0.99,
            tau: 0.01,
            eps_start: 0.70,
            eps_min: 0.03,
            eps_decay: None,
            batch_size: 64,
            buffer_capacity: 100_000,
            updates_per_episode: 1,
            max_steps: None,
            arch: Arch::D3qn,
            seed: 0,
            warmup_transitions: 1000,
            max_grad_norm: 1.0,
            lr_schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            eval_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_min) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if self.eps_min > self.eps_start {
            return bad("eps_min must not exceed eps_start");
        }
        if matches!(self.eps_decay, Some(d) if !(d >= 0.0 && d.is_finite())) {
            return bad("eps_decay must be non-negative");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be positive");
        }
        if !(self.lr_schedule.initial > 0.0 && self.lr_schedule.min >= 0.0) {
            return bad("learning rates must be positive");
        }
        if self.eval_interval == Some(0) {
            return bad("eval_interval must be positive");
        }
        Ok(())
    }

    /// Per-episode epsilon decrement.
    pub fn eps_decay_rate(&self) -> f64 {
        self.eps_decay.unwrap_or_else(|| {
            if self.episodes == 0 {
                0.0
            } else {
                (self.eps_start - self.eps_min) / (0.8 * self.episodes as f64)
            }
        })
    }

    pub fn max_steps_for(&self, n_features: usize) -> usize {
        self.max_steps.unwrap_or(n_features).min(n_features)
    }

    pub fn trace_interval(&self) -> u64 {
        self.eval_interval.unwrap_or((self.episodes / 50).max(1))
    }
}

/// `max(eps_min, eps_start - alpha * t)`
pub fn epsilon_at(t: u64, cfg: &TrainConfig) -> f64 {
    (cfg.eps_start - cfg.eps_decay_rate() * t as f64).max(cfg.eps_min)
}

/// One episode of the selection log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub true_label: usize,
    pub predicted_label: usize,
    /// Revealed feature indices; position `i` is step `i + 1`.
    pub features: Vec<usize>,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn correct(&self) -> bool {
        self.true_label == self.predicted_label
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionLog {
    pub episodes: Vec<EpisodeRecord>,
}

impl SelectionLog {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.episodes.iter().map(EpisodeRecord::len).collect()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.episodes.iter().map(|e| e.predicted_label).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.episodes.iter().map(|e| e.true_label).collect()
    }

    pub fn accuracy(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().filter(|e| e.correct()).count() as f64 / self.episodes.len() as f64
    }

    pub fn mean_length(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.len()).sum::<usize>() as f64 / self.episodes.len() as f64
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for ep in &self.episodes {
            serde_json::to_writer(&mut out, ep)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut episodes = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                episodes.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { episodes })
    }
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub epsilon: f64,
    pub lr: f64,
    pub mean_episode_length: f64,
    pub accuracy: f64,
}

/// Epsilon-greedy over the currently valid actions. Greedy ties go to the
/// lowest action index.
pub fn select_action<R: Rng + ?Sized>(
    net: &QNet<f32>,
    env: &FeatureEnv,
    state: &EpisodeState,
    epsilon: f64,
    rng: &mut R,
) -> Result<ActionId> {
    if rng.random::<f64>() < epsilon {
        let valid = env.valid_actions(state);
        return Ok(valid[rng.random_range(0..valid.len())]);
    }
    greedy_action(net, env, state)
}

pub fn greedy_action(net: &QNet<f32>, env: &FeatureEnv, state: &EpisodeState) -> Result<ActionId> {
    let mut q = net.q_values(&state.network_input())?;
    env.apply_penalty(&mut q, state.mask(), state.n_revealed());
    Ok(argmax(&q))
}

/// Double-Q regression targets: the online net picks `a*` at `s'` under the
/// validity mask, the target net scores it. Terminal transitions use `r`.
pub fn double_q_targets(
    batch: &[&Transition],
    online: &QNet<f32>,
    target: &QNet<f32>,
    gamma: f64,
    env: &FeatureEnv,
) -> Result<Vec<f32>> {
    if batch.is_empty() {
        return Err(Error::Insufficient("empty batch".into()));
    }
    let mut targets: Vec<f32> = batch.iter().map(|t| t.reward).collect();
    let open: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].done).collect();
    if open.is_empty() {
        return Ok(targets);
    }
    let width = online.input_dim();
    let mut next = Array2::<f32>::zeros((open.len(), width));
    for (row, &i) in open.iter().enumerate() {
        let s = &batch[i].next_state;
        if s.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                got: s.len(),
            });
        }
        next.row_mut(row).assign(&ndarray::ArrayView1::from(s.as_slice()));
    }
    let q_online = online.forward(next.view())?;
    let q_target = target.forward(next.view())?;
    for (row, &i) in open.iter().enumerate() {
        let q = q_online.row(row);
        let best = env.masked_argmax_from_input(q.as_slice().expect("row-major"), &batch[i].next_state);
        let bootstrap = q_target[[row, best.0]] as f64;
        targets[i] = (batch[i].reward as f64 + gamma * bootstrap) as f32;
    }
    Ok(targets)
}

/// `target <- tau * online + (1 - tau) * target`, evaluated in f64.
pub fn soft_update<T: Scalar>(target: &mut QNet<T>, online: &QNet<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("tau {tau} outside [0, 1]")));
    }
    target.zip_apply(online, |t, o| {
        let mixed = tau * o.to_f64().unwrap() + (1.0 - tau) * t.to_f64().unwrap();
        *t = T::of(mixed);
    })
}

/// Online/target networks, optimizer and replay memory for one training run.
pub struct Trainer {
    cfg: TrainConfig,
    env: FeatureEnv,
    online: QNet<f32>,
    target: QNet<f32>,
    optimizer: Adam<f32>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    episode: u64,
    updates: u64,
}

impl Trainer {
    pub fn new(n_features: usize, n_classes: usize, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let online = QNet::<f32>::init(n_features, n_classes, cfg.arch, cfg.seed)?;
        let target = online.clone();
        let optimizer = Adam::new(&online, cfg.adam, cfg.lr_schedule.lr_at(0));
        let env = FeatureEnv::new(n_features, n_classes, cfg.lambda)
            .with_max_steps(cfg.max_steps_for(n_features));
        // Separate stream from the one used for weight init.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5e1e_c7ed_0001);
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            env,
            online,
            target,
            optimizer,
            rng,
            episode: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn env(&self) -> &FeatureEnv {
        &self.env
    }

    pub fn online(&self) -> &QNet<f32> {
        &self.online
    }

    pub fn target(&self) -> &QNet<f32> {
        &self.target
    }

    pub fn optimizer(&self) -> &Adam<f32> {
        &self.optimizer
    }

    pub fn episodes_done(&self) -> u64 {
        self.episode
    }

    pub fn updates_done(&self) -> u64 {
        self.updates
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(self.episode, &self.cfg)
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.n_features() != self.env.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.env.n_features,
                got: data.n_features(),
            });
        }
        if data.n_classes() > self.env.n_classes {
            return Err(Error::DimensionMismatch {
                expected: self.env.n_classes,
                got: data.n_classes(),
            });
        }
        Ok(())
    }

    /// Roll out one episode on a uniformly drawn sample, then run the
    /// configured number of gradient updates.
    pub fn run_episode(&mut self, data: &Dataset) -> Result<EpisodeRecord> {
        self.check_data(data)?;
        let epsilon = self.epsilon();
        let index = self.rng.random_range(0..data.n_samples());
        let label = data.labels()[index];
        let mut state = self.env.reset(data.sample(index))?;
        let mut input = state.network_input();
        let predicted = loop {
            let action = select_action(&self.online, &self.env, &state, epsilon, &mut self.rng)?;
            let step = self.env.step(&state, action, label)?;
            match step.next_state {
                Some(next) => {
                    let next_input = next.network_input();
                    self.buffer.push(Transition {
                        state: std::mem::replace(&mut input, next_input.clone()),
                        action,
                        reward: step.reward,
                        next_state: next_input,
                        done: false,
                    });
                    state = next;
                }
                None => {
                    self.buffer.push(Transition {
                        state: std::mem::take(&mut input),
                        action,
                        reward: step.reward,
                        next_state: Vec::new(),
                        done: true,
                    });
                    break step.predicted_class.expect("terminal step has a prediction");
                }
            }
        };
        if self.buffer.len() >= self.cfg.warmup_transitions.max(1) {
            for _ in 0..self.cfg.updates_per_episode {
                self.update()?;
            }
        }
        self.episode += 1;
        Ok(EpisodeRecord {
            true_label: label,
            predicted_label: predicted,
            features: state.revealed().to_vec(),
        })
    }

    fn update(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.rng);
        let targets = double_q_targets(&batch, &self.online, &self.target, self.cfg.gamma, &self.env)?;
        let width = self.online.input_dim();
        let mut states = Array2::<f32>::zeros((batch.len(), width));
        for (mut row, t) in states.rows_mut().into_iter().zip(&batch) {
            row.assign(&ndarray::ArrayView1::from(t.state.as_slice()));
        }
        let actions: Vec<ActionId> = batch.iter().map(|t| t.action).collect();
        let (loss, mut grads) = self.online.td_loss_and_grads(states.view(), &actions, &targets)?;
        clip_global_norm(&mut grads, self.cfg.max_grad_norm);
        self.optimizer.lr = self.cfg.lr_schedule.lr_at(self.episode);
        self.optimizer.step(&mut self.online, &grads)?;
        soft_update(&mut self.target, &self.online, self.cfg.tau)?;
        self.updates += 1;
        Ok(loss)
    }

    pub fn into_output(self, log: SelectionLog, trace: Vec<TraceRecord>) -> TrainOutput {
        TrainOutput {
            online: self.online,
            target: self.target,
            optimizer: self.optimizer,
            log,
            trace,
        }
    }
}

pub struct TrainOutput {
    pub online: QNet<f32>,
    pub target: QNet<f32>,
    pub optimizer: Adam<f32>,
    /// Every training episode, in order.
    pub log: SelectionLog,
    pub trace: Vec<TraceRecord>,
}

/// Train for `cfg.episodes` episodes. With a validation set, each trace
/// record is a greedy evaluation on it; otherwise it summarizes the training
/// episodes since the previous record.
pub fn train(data: &Dataset, cfg: &TrainConfig, validation: Option<&Dataset>) -> Result<TrainOutput> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(data.n_features(), data.n_classes(), cfg.clone())?;
    let interval = cfg.trace_interval();
    let mut log = SelectionLog::default();
    let mut trace = Vec::new();
    let mut since = 0usize;
    for e in 0..cfg.episodes {
        let epsilon = trainer.epsilon();
        log.episodes.push(trainer.run_episode(data)?);
        since += 1;
        if (e + 1) % interval == 0 || e + 1 == cfg.episodes {
            let (accuracy, mean_episode_length) = match validation {
                Some(val) => {
                    let (val_log, _) = evaluate(trainer.online(), val, trainer.env().max_steps)?;
                    (val_log.accuracy(), val_log.mean_length())
                }
                None => {
                    let recent = SelectionLog {
                        episodes: log.episodes[log.len() - since..].to_vec(),
                    };
                    (recent.accuracy(), recent.mean_length())
                }
            };
            trace.push(TraceRecord {
                episode: e + 1,
                epsilon,
                lr: cfg.lr_schedule.lr_at(e),
                mean_episode_length,
                accuracy,
            });
            since = 0;
        }
    }
    Ok(trainer.into_output(log, trace))
}

/// Greedy (epsilon = 0) rollout of every sample. All samples advance in
/// lockstep so each step is one batched forward pass.
pub fn evaluate(net: &QNet<f32>, data: &Dataset, max_steps: usize) -> Result<(SelectionLog, Vec<usize>)> {
    if data.n_features() != net.n_features() {
        return Err(Error::DimensionMismatch {
            expected: net.n_features(),
            got: data.n_features(),
        });
    }
    if data.n_classes() > net.n_classes() {
        return Err(Error::DimensionMismatch {
            expected: net.n_classes(),
            got: data.n_classes(),
        });
    }
    let env = FeatureEnv::new(net.n_features(), net.n_classes(), 0.0).with_max_steps(max_steps);
    let mut states: Vec<EpisodeState> = (0..data.n_samples())
        .map(|i| env.reset(data.sample(i)))
        .collect::<Result<_>>()?;
    let mut predicted: Vec<Option<usize>> = vec![None; data.n_samples()];
    let mut active: Vec<usize> = (0..data.n_samples()).collect();
    let width = net.input_dim();
    while !active.is_empty() {
        let mut inputs = Array2::<f32>::zeros((active.len(), width));
        for (mut row, &i) in inputs.rows_mut().into_iter().zip(&active) {
            states[i].write_input(row.as_slice_mut().expect("row-major"));
        }
        let q = net.forward(inputs.view())?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            let mut qs = q.row(row).to_vec();
            env.apply_penalty(&mut qs, states[i].mask(), states[i].n_revealed());
            let step = env.step(&states[i], argmax(&qs), data.labels()[i])?;
            match step.next_state {
                Some(next) => {
                    states[i] = next;
                    still.push(i);
                }
                None => predicted[i] = step.predicted_class,
            }
        }
        active = still;
    }
    let predictions: Vec<usize> = predicted.into_iter().map(|p| p.expect("every episode terminates")).collect();
    let log = SelectionLog {
        episodes: states
            .iter()
            .zip(&predictions)
            .zip(data.labels())
            .map(|((s, &p), &y)| EpisodeRecord {
                true_label: y,
                predicted_label: p,
                features: s.revealed().to_vec(),
            })
            .collect(),
    };
    Ok((log, predictions))
}

/// Rollouts of the uniform-random valid policy, one per sample. Used as the
/// no-learning baseline for the intelligence metrics.
pub fn random_rollout(data: &Dataset, n_classes: usize, max_steps: usize, seed: u64) -> Result<SelectionLog> {
    let env = FeatureEnv::new(data.n_features(), n_classes.max(data.n_classes()), 0.0).with_max_steps(max_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(data.n_samples());
    for i in 0..data.n_samples() {
        let label = data.labels()[i];
        let mut state = env.reset(data.sample(i))?;
        loop {
            let valid = env.valid_actions(&state);
            let action = valid[rng.random_range(0..valid.len())];
            let step = env.step(&state, action, label)?;
            match step.next_state {
                Some(next) => state = next,
                None => {
                    episodes.push(EpisodeRecord {
                        true_label: label,
                        predicted_label: step.predicted_class.expect("terminal"),
                        features: state.revealed().to_vec(),
                    });
                    break;
                }
            }
        }
    }
    Ok(SelectionLog { episodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, SynthRule, SynthSpec};
    use crate::qnet::Head;

    fn sign_data(n: usize, samples: usize, seed: u64) -> Dataset {
        synth_generate(
            &SynthSpec {
                n_features: n,
                n_classes: 2,
                informative_indices: vec![0],
                rule: SynthRule::Sign,
                n_samples: samples,
                noise_std: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig {
            eps_decay: Some(1e-4),
            ..TrainConfig::default()
        };
        assert_eq!(epsilon_at(0, &cfg), 0.70);
        assert!((epsilon_at(1000, &cfg) - 0.60).abs() < 1e-12);
        assert_eq!(epsilon_at(1_000_000, &cfg), 0.03);
        let default = TrainConfig::default();
        assert!((epsilon_at(8000, &default) - 0.03).abs() < 1e-12);
        assert!(epsilon_at(7999, &default) > 0.03);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { gamma: 1.5, ..Default::default() },
            TrainConfig { tau: -0.1, ..Default::default() },
            TrainConfig { eps_min: 0.9, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"episodes": 5, "arch": "ddqn"}"#).unwrap();
        assert_eq!(parsed.episodes, 5);
        assert_eq!(parsed.arch, Arch::Ddqn);
        assert_eq!(parsed.tau, 0.01);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epsiodes": 5}"#).is_err());
    }

    #[test]
    fn greedy_and_exploratory_selection() {
        let env = FeatureEnv::new(4, 2, 1e-4);
        let net = QNet::<f32>::init(4, 2, Arch::D3qn, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = env.reset(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        state = env.step(&state, ActionId(2), 0).unwrap().next_state.unwrap();

        let mut q = net.q_values(&state.network_input()).unwrap();
        env.apply_penalty(&mut q, state.mask(), 1);
        assert_eq!(select_action(&net, &env, &state, 0.0, &mut rng).unwrap(), argmax(&q));

        for _ in 0..500 {
            let a = select_action(&net, &env, &state, 1.0, &mut rng).unwrap();
            assert_ne!(a, ActionId(2));
        }

        let mut full = env.reset(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        for i in 0..4 {
            full = env.step(&full, ActionId(i), 0).unwrap().next_state.unwrap();
        }
        assert!(select_action(&net, &env, &full, 0.0, &mut rng).unwrap().0 >= 4);
    }

    fn transition(reward: f32, done: bool, next: Vec<f32>) -> Transition {
        Transition {
            state: vec![0.0; 4],
            action: ActionId(0),
            reward,
            next_state: next,
            done,
        }
    }

    /// Net whose Q-values equal the output bias regardless of input.
    fn constant_q(bias: &[f32]) -> QNet<f32> {
        let mut net = QNet::<f32>::zeros(2, bias.len() - 2, Arch::Ddqn);
        assert!(matches!(net.head(), Head::Flat { .. }));
        net.tensors_mut().into_iter().last().unwrap().copy_from_slice(bias);
        net
    }

    #[test]
    fn terminal_targets_use_reward_only() {
        let env = FeatureEnv::new(2, 2, 1e-4);
        let net = QNet::<f32>::init(2, 2, Arch::D3qn, 0).unwrap();
        let other = QNet::<f32>::init(2, 2, Arch::D3qn, 1).unwrap();
        let a = transition(0.0, true, vec![]);
        let b = transition(-1.0, true, vec![]);
        let batch = [&a, &b];
        assert_eq!(double_q_targets(&batch, &net, &other, 0.99, &env).unwrap(), vec![0.0, -1.0]);
        assert_eq!(double_q_targets(&batch, &other, &net, 0.5, &env).unwrap(), vec![0.0, -1.0]);
        assert!(double_q_targets(&[], &net, &other, 0.99, &env).is_err());
    }

    #[test]
    fn bootstrap_arithmetic() {
        let env = FeatureEnv::new(2, 2, 1e-4);
        // Online prefers action 1; target scores action 1 at 0.5.
        let online = constant_q(&[0.0, 3.0, 1.0, 2.0]);
        let target = constant_q(&[9.0, 0.5, 7.0, 7.0]);
        let t = transition(-0.0001, false, vec![0.0, 0.0, 0.0, 0.0]);
        let y = double_q_targets(&[&t], &online, &target, 0.99, &env).unwrap();
        assert!((y[0] - 0.4949).abs() < 1e-6, "{}", y[0]);

        // Feature 1 already revealed in s': online falls back to action 3.
        let t = transition(-0.0001, false, vec![0.0, 0.7, 0.0, 1.0]);
        let y = double_q_targets(&[&t], &online, &target, 0.99, &env).unwrap();
        assert!((y[0] - (-0.0001 + 0.99 * 7.0)).abs() < 1e-5);
    }

    #[test]
    fn soft_update_endpoints_and_mix() {
        let online = QNet::<f32>::init(3, 2, Arch::D3qn, 1).unwrap();
        let start = QNet::<f32>::init(3, 2, Arch::D3qn, 2).unwrap();
        let mut t = start.clone();
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        let mut t = start.clone();
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, start);

        let mut a = QNet::<f64>::zeros(1, 1, Arch::Ddqn);
        let mut b = QNet::<f64>::zeros(1, 1, Arch::Ddqn);
        a.for_each_mut(|v| *v = 1.0);
        b.for_each_mut(|v| *v = 2.0);
        soft_update(&mut a, &b, 0.01).unwrap();
        assert!(a.tensors().iter().all(|t| t.iter().all(|&v| (v - 1.01).abs() < 1e-12)));

        let mut flat = QNet::<f32>::init(3, 2, Arch::Ddqn, 1).unwrap();
        assert!(matches!(soft_update(&mut flat, &online, 0.5), Err(Error::ArchMismatch)));
        assert!(soft_update(&mut t, &online, 1.5).is_err());
    }

    #[test]
    fn zero_episodes_returns_initial_params() {
        let data = sign_data(4, 20, 0);
        let cfg = TrainConfig { episodes: 0, ..Default::default() };
        let out = train(&data, &cfg, None).unwrap();
        assert_eq!(out.online, QNet::<f32>::init(4, 2, Arch::D3qn, 0).unwrap());
        assert!(out.log.is_empty());
        assert!(out.trace.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let data = sign_data(5, 100, 1);
        let cfg = TrainConfig {
            episodes: 300,
            warmup_transitions: 50,
            batch_size: 16,
            seed: 42,
            ..Default::default()
        };
        let a = train(&data, &cfg, None).unwrap();
        let b = train(&data, &cfg, None).unwrap();
        assert_eq!(a.online, b.online);
        assert_eq!(a.log, b.log);
        assert_eq!(a.trace, b.trace);
        assert!(a.online != QNet::<f32>::init(5, 2, Arch::D3qn, 42).unwrap());
        assert_eq!(a.trace.len(), 50);
        assert_eq!(a.log.len(), 300);
        for ep in &a.log.episodes {
            let mut seen = ep.features.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), ep.features.len());
        }
    }

    #[test]
    fn train_rejects_bad_input() {
        let data = sign_data(4, 10, 0);
        let empty = data.select_rows(&[]);
        assert!(matches!(train(&empty, &TrainConfig::default(), None), Err(Error::EmptyDataset)));
        let cfg = TrainConfig { gamma: 2.0, ..Default::default() };
        assert!(train(&data, &cfg, None).is_err());
    }

    #[test]
    fn untrained_evaluation_terminates() {
        let data = sign_data(6, 50, 3);
        for seed in 0..5 {
            let net = QNet::<f32>::init(6, 2, Arch::D3qn, seed).unwrap();
            let (log, preds) = evaluate(&net, &data, 6).unwrap();
            assert_eq!(preds.len(), 50);
            assert_eq!(log.predictions(), preds);
            assert!(log.lengths().iter().all(|&l| l <= 6));
            let (capped, _) = evaluate(&net, &data, 2).unwrap();
            assert!(capped.lengths().iter().all(|&l| l <= 2));
        }
        let net = QNet::<f32>::init(5, 2, Arch::D3qn, 0).unwrap();
        assert!(evaluate(&net, &data, 5).is_err());
    }

    #[test]
    fn batched_evaluation_matches_sequential_rollout() {
        let data = sign_data(5, 30, 8);
        let net = QNet::<f32>::init(5, 2, Arch::Ddqn, 4).unwrap();
        let env = FeatureEnv::new(5, 2, 0.0);
        let (log, _) = evaluate(&net, &data, 5).unwrap();
        for i in 0..data.n_samples() {
            let mut state = env.reset(data.sample(i)).unwrap();
            let predicted = loop {
                let a = greedy_action(&net, &env, &state).unwrap();
                let step = env.step(&state, a, data.labels()[i]).unwrap();
                match step.next_state {
                    Some(next) => state = next,
                    None => break step.predicted_class.unwrap(),
                }
            };
            assert_eq!(log.episodes[i].features, state.revealed());
            assert_eq!(log.episodes[i].predicted_label, predicted);
        }
    }

    #[test]
    fn selection_log_jsonl_round_trip() {
        let log = SelectionLog {
            episodes: vec![
                EpisodeRecord { true_label: 1, predicted_label: 0, features: vec![3, 1] },
                EpisodeRecord { true_label: 0, predicted_label: 0, features: vec![] },
            ],
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        log.write_jsonl(f.path()).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"true_label":1,"predicted_label":0,"features":[3,1]}"#);
        assert_eq!(SelectionLog::read_jsonl(f.path()).unwrap(), log);
        assert_eq!(log.accuracy(), 0.5);
        assert_eq!(log.mean_length(), 1.0);
    }

    #[test]
    fn random_policy_never_repeats_features() {
        let data = sign_data(6, 200, 2);
        let log = random_rollout(&data, 2, 6, 9).unwrap();
        assert_eq!(log.len(), 200);
        for ep in &log.episodes {
            let mut f = ep.features.clone();
            f.sort_unstable();
            f.dedup();
            assert_eq!(f.len(), ep.features.len());
        }
    }
}
