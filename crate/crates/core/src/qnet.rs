//! Dueling (and flat) Q-network with hand-written backpropagation.
//!
//! Three `Linear -> PReLU` layers of width [`HIDDEN`] feed either a dueling
//! head, `Q = V + (A - mean(A))`, or a single linear output. The network is
//! generic over the scalar type so the gradient oracle can run in `f64`
//! while training runs in `f32`.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::ActionId;

pub const HIDDEN: usize = 128;
pub const PRELU_INIT: f64 = 0.25;

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Dueling double DQN.
    #[default]
    D3qn,
    /// Flat double DQN baseline.
    Ddqn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `(out, in)`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    fn fan_in(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Dueling { value: Linear<T>, advantage: Linear<T> },
    Flat { output: Linear<T> },
}

/// Name and shape of one parameter tensor, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters. The same type doubles as the gradient and
/// optimizer-moment container.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet<T> {
    arch: Arch,
    n_features: usize,
    n_classes: usize,
    hidden: [Linear<T>; 3],
    prelu: [Array1<T>; 3],
    head: Head<T>,
}

impl<T: Scalar> QNet<T> {
    /// All-zero parameters of the right shapes.
    pub fn zeros(n_features: usize, n_classes: usize, arch: Arch) -> Self {
        let actions = n_features + n_classes;
        let head = match arch {
            Arch::D3qn => Head::Dueling {
                value: Linear::zeros(HIDDEN, 1),
                advantage: Linear::zeros(HIDDEN, actions),
            },
            Arch::Ddqn => Head::Flat {
                output: Linear::zeros(HIDDEN, actions),
            },
        };
        Self {
            arch,
            n_features,
            n_classes,
            hidden: [
                Linear::zeros(2 * n_features, HIDDEN),
                Linear::zeros(HIDDEN, HIDDEN),
                Linear::zeros(HIDDEN, HIDDEN),
            ],
            prelu: [Array1::zeros(HIDDEN), Array1::zeros(HIDDEN), Array1::zeros(HIDDEN)],
            head,
        }
    }

    /// Weights uniform on `±sqrt(6 / fan_in)`, zero biases, PReLU slopes 0.25.
    pub fn init(n_features: usize, n_classes: usize, arch: Arch, seed: u64) -> Result<Self> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::InvalidConfig("n and k must be at least 1".into()));
        }
        let mut net = Self::zeros(n_features, n_classes, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |layer: &mut Linear<T>| {
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
        };
        for layer in &mut net.hidden {
            fill(layer);
        }
        match &mut net.head {
            Head::Dueling { value, advantage } => {
                fill(value);
                fill(advantage);
            }
            Head::Flat { output } => fill(output),
        }
        for slope in &mut net.prelu {
            slope.fill(T::of(PRELU_INIT));
        }
        Ok(net)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn input_dim(&self) -> usize {
        2 * self.n_features
    }

    pub fn n_actions(&self) -> usize {
        self.n_features + self.n_classes
    }

    pub fn head(&self) -> &Head<T> {
        &self.head
    }

    pub fn hidden(&self) -> &[Linear<T>; 3] {
        &self.hidden
    }

    pub fn prelu(&self) -> &[Array1<T>; 3] {
        &self.prelu
    }

    pub fn same_layout(&self, other: &QNet<T>) -> bool {
        self.arch == other.arch
            && self.n_features == other.n_features
            && self.n_classes == other.n_classes
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        for (l, (layer, slope)) in self.hidden.iter().zip(&self.prelu).enumerate() {
            let p = format!("hidden{}", l + 1);
            specs.push(TensorSpec { name: format!("{p}.weight"), shape: layer.weight.shape().to_vec() });
            specs.push(TensorSpec { name: format!("{p}.bias"), shape: layer.bias.shape().to_vec() });
            specs.push(TensorSpec { name: format!("{p}.prelu"), shape: slope.shape().to_vec() });
        }
        let mut linear = |p: &str, l: &Linear<T>| {
            specs.push(TensorSpec { name: format!("{p}.weight"), shape: l.weight.shape().to_vec() });
            specs.push(TensorSpec { name: format!("{p}.bias"), shape: l.bias.shape().to_vec() });
        };
        match &self.head {
            Head::Dueling { value, advantage } => {
                linear("value", value);
                linear("advantage", advantage);
            }
            Head::Flat { output } => linear("output", output),
        }
        specs
    }

    /// Flat views of every parameter tensor, in [`Self::tensor_specs`] order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(13);
        for (layer, slope) in self.hidden.iter().zip(&self.prelu) {
            out.push(layer.weight.as_slice().expect("standard layout"));
            out.push(layer.bias.as_slice().expect("standard layout"));
            out.push(slope.as_slice().expect("standard layout"));
        }
        let heads: Vec<&Linear<T>> = match &self.head {
            Head::Dueling { value, advantage } => vec![value, advantage],
            Head::Flat { output } => vec![output],
        };
        for l in heads {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(13);
        for (layer, slope) in self.hidden.iter_mut().zip(self.prelu.iter_mut()) {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
            out.push(slope.as_slice_mut().expect("standard layout"));
        }
        match &mut self.head {
            Head::Dueling { value, advantage } => {
                out.push(value.weight.as_slice_mut().expect("standard layout"));
                out.push(value.bias.as_slice_mut().expect("standard layout"));
                out.push(advantage.weight.as_slice_mut().expect("standard layout"));
                out.push(advantage.bias.as_slice_mut().expect("standard layout"));
            }
            Head::Flat { output } => {
                out.push(output.weight.as_slice_mut().expect("standard layout"));
                out.push(output.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// Same architecture, same values, different scalar type.
    pub fn cast<U: Scalar>(&self) -> QNet<U> {
        let mut out = QNet::<U>::zeros(self.n_features, self.n_classes, self.arch);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = U::of(s.to_f64().expect("finite"));
            }
        }
        out
    }

    /// Apply `f(self_value, other_value)` to every scalar pair.
    pub fn zip_apply(&mut self, other: &QNet<T>, mut f: impl FnMut(&mut T, T)) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::ArchMismatch);
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                f(d, s);
            }
        }
        Ok(())
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(&mut f);
        }
    }

    fn check_input(&self, states: &ArrayView2<T>) -> Result<()> {
        if states.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: states.ncols(),
            });
        }
        Ok(())
    }

    /// Q-values for a batch of states, one row per state.
    pub fn forward(&self, states: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&states)?;
        Ok(self.forward_cached(&states).q)
    }

    /// Q-values for a single state.
    pub fn q_values(&self, state: &[T]) -> Result<Vec<T>> {
        let view = ArrayView2::from_shape((1, state.len()), state).expect("contiguous slice");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    /// State value `V(s)` for the dueling head; `None` for the flat head.
    pub fn state_values(&self, states: ArrayView2<T>) -> Result<Option<Array1<T>>> {
        self.check_input(&states)?;
        let cache = self.forward_cached(&states);
        Ok(cache.value.map(|v| v.column(0).to_owned()))
    }

    fn forward_cached(&self, states: &ArrayView2<T>) -> Cache<T> {
        let mut pre: Vec<Array2<T>> = Vec::with_capacity(3);
        let mut post: Vec<Array2<T>> = Vec::with_capacity(3);
        for (l, (layer, slope)) in self.hidden.iter().zip(&self.prelu).enumerate() {
            let z = match l {
                0 => layer.forward(states),
                _ => layer.forward(&post[l - 1].view()),
            };
            let mut h = z.clone();
            Zip::from(&mut h).and_broadcast(slope).for_each(|v, &a| {
                if *v < T::zero() {
                    *v *= a;
                }
            });
            pre.push(z);
            post.push(h);
        }
        let h3 = post[2].view();
        let (q, value, advantage) = match &self.head {
            Head::Dueling { value, advantage } => {
                let v = value.forward(&h3);
                let a = advantage.forward(&h3);
                let mean = a.mean_axis(Axis(1)).expect("at least one action");
                let mut q = a.clone();
                Zip::from(q.rows_mut())
                    .and(&mean)
                    .and(v.column(0))
                    .for_each(|mut row, &m, &vs| row.mapv_inplace(|x| vs + x - m));
                (q, Some(v), Some(a))
            }
            Head::Flat { output } => (output.forward(&h3), None, None),
        };
        let to_array = |v: Vec<Array2<T>>| -> [Array2<T>; 3] {
            v.try_into().unwrap_or_else(|_| unreachable!("three hidden layers"))
        };
        Cache {
            pre: to_array(pre),
            post: to_array(post),
            value,
            advantage,
            q,
        }
    }

    /// Smallest |pre-activation| over all hidden units and rows. Finite
    /// differences are only meaningful away from the PReLU kink.
    pub fn min_abs_preactivation(&self, states: ArrayView2<T>) -> Result<f64> {
        self.check_input(&states)?;
        let cache = self.forward_cached(&states);
        Ok(cache
            .pre
            .iter()
            .flat_map(|z| z.iter())
            .map(|v| v.abs().to_f64().unwrap())
            .fold(f64::INFINITY, f64::min))
    }

    fn check_batch(&self, states: &ArrayView2<T>, actions: &[ActionId], targets: &[T]) -> Result<()> {
        self.check_input(states)?;
        if actions.len() != states.nrows() || targets.len() != states.nrows() {
            return Err(Error::DimensionMismatch {
                expected: states.nrows(),
                got: actions.len().min(targets.len()),
            });
        }
        if let Some(a) = actions.iter().find(|a| a.0 >= self.n_actions()) {
            return Err(Error::InvalidAction {
                action: a.0,
                reason: "index outside the action space",
            });
        }
        Ok(())
    }

    /// Mean squared TD error `(1/B) Σ (Q(s_i, a_i) - y_i)^2`, accumulated in f64.
    pub fn td_loss(&self, states: ArrayView2<T>, actions: &[ActionId], targets: &[T]) -> Result<f64> {
        self.check_batch(&states, actions, targets)?;
        let q = self.forward_cached(&states).q;
        Ok(mse(&q, actions, targets))
    }

    /// TD loss and its exact gradient with respect to every parameter.
    pub fn td_loss_and_grads(
        &self,
        states: ArrayView2<T>,
        actions: &[ActionId],
        targets: &[T],
    ) -> Result<(f64, QNet<T>)> {
        self.check_batch(&states, actions, targets)?;
        let batch = states.nrows();
        let cache = self.forward_cached(&states);
        let loss = mse(&cache.q, actions, targets);
        let mut grads = QNet::<T>::zeros(self.n_features, self.n_classes, self.arch);
        if batch == 0 {
            return Ok((loss, grads));
        }

        // dL/dQ(s_i, a_i)
        let scale = T::of(2.0 / batch as f64);
        let dq: Vec<T> = (0..batch)
            .map(|i| scale * (cache.q[[i, actions[i].0]] - targets[i]))
            .collect();

        let h3 = &cache.post[2];
        let n_actions = self.n_actions();
        let mut dh = match (&self.head, &mut grads.head) {
            (Head::Dueling { value, advantage }, Head::Dueling { value: gv, advantage: ga }) => {
                let inv = T::of(1.0 / n_actions as f64);
                let mut d_adv = Array2::<T>::zeros((batch, n_actions));
                let mut d_val = Array2::<T>::zeros((batch, 1));
                for i in 0..batch {
                    let g = dq[i];
                    d_adv.row_mut(i).fill(-g * inv);
                    d_adv[[i, actions[i].0]] += g;
                    d_val[[i, 0]] = g;
                }
                ga.weight = d_adv.t().dot(h3);
                ga.bias = d_adv.sum_axis(Axis(0));
                gv.weight = d_val.t().dot(h3);
                gv.bias = d_val.sum_axis(Axis(0));
                d_adv.dot(&advantage.weight) + d_val.dot(&value.weight)
            }
            (Head::Flat { output }, Head::Flat { output: go }) => {
                let mut d_out = Array2::<T>::zeros((batch, n_actions));
                for i in 0..batch {
                    d_out[[i, actions[i].0]] = dq[i];
                }
                go.weight = d_out.t().dot(h3);
                go.bias = d_out.sum_axis(Axis(0));
                d_out.dot(&output.weight)
            }
            _ => unreachable!("gradient container built from the same arch"),
        };

        for l in (0..3).rev() {
            let z = &cache.pre[l];
            let slope = &self.prelu[l];
            let mut d_slope = Array1::<T>::zeros(HIDDEN);
            // dh becomes dz in place
            Zip::from(dh.rows_mut()).and(z.rows()).for_each(|mut drow, zrow| {
                Zip::from(&mut drow)
                    .and(&zrow)
                    .and(slope)
                    .and(&mut d_slope)
                    .for_each(|d, &zv, &a, ds| {
                        if zv < T::zero() {
                            *ds += *d * zv;
                            *d *= a;
                        }
                    });
            });
            let input = match l {
                0 => states.view(),
                _ => cache.post[l - 1].view(),
            };
            grads.hidden[l].weight = dh.t().dot(&input);
            grads.hidden[l].bias = dh.sum_axis(Axis(0));
            grads.prelu[l] = d_slope;
            if l > 0 {
                dh = dh.dot(&self.hidden[l].weight);
            }
        }
        Ok((loss, grads))
    }
}

struct Cache<T> {
    pre: [Array2<T>; 3],
    post: [Array2<T>; 3],
    value: Option<Array2<T>>,
    #[allow(dead_code)]
    advantage: Option<Array2<T>>,
    q: Array2<T>,
}

fn mse<T: Scalar>(q: &Array2<T>, actions: &[ActionId], targets: &[T]) -> f64 {
    if actions.is_empty() {
        return 0.0;
    }
    let sum: f64 = actions
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (a, &y))| {
            let d = (q[[i, a.0]] - y).to_f64().unwrap();
            d * d
        })
        .sum();
    sum / actions.len() as f64
}

/// Central-difference gradient of the TD loss for every parameter.
pub fn finite_difference_grad<T: Scalar>(
    params: &QNet<T>,
    states: ArrayView2<T>,
    actions: &[ActionId],
    targets: &[T],
    h: f64,
) -> Result<QNet<T>> {
    let coords: Vec<(usize, usize)> = params
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(t, data)| (0..data.len()).map(move |e| (t, e)))
        .collect();
    let values = finite_difference_at(params, states, actions, targets, h, &coords)?;
    let mut grads = QNet::<T>::zeros(params.n_features, params.n_classes, params.arch);
    {
        let mut tensors = grads.tensors_mut();
        for (&(t, e), v) in coords.iter().zip(values) {
            tensors[t][e] = T::of(v);
        }
    }
    Ok(grads)
}

/// Central differences at selected `(tensor, element)` coordinates.
pub fn finite_difference_at<T: Scalar>(
    params: &QNet<T>,
    states: ArrayView2<T>,
    actions: &[ActionId],
    targets: &[T],
    h: f64,
    coords: &[(usize, usize)],
) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    params.check_batch(&states, actions, targets)?;
    let mut work = params.clone();
    let step = T::of(h);
    let mut out = Vec::with_capacity(coords.len());
    for &(t, e) in coords {
        let original = work.tensors()[t][e];
        work.tensors_mut()[t][e] = original + step;
        let plus = work.td_loss(states, actions, targets)?;
        work.tensors_mut()[t][e] = original - step;
        let minus = work.td_loss(states, actions, targets)?;
        work.tensors_mut()[t][e] = original;
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Global L2 norm over every scalar.
pub fn global_norm<T: Scalar>(grads: &QNet<T>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| {
            let v = v.to_f64().unwrap();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescale `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut QNet<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = T::of(max_norm / norm);
        grads.for_each_mut(|g| *g *= scale);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adam optimizer state: moments shaped like the parameters, step counter,
/// current learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: QNet<T>,
    pub v: QNet<T>,
    pub t: u64,
    pub lr: f64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &QNet<T>, config: AdamConfig, lr: f64) -> Self {
        let zeros = QNet::<T>::zeros(params.n_features, params.n_classes, params.arch);
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }

    pub fn step(&mut self, params: &mut QNet<T>, grads: &QNet<T>) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::ArchMismatch);
        }
        self.t += 1;
        let c = self.config;
        let t = self.t.min(i32::MAX as u64) as i32;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                let grad = g[i] + wd * p[i];
                m[i] = b1 * m[i] + (one - b1) * grad;
                v[i] = b2 * v[i] + (one - b2) * grad * grad;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `max(min, initial * factor^floor(epoch / every))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every: u64,
    pub min: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            factor: 0.7,
            every: 3000,
            min: 3e-8,
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let decays = (epoch / self.every.max(1)).min(i32::MAX as u64) as i32;
        (self.initial * self.factor.powi(decays)).max(self.min)
    }
}

/// Learning rate at `epoch` under the default schedule.
pub fn lr_at(epoch: u64) -> f64 {
    LrSchedule::default().lr_at(epoch)
}
