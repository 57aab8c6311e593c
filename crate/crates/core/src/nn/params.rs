//! Named trainable parameters and the Adam optimizer.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::Tape;
use super::{NnError, Scalar};

/// Stable handle to a parameter within one [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

pub(crate) struct ParamEntry<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<S>,
    pub trainable: bool,
}

/// Owns parameter values between training steps. Initialization order is
/// part of the model definition, so names map deterministically to ids.
pub struct ParamStore<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
    by_name: HashMap<String, ParamId>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new(seed: u64) -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub(crate) fn entry(&self, id: ParamId) -> &ParamEntry<S> {
        &self.entries[id.0]
    }

    fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<S>) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape,
            values,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    /// Xavier-uniform weight matrix of shape `(fan_in, fan_out)`.
    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let values = (0..fan_in * fan_out)
            .map(|_| S::from_f64(self.rng.gen_range(-limit..limit)))
            .collect();
        self.insert(name, vec![fan_in, fan_out], values)
    }

    /// Zero-initialized bias vector.
    pub fn zeros(&mut self, name: &str, len: usize) -> ParamId {
        self.insert(name, vec![len], vec![S::zero(); len])
    }

    /// Vector with every entry set to `v`; used to force gate biases in
    /// tests and ablations.
    pub fn filled(&mut self, name: &str, len: usize, v: f64) -> ParamId {
        self.insert(name, vec![len], vec![S::from_f64(v); len])
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn values(&self, id: ParamId) -> &[S] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.entries[id.0].values
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn iter_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Names with their ids, in definition order.
    pub fn iter_named(&self) -> impl Iterator<Item = (&str, ParamId)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.as_str(), ParamId(i)))
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one slot per parameter tensor.
pub struct AdamState<S> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        Self {
            m: store
                .entries
                .iter()
                .map(|e| vec![S::zero(); e.values.len()])
                .collect(),
            v: store
                .entries
                .iter()
                .map(|e| vec![S::zero(); e.values.len()])
                .collect(),
            step: 0,
        }
    }

    /// Applies one Adam update with bias correction from the gradients
    /// recorded on `tape` (after a backward pass).
    pub fn step(&mut self, store: &mut ParamStore<S>, tape: &Tape<S>, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let one_m_b1 = S::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = S::from_f64(1.0 - cfg.beta2);
        let corr1 = S::from_f64(1.0 / (1.0 - cfg.beta1.powf(t)));
        let corr2 = S::from_f64(1.0 / (1.0 - cfg.beta2.powf(t)));
        let lr = S::from_f64(cfg.lr);
        let eps = S::from_f64(cfg.epsilon);

        let mut grads: Vec<(ParamId, &[S])> = tape.param_grads().collect();
        grads.sort_by_key(|(id, _)| *id);
        for (id, grad) in grads {
            if !store.entries[id.0].trainable {
                continue;
            }
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            let values = &mut store.entries[id.0].values;
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = b1 * m[k] + one_m_b1 * g;
                v[k] = b2 * v[k] + one_m_b2 * g * g;
                let m_hat = m[k] * corr1;
                let v_hat = v[k] * corr2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
