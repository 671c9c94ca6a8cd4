use std::collections::BTreeMap;

use rand::Rng;

use crate::array::NumArray;
use crate::error::{dim_err, Error, Result};

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, NumArray>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: NumArray,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

/// Named trainable arrays plus their Adam moment accumulators.
///
/// Names are unique and a parameter's shape never changes after insertion.
/// Iteration order is lexicographic by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: NumArray) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Contract(format!("parameter `{name}` already exists")));
        }
        if !value.is_finite() {
            return Err(Error::Numeric {
                op: "ParamStore::insert",
                detail: format!("parameter `{name}` has non-finite values"),
            });
        }
        let n = value.len();
        self.slots.insert(
            name,
            Slot {
                value,
                m: vec![0.0; n],
                v: vec![0.0; n],
                steps: 0,
            },
        );
        Ok(())
    }

    /// Replaces a parameter's values; the shape must match.
    pub fn set(&mut self, name: &str, value: NumArray) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if slot.value.shape() != value.shape() {
            return Err(dim_err(
                "ParamStore::set",
                format!("`{name}` is {:?}, got {:?}", slot.value.shape(), value.shape()),
            ));
        }
        slot.value = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NumArray> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NumArray)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// Adds `prefix.weight` (`[inputs, outputs]`, Glorot-uniform) and
    /// `prefix.bias` (`[1, outputs]`, zeros).
    pub fn init_linear(&mut self, prefix: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Result<()> {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(format!("{prefix}.weight"), NumArray::matrix(inputs, outputs, w)?)?;
        self.insert(format!("{prefix}.bias"), NumArray::zeros(1, outputs))
    }

    /// One Adam update for every parameter present in `grads`.
    ///
    /// All gradients are validated before any parameter changes, so a
    /// non-finite gradient leaves the store untouched.
    pub fn adam_step(&mut self, grads: &GradMap, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if slot.value.len() != g.len() {
                return Err(dim_err(
                    "adam_step",
                    format!("gradient for `{name}` has {} values, parameter has {}", g.len(), slot.value.len()),
                ));
            }
            if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    name: name.clone(),
                    index,
                });
            }
        }
        for (name, g) in grads {
            let slot = self.slots.get_mut(name).expect("validated above");
            slot.steps += 1;
            let t = slot.steps as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let values = slot.value.data_mut();
            let moments = slot.m.iter_mut().zip(slot.v.iter_mut());
            for ((x, (m, v)), &gi) in values.iter_mut().zip(moments).zip(g.data()) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}
