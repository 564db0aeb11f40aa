//! SGD with momentum and a learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::diffcore::Network;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Half-cosine decay from the base rate to zero at the last step.
    Cosine,
    /// Multiply by `factor` at each milestone (in optimizer steps).
    Step { milestones: Vec<usize>, factor: f32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f32,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f32,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
}

fn default_momentum() -> f32 {
    0.9
}

fn default_weight_decay() -> f32 {
    5e-4
}

fn default_schedule() -> Schedule {
    Schedule::Cosine
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: default_momentum(),
            weight_decay: default_weight_decay(),
            schedule: default_schedule(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if let Schedule::Step { factor, .. } = &self.schedule {
            if !(*factor > 0.0 && *factor <= 1.0) {
                return Err(Error::Config(format!("step factor must be in (0,1], got {factor}")));
            }
        }
        Ok(())
    }

    /// Scheduled rate at `step` of `total_steps`.
    pub fn rate(&self, step: usize, total_steps: usize) -> f32 {
        match &self.schedule {
            Schedule::Cosine => {
                let progress = if total_steps == 0 {
                    0.0
                } else {
                    step.min(total_steps) as f64 / total_steps as f64
                };
                (self.lr as f64 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())) as f32
            }
            Schedule::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| step >= m).count();
                self.lr * factor.powi(passed as i32)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: OptimizerConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Vec::new(),
        })
    }

    /// One update `w ← w − rate·v`, `v ← μ·v + g + wd·w`; zeroes the gradients.
    /// Returns the rate used.
    pub fn step(&mut self, model: &mut Network, step_index: usize, total_steps: usize) -> f32 {
        let rate = self.config.rate(step_index, total_steps);
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        let pairs = model.params_and_grads();
        if self.velocity.len() != pairs.len() {
            self.velocity = pairs.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        for ((param, grad), vel) in pairs.into_iter().zip(&mut self.velocity) {
            for ((w, g), v) in param.data_mut().iter_mut().zip(grad.data_mut()).zip(vel.iter_mut()) {
                let d = *g + wd * *w;
                *v = mu * *v + d;
                *w -= rate * *v;
                *g = 0.0;
            }
        }
        rate
    }
}
