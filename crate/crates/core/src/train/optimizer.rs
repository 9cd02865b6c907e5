use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::model::Params;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// `θ ← θ − lr·g`.
    Sgd,
    /// Adadelta with decay `rho` and stabiliser `epsilon`, step scaled by `lr`.
    Adadelta,
    /// Adam with moment decays `beta1`, `beta2`, stabiliser `epsilon` and
    /// bias correction.
    Adam,
}

/// Optimisation and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Global gradient L2 norm above which the gradient is rescaled.
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adadelta,
            learning_rate: 1.0,
            clip_norm: 5.0,
            epochs: 16,
            batch_size: 4,
            rho: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("epsilon", self.epsilon),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrainError::Config { field, msg: format!("must be a positive number, got {v}") });
            }
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(TrainError::Config { field: "rho", msg: format!("must lie in [0, 1), got {}", self.rho) });
        }
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(TrainError::Config { field, msg: format!("must lie in [0, 1), got {v}") });
            }
        }
        if self.epochs == 0 {
            return Err(TrainError::Config { field: "epochs", msg: "must be at least 1".into() });
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config { field: "batch_size", msg: "must be at least 1".into() });
        }
        Ok(())
    }
}

const ACC_GRAD: &str = "opt.acc_grad.";
const ACC_DELTA: &str = "opt.acc_delta.";
const STEPS: &str = "opt.steps";

/// Optimizer state, stored in checkpoints under `opt.*` names.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: Params,
}

/// L2 norm over every gradient entry.
pub fn global_norm(grads: &Params) -> f64 {
    grads.values().flat_map(|t| t.data()).map(|v| v * v).sum::<f64>().sqrt()
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, state: Params::new() }
    }

    pub fn with_state(config: OptimizerConfig, state: Params) -> Self {
        let state = state.into_iter().filter(|(k, _)| k.starts_with("opt.")).collect();
        Optimizer { config, state }
    }

    pub fn state(&self) -> &Params {
        &self.state
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Clips `grads` to `clip_norm` and updates `params` in place. Returns the
    /// pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut Params, grads: &Params) -> f64 {
        let norm = global_norm(grads);
        let clip = if norm > self.config.clip_norm { self.config.clip_norm / norm } else { 1.0 };
        let cfg = &self.config;
        let t = self.state.get(STEPS).map_or(0.0, Tensor::item) + 1.0;
        self.state.insert(STEPS.into(), Tensor::scalar(t));
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= cfg.learning_rate * clip * gv;
                    }
                }
                OptimizerKind::Adadelta => {
                    let zeros = || Tensor::zeros(p.shape());
                    let gk = format!("{ACC_GRAD}{name}");
                    let dk = format!("{ACC_DELTA}{name}");
                    let mut eg = self.state.remove(&gk).unwrap_or_else(zeros);
                    let mut ed = self.state.remove(&dk).unwrap_or_else(zeros);
                    let acc = eg.data_mut().iter_mut().zip(ed.data_mut().iter_mut());
                    for ((w, &gv), (a, d)) in p.data_mut().iter_mut().zip(g.data()).zip(acc) {
                        let gv = gv * clip;
                        *a = cfg.rho * *a + (1.0 - cfg.rho) * gv * gv;
                        let delta = -((*d + cfg.epsilon).sqrt() / (*a + cfg.epsilon).sqrt()) * gv;
                        *d = cfg.rho * *d + (1.0 - cfg.rho) * delta * delta;
                        *w += cfg.learning_rate * delta;
                    }
                    self.state.insert(gk, eg);
                    self.state.insert(dk, ed);
                }
                OptimizerKind::Adam => {
                    let zeros = || Tensor::zeros(p.shape());
                    let mk = format!("{ACC_GRAD}{name}");
                    let vk = format!("{ACC_DELTA}{name}");
                    let mut m = self.state.remove(&mk).unwrap_or_else(zeros);
                    let mut v = self.state.remove(&vk).unwrap_or_else(zeros);
                    let c1 = 1.0 - cfg.beta1.powf(t);
                    let c2 = 1.0 - cfg.beta2.powf(t);
                    let acc = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
                    for ((w, &gv), (m, v)) in p.data_mut().iter_mut().zip(g.data()).zip(acc) {
                        let gv = gv * clip;
                        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gv;
                        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gv * gv;
                        *w -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
                    }
                    self.state.insert(mk, m);
                    self.state.insert(vk, v);
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Params {
        let mut p = Params::new();
        p.insert("w".into(), Tensor::vector(&[v]));
        p
    }

    #[test]
    fn sgd_step_and_clip() {
        let cfg = OptimizerConfig { kind: OptimizerKind::Sgd, learning_rate: 0.5, clip_norm: 1.0, ..Default::default() };
        let mut opt = Optimizer::new(cfg);
        let mut p = one(1.0);
        assert_eq!(opt.step(&mut p, &one(0.5)), 0.5);
        assert_eq!(p["w"].data(), &[0.75]);
        assert_eq!(opt.step(&mut p, &one(4.0)), 4.0);
        assert_eq!(p["w"].data(), &[0.25]);
    }

    #[test]
    fn adadelta_first_step_magnitude() {
        let cfg = OptimizerConfig { rho: 0.9, epsilon: 1e-6, clip_norm: 100.0, ..Default::default() };
        let mut opt = Optimizer::new(cfg);
        let mut p = one(0.0);
        opt.step(&mut p, &one(2.0));
        let want = -(1e-6f64).sqrt() / (0.1 * 4.0 + 1e-6f64).sqrt() * 2.0;
        assert!((p["w"].data()[0] - want).abs() < 1e-15);
        assert_eq!(opt.state().len(), 3);
    }

    #[test]
    fn adadelta_minimises_quadratic() {
        let mut opt = Optimizer::new(OptimizerConfig::default());
        let mut p = one(3.0);
        for _ in 0..3000 {
            let x = p["w"].data()[0];
            opt.step(&mut p, &one(2.0 * x));
        }
        assert!(p["w"].data()[0].abs() < 0.1);
    }
}
