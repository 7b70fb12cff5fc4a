use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Adam optimizer state over a fixed list of parameters. Moments are kept
/// per parameter in the same order the training loop passes them.
#[derive(Clone, Debug)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)], lr: f64, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        let m = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        let v = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        AdamState { lr, beta1, beta2, eps, step: 0, m, v }
    }

    pub fn for_params(params: &[&Matrix], lr: f64, beta1: f64, beta2: f64, eps: f64) -> AdamState {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.shape()).collect();
        AdamState::new(&shapes, lr, beta1, beta2, eps)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update over all parameters.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dimension(
                "adam_step",
                format!("{} params, {} grads, state holds {}", params.len(), grads.len(), self.m.len()),
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if p.shape() != self.m[i].shape() || grads[i].shape() != self.m[i].shape() {
                return Err(Error::dimension(
                    "adam_step",
                    format!(
                        "parameter {i}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        grads[i].shape(),
                        self.m[i].shape()
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params[i].data_mut();
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Halving-on-plateau learning rate schedule. The metric is
/// higher-is-better; after more than `patience` consecutive epochs without
/// improvement the rate is multiplied by `factor`, floored at `min_lr`.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    patience: usize,
    factor: f64,
    min_lr: f64,
    best: f64,
    since_improve: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64, min_lr: f64) -> PlateauScheduler {
        debug_assert!(factor > 0.0 && factor < 1.0, "plateau factor must be in (0, 1)");
        PlateauScheduler { lr, patience, factor, min_lr, best: f64::NEG_INFINITY, since_improve: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's metric and returns the learning rate to use next.
    pub fn step(&mut self, metric: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.since_improve = 0;
        } else {
            self.since_improve += 1;
            if self.since_improve > self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.since_improve = 0;
            }
        }
        self.lr
    }
}
