//! Fitting `alpha * psi` to an initial condition with Adam on minibatches of
//! uniformly drawn mesh points.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::Ansatz;
use crate::error::{Result, VmcError};
use crate::mesh::GridFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr: f64,
    pub seed: u64,
    /// Start `log_alpha` at `ln ||u0||`.
    pub init_log_alpha: bool,
    /// Iterations between trace rows.
    pub trace_stride: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            iters: 50_000,
            batch: 128,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr: 1e-3,
            seed: 0,
            init_log_alpha: true,
            trace_stride: 100,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(VmcError::validation(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.iters == 0 || self.batch == 0 || self.trace_stride == 0 {
            return Err(VmcError::validation(
                "iters, batch and trace_stride must be at least 1",
            ));
        }
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) {
            return Err(VmcError::validation("lr and adam_eps must be positive"));
        }
        Ok(())
    }

    /// Linear warmup from 0 over the first tenth, then the base rate,
    /// divided by 10 from 3/7 and by 100 from 5/7 of the run.
    pub fn learning_rate(&self, iter: usize) -> f64 {
        let total = self.iters as f64;
        let it = iter as f64;
        let warmup = total / 10.0;
        if it < warmup {
            self.lr * it / warmup
        } else if it < total * 3.0 / 7.0 {
            self.lr
        } else if it < total * 5.0 / 7.0 {
            self.lr * 0.1
        } else {
            self.lr * 0.01
        }
    }
}

/// Standard Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

fn check_target(ansatz: &Ansatz, target: &GridFunction) -> Result<()> {
    if target.len() != 1usize << ansatz.n() {
        return Err(VmcError::validation(format!(
            "target has {} values, expected 2^{}",
            target.len(),
            ansatz.n()
        )));
    }
    Ok(())
}

/// Mean over `indices` of `(alpha psi(k) - u0(k))^2`.
pub fn loss(ansatz: &Ansatz, target: &GridFunction, indices: &[usize]) -> Result<f64> {
    check_target(ansatz, target)?;
    if indices.is_empty() {
        return Err(VmcError::validation("loss needs at least one index"));
    }
    let alpha = ansatz.alpha();
    let mut sum = 0.0;
    for &k in indices {
        let r = alpha * ansatz.log_psi(k)?.exp() - target.values()[k];
        sum += r * r;
    }
    Ok(sum / indices.len() as f64)
}

/// Points per independently accumulated chunk; chunk sums are combined in
/// order so results do not depend on the thread count.
const GRAD_CHUNK: usize = 16;

/// Loss and its gradient with respect to `theta = (log_alpha, beta)`.
pub fn loss_and_grad(
    ansatz: &Ansatz,
    target: &GridFunction,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_target(ansatz, target)?;
    if indices.is_empty() {
        return Err(VmcError::validation("loss needs at least one index"));
    }
    let p = ansatz.num_params();
    let partial: Vec<(f64, Vec<f64>)> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; p + 1];
            let mut score = vec![0.0; p];
            let mut loss = 0.0;
            for &k in chunk {
                let lp = ansatz.log_psi_and_score_into(k, &mut score)?;
                let u = (ansatz.state.log_alpha + lp).exp();
                let r = u - target.values()[k];
                let c = 2.0 * r * u;
                loss += r * r;
                acc[0] += c;
                for (a, s) in acc[1..].iter_mut().zip(&score) {
                    *a += c * s;
                }
            }
            Ok((loss, acc))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / indices.len() as f64;
    let mut grad = vec![0.0; p + 1];
    let mut loss = 0.0;
    for (l, g) in &partial {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub ansatz: Ansatz,
    pub trace: Vec<TraceRow>,
    /// `||alpha psi - u0|| / ||u0||` by enumeration.
    pub fit_error: f64,
    /// Set when a non-finite loss stopped the run; `ansatz` is the last
    /// finite state.
    pub abort: Option<String>,
}

/// Relative fit error by enumerating the mesh.
pub fn fit_error(ansatz: &Ansatz, target: &GridFunction) -> Result<f64> {
    check_target(ansatz, target)?;
    let alpha = ansatz.alpha();
    let psi = ansatz.psi_all()?;
    let diff: f64 = psi
        .iter()
        .zip(target.values())
        .map(|(p, u)| (alpha * p - u).powi(2))
        .sum();
    Ok(diff.sqrt() / target.norm())
}

pub fn run(cfg: &PretrainConfig, mut ansatz: Ansatz, target: &GridFunction) -> Result<PretrainOutcome> {
    cfg.validate()?;
    check_target(&ansatz, target)?;
    let norm = target.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(VmcError::validation("target must have positive finite norm"));
    }
    if cfg.init_log_alpha {
        ansatz.state.log_alpha = norm.ln();
    }
    let size = target.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = ansatz.state.to_theta();
    let mut adam = Adam::new(theta.len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut trace = Vec::new();
    let mut indices = vec![0; cfg.batch];
    let mut abort = None;
    for iter in 0..cfg.iters {
        indices.iter_mut().for_each(|k| *k = rng.gen_range(0..size));
        let (l, grad) = match loss_and_grad(&ansatz, target, &indices) {
            Ok(v) => v,
            Err(e) if e.is_numerical() => {
                abort = Some(format!("iteration {iter}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            abort = Some(format!("iteration {iter}: loss became non-finite"));
            break;
        }
        let lr = cfg.learning_rate(iter);
        if iter % cfg.trace_stride == 0 || iter + 1 == cfg.iters {
            trace.push(TraceRow { iter, loss: l, lr });
        }
        let mut next = theta.clone();
        adam.step(&mut next, &grad, lr);
        if next.iter().any(|v| !v.is_finite()) {
            abort = Some(format!("iteration {iter}: parameters became non-finite"));
            break;
        }
        theta = next;
        ansatz.state = crate::ansatz::AnsatzState::from_theta(&theta);
    }
    if let Some(msg) = &abort {
        warn!("pretraining stopped early: {msg}");
    }
    let fit = if ansatz.n() <= 16 {
        fit_error(&ansatz, target)?
    } else {
        f64::NAN
    };
    Ok(PretrainOutcome {
        ansatz,
        trace,
        fit_error: fit,
        abort,
    })
}
