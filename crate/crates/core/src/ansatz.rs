//! Masked autoregressive network (MADE) defining a normalized, strictly
//! positive amplitude over `n`-bit strings:
//!
//! `psi(k) = prod_i sqrt(p_i(k_i | earlier bits))`.
//!
//! Output unit `i` produces the logit of `P(bit i = 1)`. Masks restrict it
//! to inputs strictly earlier than bit `i` in `ordering`, which makes the
//! product telescope to `sum_k psi(k)^2 = 1` and allows exact ancestral
//! sampling.
//!
//! # Parameter layout
//!
//! `beta` holds only unmasked connections. Layers are stored in order
//! (input -> hidden_1 -> ... -> output). Within a layer the unmasked weights
//! come first in (output unit, input unit) row-major order, then one bias per
//! output unit. `log_alpha` is kept separately and leads the augmented vector
//! `theta = (log_alpha, beta)`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};
use crate::geometry::SampleBatch;
use crate::mesh::{bits_to_index, GridFunction, MeshSpec};

/// Conditionals are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-7;

/// Largest `n` for which full enumeration of the amplitude is allowed.
pub const MAX_ENUMERATION_QUBITS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    #[inline]
    fn derivative_from_value(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub n: usize,
    pub hidden: Vec<usize>,
    /// `ordering[q]` is the bit position generated at step `q`.
    pub ordering: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(n: usize, hidden: Vec<usize>) -> Self {
        Self {
            n,
            hidden,
            ordering: (0..n).collect(),
            activation: Activation::Tanh,
        }
    }

    /// Bits generated from most significant to least significant.
    pub fn reversed(n: usize, hidden: Vec<usize>) -> Self {
        Self {
            ordering: (0..n).rev().collect(),
            ..Self::new(n, hidden)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(VmcError::validation("network needs n >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(VmcError::validation("hidden layer widths must be positive"));
        }
        let mut seen = vec![false; self.n];
        if self.ordering.len() != self.n {
            return Err(VmcError::validation(format!(
                "ordering has {} entries, expected {}",
                self.ordering.len(),
                self.n
            )));
        }
        for &b in &self.ordering {
            if b >= self.n || seen[b] {
                return Err(VmcError::validation(format!(
                    "ordering {:?} is not a permutation of 0..{}",
                    self.ordering, self.n
                )));
            }
            seen[b] = true;
        }
        Ok(())
    }
}

/// Unmasked inputs of one unit. Hidden units are stored in ascending
/// degree order, so most connection sets are a prefix of the previous layer.
#[derive(Debug, Clone)]
enum Conn {
    Prefix(usize),
    Gather(Vec<usize>),
}

impl Conn {
    fn new(inputs: Vec<usize>) -> Self {
        if inputs.iter().enumerate().all(|(i, &j)| i == j) {
            Conn::Prefix(inputs.len())
        } else {
            Conn::Gather(inputs)
        }
    }

    fn len(&self) -> usize {
        match self {
            Conn::Prefix(l) => *l,
            Conn::Gather(v) => v.len(),
        }
    }

    #[inline]
    fn dot(&self, w: &[f64], x: &[f64]) -> f64 {
        match self {
            Conn::Prefix(l) => dot(&w[..*l], &x[..*l]),
            Conn::Gather(idx) => idx.iter().zip(w).map(|(&i, w)| w * x[i]).sum(),
        }
    }

    /// `grad_w = g x` and `prev += g w` over the connected inputs.
    #[inline]
    fn backward(&self, w: &[f64], g: f64, x: &[f64], grad_w: &mut [f64], prev: &mut [f64]) {
        match self {
            Conn::Prefix(l) => {
                let l = *l;
                for ((gw, &xi), (p, &wi)) in grad_w[..l]
                    .iter_mut()
                    .zip(&x[..l])
                    .zip(prev[..l].iter_mut().zip(&w[..l]))
                {
                    *gw = g * xi;
                    *p += wi * g;
                }
            }
            Conn::Gather(idx) => {
                for (slot, &i) in idx.iter().enumerate() {
                    grad_w[slot] = g * x[i];
                    prev[i] += w[slot] * g;
                }
            }
        }
    }
}

/// Dot product with four partial sums (fixed order, vectorizes).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for q in 0..4 {
            acc[q] += x[q] * y[q];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone)]
struct Layer {
    n_in: usize,
    conns: Vec<Conn>,
    /// Offset of the first weight of each output unit in `beta`.
    w_start: Vec<usize>,
    b_off: usize,
    hidden: bool,
}

impl Layer {
    fn n_out(&self) -> usize {
        self.conns.len()
    }

    #[inline]
    fn pre_activation(&self, beta: &[f64], o: usize, input: &[f64]) -> f64 {
        beta[self.b_off + o] + self.conns[o].dot(&beta[self.w_start[o]..], input)
    }
}

/// Scratch buffers reused across evaluations on one thread.
#[derive(Default)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    prev: Vec<f64>,
}

thread_local! {
    static WORKSPACE: std::cell::RefCell<Workspace> = std::cell::RefCell::new(Workspace::default());
}

/// Network structure: masks and parameter layout, no parameter values.
#[derive(Debug, Clone)]
pub struct Made {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    num_params: usize,
}

impl Made {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let mut position = vec![0; n];
        for (q, &b) in spec.ordering.iter().enumerate() {
            position[b] = q;
        }
        // Input bit j has degree position[j] + 1 in 1..=n; output bit i the same.
        let in_deg: Vec<usize> = (0..n).map(|j| position[j] + 1).collect();
        let hidden_span = n.saturating_sub(1).max(1);
        let mut prev_deg = in_deg.clone();
        let mut layers = Vec::new();
        let mut offset = 0;
        for &width in &spec.hidden {
            let mut deg: Vec<usize> = (0..width).map(|k| k % hidden_span + 1).collect();
            deg.sort_unstable();
            let inputs: Vec<Vec<usize>> = deg
                .iter()
                .map(|&dh| (0..prev_deg.len()).filter(|&i| prev_deg[i] <= dh).collect())
                .collect();
            layers.push(Self::layout(prev_deg.len(), inputs, &mut offset, true));
            prev_deg = deg;
        }
        let inputs: Vec<Vec<usize>> = in_deg
            .iter()
            .map(|&dout| (0..prev_deg.len()).filter(|&i| prev_deg[i] < dout).collect())
            .collect();
        layers.push(Self::layout(prev_deg.len(), inputs, &mut offset, false));
        Ok(Self {
            spec,
            layers,
            num_params: offset,
        })
    }

    fn layout(n_in: usize, inputs: Vec<Vec<usize>>, offset: &mut usize, hidden: bool) -> Layer {
        let mut w_start = Vec::with_capacity(inputs.len());
        for ins in &inputs {
            w_start.push(*offset);
            *offset += ins.len();
        }
        let b_off = *offset;
        *offset += inputs.len();
        Layer {
            n_in,
            conns: inputs.into_iter().map(Conn::new).collect(),
            w_start,
            b_off,
            hidden,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Number of network parameters `p` (excluding `log_alpha`).
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Random hidden layers (variance `1/fan_in`), zero output layer and
    /// zero biases. The zero output layer makes every conditional 1/2.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut beta = vec![0.0; self.num_params];
        for layer in self.layers.iter().filter(|l| l.hidden) {
            for (o, conn) in layer.conns.iter().enumerate() {
                let fan_in = conn.len();
                if fan_in == 0 {
                    continue;
                }
                let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
                for w in &mut beta[layer.w_start[o]..layer.w_start[o] + fan_in] {
                    *w = normal.sample(&mut rng);
                }
            }
        }
        beta
    }

    fn encode(&self, k: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.spec.n).map(|j| if (k >> j) & 1 == 1 { 1.0 } else { -1.0 }));
    }

    /// Hidden activations for input `k` into `acts[1..=hidden]`.
    fn hidden_forward(&self, beta: &[f64], k: usize, acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len() + 1, Vec::new());
        self.encode(k, &mut acts[0]);
        let act = self.spec.activation;
        for (l, layer) in self.layers.iter().enumerate().filter(|(_, l)| l.hidden) {
            let (head, tail) = acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            debug_assert_eq!(input.len(), layer.n_in);
            out.extend((0..layer.n_out()).map(|o| act.apply(layer.pre_activation(beta, o, input))));
        }
    }

    /// Full forward pass; the logits end up in the last entry of `acts`.
    fn forward(&self, beta: &[f64], k: usize, acts: &mut Vec<Vec<f64>>) {
        self.hidden_forward(beta, k, acts);
        let last = self.layers.len() - 1;
        let layer = &self.layers[last];
        let (head, tail) = acts.split_at_mut(last + 1);
        let input = &head[last];
        let out = &mut tail[0];
        out.clear();
        out.extend((0..layer.n_out()).map(|o| layer.pre_activation(beta, o, input)));
    }

    /// Single output logit for bit `bit`, given any string whose earlier
    /// bits are set (later bits are masked out).
    fn logit(&self, beta: &[f64], k: usize, bit: usize) -> f64 {
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            self.hidden_forward(beta, k, &mut ws.acts);
            let last = self.layers.len() - 1;
            self.layers[last].pre_activation(beta, bit, &ws.acts[last])
        })
    }

    /// Log-amplitude and, optionally, its gradient with respect to `beta`.
    fn eval(&self, beta: &[f64], k: usize, grad: Option<&mut [f64]>) -> f64 {
        WORKSPACE.with(|ws| {
            let ws = &mut *ws.borrow_mut();
            self.forward(beta, k, &mut ws.acts);
            let logits = ws.acts.last().expect("output layer");
            let mut log_psi = 0.0;
            ws.delta.clear();
            ws.delta.resize(self.spec.n, 0.0);
            for (i, &z) in logits.iter().enumerate() {
                let bit = (k >> i) & 1;
                let (prob, clamped) = clamped_prob(z, bit);
                log_psi += 0.5 * prob.ln();
                if !clamped {
                    // d/dz of (1/2) log sigmoid(+-z)
                    ws.delta[i] = 0.5 * (bit as f64 - sigmoid(z));
                }
            }
            if let Some(grad) = grad {
                self.backward(beta, ws, grad);
            }
            log_psi
        })
    }

    fn backward(&self, beta: &[f64], ws: &mut Workspace, grad: &mut [f64]) {
        let act = self.spec.activation;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &ws.acts[l];
            ws.prev.clear();
            ws.prev.resize(layer.n_in, 0.0);
            for (o, conn) in layer.conns.iter().enumerate() {
                let g = ws.delta[o];
                grad[layer.b_off + o] = g;
                let start = layer.w_start[o];
                let len = conn.len();
                conn.backward(
                    &beta[start..start + len],
                    g,
                    input,
                    &mut grad[start..start + len],
                    &mut ws.prev,
                );
            }
            if l > 0 {
                for (p, &a) in ws.prev.iter_mut().zip(input) {
                    *p *= act.derivative_from_value(a);
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.prev);
        }
    }

    /// Conditional probabilities `P(bit i = 1 | earlier bits of k)`.
    fn conditionals(&self, beta: &[f64], k: usize) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward(beta, k, &mut acts);
        acts.last()
            .expect("output layer")
            .iter()
            .map(|&z| clamped_prob(z, 1).0)
            .collect()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Probability of `bit` under logit `z`, clamped; flags whether the clamp
/// was active.
#[inline]
fn clamped_prob(z: f64, bit: usize) -> (f64, bool) {
    let p = if bit == 1 { sigmoid(z) } else { sigmoid(-z) };
    if p < PROB_FLOOR {
        (PROB_FLOOR, true)
    } else if p > 1.0 - PROB_FLOOR {
        (1.0 - PROB_FLOOR, true)
    } else {
        (p, false)
    }
}

/// Augmented parameters `theta = (log_alpha, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzState {
    pub log_alpha: f64,
    pub beta: Vec<f64>,
}

impl AnsatzState {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// `theta` as one flat vector, `log_alpha` first.
    pub fn to_theta(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.beta.len() + 1);
        theta.push(self.log_alpha);
        theta.extend_from_slice(&self.beta);
        theta
    }

    pub fn from_theta(theta: &[f64]) -> Self {
        Self {
            log_alpha: theta[0],
            beta: theta[1..].to_vec(),
        }
    }

    /// `theta += delta`.
    pub fn step(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.beta.len() + 1);
        self.log_alpha += delta[0];
        for (b, d) in self.beta.iter_mut().zip(&delta[1..]) {
            *b += d;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.log_alpha.is_finite() && self.beta.iter().all(|v| v.is_finite())
    }
}

/// Per-bit Bernoulli probabilities `P(bit i = 1 | earlier bits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalOutput {
    pub probs: Vec<f64>,
}

/// A network structure together with its current parameters.
#[derive(Debug, Clone)]
pub struct Ansatz {
    net: Made,
    pub state: AnsatzState,
}

impl Ansatz {
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let net = Made::new(spec)?;
        let beta = net.init_params(seed);
        Ok(Self {
            net,
            state: AnsatzState {
                log_alpha: 0.0,
                beta,
            },
        })
    }

    pub fn with_state(spec: NetworkSpec, state: AnsatzState) -> Result<Self> {
        let net = Made::new(spec)?;
        if state.beta.len() != net.num_params() {
            return Err(VmcError::validation(format!(
                "parameter vector has length {}, network needs {}",
                state.beta.len(),
                net.num_params()
            )));
        }
        if !state.is_finite() {
            return Err(VmcError::validation("parameter vector is not finite"));
        }
        Ok(Self { net, state })
    }

    pub fn net(&self) -> &Made {
        &self.net
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }

    pub fn n(&self) -> usize {
        self.net.n()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn alpha(&self) -> f64 {
        self.state.alpha()
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if self.n() < usize::BITS as usize && k >> self.n() != 0 {
            return Err(VmcError::validation(format!(
                "index {k} has bits beyond n = {}",
                self.n()
            )));
        }
        Ok(())
    }

    fn index_of(&self, bits: &[u8]) -> Result<usize> {
        if bits.len() != self.n() {
            return Err(VmcError::validation(format!(
                "bit string has length {}, network expects {}",
                bits.len(),
                self.n()
            )));
        }
        bits_to_index(bits)
    }

    pub fn conditionals(&self, bits: &[u8]) -> Result<ConditionalOutput> {
        let k = self.index_of(bits)?;
        Ok(ConditionalOutput {
            probs: self.net.conditionals(&self.state.beta, k),
        })
    }

    /// `psi(bits)`, strictly positive.
    pub fn psi(&self, bits: &[u8]) -> Result<f64> {
        let k = self.index_of(bits)?;
        Ok(self.log_psi_at(k).exp())
    }

    pub fn log_psi(&self, k: usize) -> Result<f64> {
        self.check_index(k)?;
        Ok(self.log_psi_at(k))
    }

    pub(crate) fn log_psi_at(&self, k: usize) -> f64 {
        self.net.eval(&self.state.beta, k, None)
    }

    /// Score `grad_beta log psi(bits)`, length `p`.
    pub fn score(&self, bits: &[u8]) -> Result<Vec<f64>> {
        let k = self.index_of(bits)?;
        let (_, score) = self.log_psi_and_score(k)?;
        Ok(score)
    }

    pub fn log_psi_and_score(&self, k: usize) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        let lp = self.log_psi_and_score_into(k, &mut grad)?;
        Ok((lp, grad))
    }

    /// Writes the score into `grad` (length `p`) and returns `log psi`.
    pub fn log_psi_and_score_into(&self, k: usize, grad: &mut [f64]) -> Result<f64> {
        self.check_index(k)?;
        if grad.len() != self.num_params() {
            return Err(VmcError::validation(format!(
                "score buffer has length {}, expected {}",
                grad.len(),
                self.num_params()
            )));
        }
        let lp = self.net.eval(&self.state.beta, k, Some(grad));
        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(VmcError::numerical(format!(
                "non-finite log-amplitude or score at index {k}"
            )));
        }
        Ok(lp)
    }

    /// `(psi, score)` for every buffer entry of `batch`, in buffer order.
    /// Each entry is evaluated exactly as a standalone call would.
    pub fn batch_forward(&self, batch: &SampleBatch) -> Result<Vec<(f64, Vec<f64>)>> {
        batch
            .indices()
            .par_iter()
            .map(|&k| self.log_psi_and_score(k).map(|(lp, s)| (lp.exp(), s)))
            .collect()
    }

    /// Draws `b` strings from `psi^2` by ancestral sampling. Strings sharing a
    /// prefix are carried as one group and split with a binomial draw, which
    /// gives the same law as `b` independent draws and returns the
    /// deduplicated buffer directly.
    pub fn sample(&self, b: u64, seed: u64) -> Result<SampleBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(b, &mut rng)
    }

    pub fn sample_with(&self, b: u64, rng: &mut ChaCha8Rng) -> Result<SampleBatch> {
        if b == 0 {
            return Err(VmcError::validation("batch size must be at least 1"));
        }
        let beta = &self.state.beta;
        let mut groups: Vec<(usize, u64)> = vec![(0, b)];
        let mut next = Vec::new();
        for &bit in &self.spec().ordering {
            next.clear();
            for &(prefix, count) in &groups {
                let z = self.net.logit(beta, prefix, bit);
                let p1 = clamped_prob(z, 1).0;
                let ones = Binomial::new(count, p1)
                    .map_err(|e| VmcError::numerical(format!("binomial draw failed: {e}")))?
                    .sample(rng);
                if count > ones {
                    next.push((prefix, count - ones));
                }
                if ones > 0 {
                    next.push((prefix | (1 << bit), ones));
                }
            }
            std::mem::swap(&mut groups, &mut next);
        }
        groups.sort_unstable_by_key(|g| g.0);
        let (indices, counts) = groups.into_iter().unzip();
        SampleBatch::new(indices, counts)
    }

    /// `psi` at every mesh point.
    pub fn psi_all(&self) -> Result<Vec<f64>> {
        let n = self.n();
        if n > MAX_ENUMERATION_QUBITS {
            return Err(VmcError::TooLarge {
                what: "amplitude enumeration",
                n,
                limit: MAX_ENUMERATION_QUBITS,
            });
        }
        Ok((0..1usize << n)
            .into_par_iter()
            .map(|k| self.log_psi_at(k).exp())
            .collect())
    }

    /// Dense `u = alpha * psi` on the mesh.
    pub fn amplitudes(&self, mesh: &MeshSpec) -> Result<GridFunction> {
        if mesh.n() != self.n() {
            return Err(VmcError::validation(format!(
                "mesh has n = {} but the network has n = {}",
                mesh.n(),
                self.n()
            )));
        }
        let alpha = self.alpha();
        let psi = self.psi_all()?;
        GridFunction::new(mesh, psi.into_iter().map(|p| alpha * p).collect())
    }
}

pub const CHECKPOINT_FORMAT: &str = "meshvmc-checkpoint/1";

pub const FLATTENING: &str = "params[0] = log_alpha; then for each layer input->hidden_1->...->output: \
unmasked weights in (output unit, input unit) row-major order, then one bias per output unit";

/// Checkpoint file: network structure plus `[log_alpha, beta...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub network: NetworkSpec,
    pub flattening: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_ansatz(ansatz: &Ansatz, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            network: ansatz.spec().clone(),
            flattening: FLATTENING.to_string(),
            seed,
            time: None,
            config_hash: None,
            params: ansatz.state.to_theta(),
        }
    }

    pub fn to_ansatz(&self) -> Result<Ansatz> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(VmcError::validation(format!(
                "unknown checkpoint format {:?}",
                self.format
            )));
        }
        if self.params.is_empty() {
            return Err(VmcError::validation("checkpoint has no parameters"));
        }
        Ansatz::with_state(self.network.clone(), AnsatzState::from_theta(&self.params))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_bits(n: usize) -> impl Iterator<Item = Vec<u8>> {
        (0..1usize << n).map(move |k| crate::mesh::index_to_bits(k, n))
    }

    fn randomized(spec: NetworkSpec, seed: u64) -> Ansatz {
        let mut a = Ansatz::new(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let normal = Normal::new(0.0, 0.7).unwrap();
        for b in &mut a.state.beta {
            *b = normal.sample(&mut rng);
        }
        a.state.log_alpha = 0.3;
        a
    }

    #[test]
    fn uniform_at_initialization() {
        let a = Ansatz::new(NetworkSpec::new(5, vec![8, 8]), 1).unwrap();
        for bits in all_bits(5) {
            let psi = a.psi(&bits).unwrap();
            assert!((psi - 2f64.powf(-2.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_set_two_bit_example() {
        // No hidden layer: bit 0 has only a bias, bit 1 sees bit 0.
        let mut a = Ansatz::new(NetworkSpec::new(2, vec![]), 0).unwrap();
        assert_eq!(a.num_params(), 1 + 2);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        // layout: output unit 0 has no weights; unit 1 has weight from bit 0;
        // then biases (b0, b1).
        a.state.beta = vec![0.0, logit(0.8), 0.0];
        let psi = a.psi(&[1, 1]).unwrap();
        assert!((psi - (0.8f64 * 0.5).sqrt()).abs() < 1e-12);
        assert!((psi - 0.632456).abs() < 1e-6);
    }

    #[test]
    fn single_bit_score_closed_form() {
        let mut a = Ansatz::new(NetworkSpec::new(1, vec![]), 0).unwrap();
        assert_eq!(a.num_params(), 1);
        a.state.beta = vec![0.4];
        let p1 = sigmoid(0.4);
        let s = a.score(&[1]).unwrap();
        assert!((s[0] - 0.5 * (1.0 - p1)).abs() < 1e-15);
        let s0 = a.score(&[0]).unwrap();
        assert!((s0[0] + 0.5 * p1).abs() < 1e-15);
    }

    #[test]
    fn normalization_random_parameters() {
        for (seed, hidden) in [(1, vec![6]), (2, vec![5, 7]), (3, vec![])] {
            let a = randomized(NetworkSpec::new(7, hidden), seed);
            let total: f64 = a.psi_all().unwrap().iter().map(|p| p * p).sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
    }

    #[test]
    fn masks_are_autoregressive() {
        for spec in [
            NetworkSpec::new(5, vec![7, 4]),
            NetworkSpec {
                ordering: vec![2, 0, 4, 1, 3],
                ..NetworkSpec::new(5, vec![9])
            },
        ] {
            let a = randomized(spec.clone(), 9);
            let mut pos = [0; 5];
            for (q, &b) in spec.ordering.iter().enumerate() {
                pos[b] = q;
            }
            for bits in all_bits(5) {
                let base = a.conditionals(&bits).unwrap().probs;
                for j in 0..5 {
                    let mut flipped = bits.clone();
                    flipped[j] ^= 1;
                    let other = a.conditionals(&flipped).unwrap().probs;
                    for i in 0..5 {
                        if pos[i] <= pos[j] {
                            assert_eq!(base[i], other[i], "bit {j} leaked into conditional {i}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn score_has_zero_mean_under_born_density() {
        let a = randomized(NetworkSpec::new(6, vec![5]), 4);
        let mut mean = vec![0.0; a.num_params()];
        for k in 0..64 {
            let (lp, s) = a.log_psi_and_score(k).unwrap();
            let rho = (2.0 * lp).exp();
            for (m, v) in mean.iter_mut().zip(&s) {
                *m += rho * v;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn deterministic_conditionals_collapse_samples() {
        let mut a = Ansatz::new(NetworkSpec::new(4, vec![3]), 0).unwrap();
        // Output biases are the last n parameters.
        let p = a.num_params();
        for (i, b) in a.state.beta[p - 4..].iter_mut().enumerate() {
            *b = if i % 2 == 0 { 40.0 } else { -40.0 };
        }
        let batch = a.sample(5000, 3).unwrap();
        assert_eq!(batch.indices(), &[0b0101]);
        assert_eq!(batch.counts(), &[5000]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let a = randomized(NetworkSpec::new(6, vec![4]), 2);
        assert_eq!(a.sample(777, 5).unwrap(), a.sample(777, 5).unwrap());
        assert_eq!(a.sample(777, 5).unwrap().total(), 777);
    }

    #[test]
    fn batch_forward_matches_single_calls() {
        let a = randomized(NetworkSpec::new(8, vec![6, 5]), 3);
        let batch = a.sample(128, 1).unwrap();
        let out = a.batch_forward(&batch).unwrap();
        for (&k, (psi, score)) in batch.indices().iter().zip(&out) {
            let bits = crate::mesh::index_to_bits(k, 8);
            assert_eq!(*psi, a.psi(&bits).unwrap());
            assert_eq!(score, &a.score(&bits).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Ansatz::new(NetworkSpec::new(3, vec![2]), 0).unwrap();
        assert!(a.psi(&[0, 2, 1]).is_err());
        assert!(a.psi(&[0, 1]).is_err());
        assert!(a.sample(0, 1).is_err());
        assert!(Made::new(NetworkSpec {
            ordering: vec![0, 0, 1],
            ..NetworkSpec::new(3, vec![2])
        })
        .is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut a = randomized(NetworkSpec::new(5, vec![4]), 6);
        a.state.beta[0] = 0.1 + 0.2;
        a.state.log_alpha = -1.0 / 3.0;
        let ck = Checkpoint::from_ansatz(&a, 6);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let b = back.to_ansatz().unwrap();
        for (x, y) in a.state.to_theta().iter().zip(b.state.to_theta()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
