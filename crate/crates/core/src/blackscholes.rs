//! Multi-asset European options under Black-Scholes, priced by reducing the
//! pricing PDE to a correlated heat equation.
//!
//! With `u(t, y) = V(T - t, e^{sigma y}) e^{-sum a_i sigma_i y_i - b t}` the
//! price PDE becomes `u_t = 1/2 sum_i u_{y_i y_i} + 1/2 sum_{i != j} rho_ij
//! u_{y_i y_j}`. The heat equation is solved forward in `t` from the payoff
//! and mapped back with [`invert_transform`].

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Result, VmcError};
use crate::mesh::{BoundaryKind, GridFunction, MeshSpec};
use crate::operator::{dirichlet_source, BoundaryData, OperatorSpec, SourceFn};

/// Half-width of the truncation box in units of `sigma_i sqrt(T)`.
pub const TRUNCATION_WIDTHS: f64 = 3.0;

/// Paths per independently seeded Monte Carlo chunk.
const MC_CHUNK: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionKind {
    Call1d,
    BasketCall,
    BasketPut,
    RainbowMaxCall,
    SpreadPut,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOption {
    kind: OptionKind,
    #[serde(rename = "K")]
    strike: f64,
    r: f64,
    sigma: Vec<f64>,
    #[serde(default)]
    rho: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
    #[serde(rename = "T")]
    expiry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOption")]
pub struct OptionSpec {
    pub kind: OptionKind,
    #[serde(rename = "K")]
    pub strike: f64,
    pub r: f64,
    pub sigma: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(rename = "T")]
    pub expiry: f64,
}

impl TryFrom<RawOption> for OptionSpec {
    type Error = VmcError;

    fn try_from(raw: RawOption) -> Result<Self> {
        let d = raw.sigma.len();
        let rho = raw.rho.unwrap_or_else(|| identity(d));
        let weights = raw.weights.unwrap_or_else(|| vec![1.0 / d as f64; d]);
        OptionSpec::new(raw.kind, raw.strike, raw.r, raw.sigma, rho, weights, raw.expiry)
    }
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl OptionSpec {
    pub fn new(
        kind: OptionKind,
        strike: f64,
        r: f64,
        sigma: Vec<f64>,
        rho: Vec<Vec<f64>>,
        weights: Vec<f64>,
        expiry: f64,
    ) -> Result<Self> {
        let d = sigma.len();
        if d == 0 {
            return Err(VmcError::validation("option needs at least one asset"));
        }
        let need = match kind {
            OptionKind::Call1d => Some(1),
            OptionKind::SpreadPut => Some(2),
            _ => None,
        };
        if let Some(k) = need {
            if d != k {
                return Err(VmcError::validation(format!(
                    "{kind:?} needs {k} asset(s), got {d}"
                )));
            }
        }
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(VmcError::validation(format!("strike must be positive, got {strike}")));
        }
        if !(expiry > 0.0 && expiry.is_finite()) {
            return Err(VmcError::validation(format!("expiry must be positive, got {expiry}")));
        }
        if !r.is_finite() {
            return Err(VmcError::validation("rate must be finite"));
        }
        if sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VmcError::validation(format!(
                "volatilities must be positive, got {sigma:?}"
            )));
        }
        if weights.len() != d || weights.iter().any(|w| !w.is_finite()) {
            return Err(VmcError::validation(format!(
                "weights must have {d} finite entries, got {weights:?}"
            )));
        }
        if rho.len() != d || rho.iter().any(|row| row.len() != d) {
            return Err(VmcError::validation(format!("rho must be {d}x{d}")));
        }
        for i in 0..d {
            if (rho[i][i] - 1.0).abs() > 1e-12 {
                return Err(VmcError::validation("rho must have unit diagonal"));
            }
            for j in 0..d {
                if !rho[i][j].is_finite() || (rho[i][j] - rho[j][i]).abs() > 1e-12 {
                    return Err(VmcError::validation("rho must be finite and symmetric"));
                }
            }
        }
        correlation_factor(&rho)?;
        Ok(Self {
            kind,
            strike,
            r,
            sigma,
            rho,
            weights,
            expiry,
        })
    }

    /// Single-asset call.
    pub fn call(strike: f64, r: f64, sigma: f64, expiry: f64) -> Result<Self> {
        Self::new(
            OptionKind::Call1d,
            strike,
            r,
            vec![sigma],
            vec![vec![1.0]],
            vec![1.0],
            expiry,
        )
    }

    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    /// The same contract with a different strike.
    pub fn with_strike(&self, strike: f64) -> Result<Self> {
        let mut out = self.clone();
        out.strike = strike;
        Self::new(
            out.kind,
            out.strike,
            out.r,
            out.sigma,
            out.rho,
            out.weights,
            out.expiry,
        )
    }
}

fn payoff_with_strike(spec: &OptionSpec, strike: f64, s: &[f64]) -> f64 {
    let basket = || s.iter().zip(&spec.weights).map(|(x, w)| x * w).sum::<f64>();
    match spec.kind {
        OptionKind::Call1d => (s[0] - strike).max(0.0),
        OptionKind::BasketCall => (basket() - strike).max(0.0),
        OptionKind::BasketPut => (strike - basket()).max(0.0),
        OptionKind::RainbowMaxCall => {
            (s.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - strike).max(0.0)
        }
        OptionKind::SpreadPut => (strike - (s[0] - s[1])).max(0.0),
    }
}

/// Terminal payoff `Psi(s)`.
pub fn payoff(spec: &OptionSpec, s: &[f64]) -> Result<f64> {
    if s.len() != spec.d() {
        return Err(VmcError::validation(format!(
            "{:?} on {} assets got {} prices",
            spec.kind,
            spec.d(),
            s.len()
        )));
    }
    if s.iter().any(|&x| !(x > 0.0)) {
        return Err(VmcError::validation(format!("prices must be positive, got {s:?}")));
    }
    Ok(payoff_with_strike(spec, spec.strike, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCoeffs {
    pub a: Vec<f64>,
    pub b: f64,
}

/// Solves `sum_j sigma_i sigma_j rho_ij a_j = sigma_i^2 / 2 - r` and
/// evaluates `b`.
pub fn reduction_coeffs(spec: &OptionSpec) -> Result<ReductionCoeffs> {
    let d = spec.d();
    let s = &spec.sigma;
    let cov = DMatrix::from_fn(d, d, |i, j| s[i] * s[j] * spec.rho[i][j]);
    let rhs = DVector::from_fn(d, |i, _| s[i] * s[i] / 2.0 - spec.r);
    let sv = cov.clone().singular_values();
    let cond = sv.max() / sv.min();
    let a = match cov.clone().lu().solve(&rhs) {
        Some(a) if cond.is_finite() && cond < 1e12 => a,
        _ => {
            return Err(VmcError::validation(format!(
                "scaled correlation matrix is singular (condition number {cond:.3e})"
            )))
        }
    };
    let residual = (&cov * &a - &rhs).amax();
    if residual > 1e-10 {
        return Err(VmcError::numerical(format!(
            "reduction system residual {residual:e} exceeds 1e-10"
        )));
    }
    let mut b = -spec.r;
    for i in 0..d {
        b += a[i] * (spec.r - s[i] * s[i] / 2.0) + 0.5 * a[i] * a[i] * s[i] * s[i];
        for j in 0..d {
            if i != j {
                b += 0.5 * spec.rho[i][j] * s[i] * s[j] * a[i] * a[j];
            }
        }
    }
    Ok(ReductionCoeffs {
        a: a.iter().copied().collect(),
        b,
    })
}

/// Per-axis truncation interval in `y = ln(s) / sigma`.
pub fn y_domain(spec: &OptionSpec) -> Vec<[f64; 2]> {
    let half = TRUNCATION_WIDTHS * spec.expiry.sqrt();
    spec.sigma
        .iter()
        .map(|s| {
            let c = spec.strike.ln() / s;
            [c - half, c + half]
        })
        .collect()
}

/// Mesh strictly inside the truncation box: spacing
/// `(L_u - L_l) / (m + 1)` per axis, so the ghost layer lies on its faces.
pub fn heat_mesh(spec: &OptionSpec, n: usize) -> Result<MeshSpec> {
    let d = spec.d();
    if n == 0 || !n.is_multiple_of(d) {
        return Err(VmcError::validation(format!(
            "n = {n} must be a positive multiple of d = {d}"
        )));
    }
    let m = (1usize << (n / d)) as f64;
    let bounds = y_domain(spec)
        .into_iter()
        .map(|[lo, hi]| {
            let dx = (hi - lo) / (m + 1.0);
            [lo + dx, hi]
        })
        .collect();
    MeshSpec::new(d, n, bounds)
}

/// `e^{-sum_i a_i sigma_i y_i}`.
fn weight(coeffs: &ReductionCoeffs, spec: &OptionSpec, y: &[f64]) -> f64 {
    let e: f64 = y
        .iter()
        .zip(&spec.sigma)
        .zip(&coeffs.a)
        .map(|((y, s), a)| a * s * y)
        .sum();
    (-e).exp()
}

fn prices(spec: &OptionSpec, y: &[f64]) -> Vec<f64> {
    y.iter().zip(&spec.sigma).map(|(y, s)| (s * y).exp()).collect()
}

/// The heat problem for an option: operator, mesh, initial data and the
/// boundary source.
#[derive(Debug, Clone)]
pub struct HeatProblem {
    pub op: OperatorSpec,
    pub mesh: MeshSpec,
    pub u0: GridFunction,
    pub source: SourceFn,
}

/// Heat operator `A_ii = 1/2, A_ij = rho_ij / 2` on the truncated y-box.
/// Ghost values at heat time `t` are the payoff with the strike discounted
/// to `K e^{-r t}`, transported through the same change of variables.
pub fn to_heat(spec: &OptionSpec, coeffs: &ReductionCoeffs, n: usize) -> Result<HeatProblem> {
    let op = OperatorSpec::correlated_heat(&spec.rho, BoundaryKind::Dirichlet)?;
    let mesh = heat_mesh(spec, n)?;
    let mut u0 = Vec::with_capacity(mesh.size());
    for k in 0..mesh.size() {
        let y = mesh.to_coords(k)?;
        u0.push(payoff_with_strike(spec, spec.strike, &prices(spec, &y)) * weight(coeffs, spec, &y));
    }
    let u0 = GridFunction::new(&mesh, u0)?;
    let (bspec, bcoeffs) = (spec.clone(), coeffs.clone());
    let g: BoundaryData = Arc::new(move |t: f64, y: &[f64]| {
        let strike = bspec.strike * (-bspec.r * t).exp();
        payoff_with_strike(&bspec, strike, &prices(&bspec, y))
            * weight(&bcoeffs, &bspec, y)
            * (-bcoeffs.b * t).exp()
    });
    let source = dirichlet_source(&op, &mesh, g)?;
    Ok(HeatProblem {
        op,
        mesh,
        u0,
        source,
    })
}

/// Prices `V` on the mesh from the heat solution at heat time `tau`
/// (time to expiry): `V = u e^{sum a_i sigma_i y_i + b tau}`.
pub fn invert_transform(
    u: &GridFunction,
    coeffs: &ReductionCoeffs,
    spec: &OptionSpec,
    mesh: &MeshSpec,
    tau: f64,
) -> Result<GridFunction> {
    if u.len() != mesh.size() {
        return Err(VmcError::validation("heat solution does not match the mesh"));
    }
    let growth = (coeffs.b * tau).exp();
    let mut out = Vec::with_capacity(u.len());
    for (k, v) in u.values().iter().enumerate() {
        let y = mesh.to_coords(k)?;
        out.push(v * growth / weight(coeffs, spec, &y));
    }
    GridFunction::new(mesh, out)
}

/// Forward substitution at heat time `tau`: `u = V e^{-sum a sigma y - b tau}`.
pub fn forward_transform(
    v: &GridFunction,
    coeffs: &ReductionCoeffs,
    spec: &OptionSpec,
    mesh: &MeshSpec,
    tau: f64,
) -> Result<GridFunction> {
    let decay = (-coeffs.b * tau).exp();
    let mut out = Vec::with_capacity(v.len());
    for (k, x) in v.values().iter().enumerate() {
        let y = mesh.to_coords(k)?;
        out.push(x * decay * weight(coeffs, spec, &y));
    }
    GridFunction::new(mesh, out)
}

/// Asset prices at each mesh point.
pub fn price_grid(spec: &OptionSpec, mesh: &MeshSpec) -> Result<Vec<Vec<f64>>> {
    (0..mesh.size())
        .map(|k| Ok(prices(spec, &mesh.to_coords(k)?)))
        .collect()
}

/// Multilinear interpolation of mesh prices at the asset prices `s0`, taken
/// in `y = ln(s) / sigma`. `s0` must lie within the grid's bounding box.
pub fn price_at(v: &GridFunction, spec: &OptionSpec, mesh: &MeshSpec, s0: &[f64]) -> Result<f64> {
    let d = mesh.d();
    if s0.len() != d || spec.d() != d || v.len() != mesh.size() {
        return Err(VmcError::validation("price_at: option, mesh and spot disagree in dimension"));
    }
    let dx = mesh.dx();
    let last = mesh.m() - 1;
    let mut base = Vec::with_capacity(d);
    let mut frac = Vec::with_capacity(d);
    for ((s, sigma), [lo, _]) in s0.iter().zip(&spec.sigma).zip(mesh.bounds()) {
        let pos = if *s > 0.0 { ((s.ln() / sigma) - lo) / dx } else { f64::NAN };
        if !(pos >= -1e-9 && pos <= last as f64 + 1e-9) {
            return Err(VmcError::validation(format!("spot {s0:?} lies outside the price grid")));
        }
        let j = (pos.floor().max(0.0) as usize).min(last.saturating_sub(1));
        base.push(j);
        frac.push(if last == 0 { 0.0 } else { pos - j as f64 });
    }
    let mut total = 0.0;
    let mut multi = vec![0usize; d];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        for i in 0..d {
            let up = (corner >> i) & 1 == 1;
            multi[i] = (base[i] + up as usize).min(last);
            w *= if up { frac[i] } else { 1.0 - frac[i] };
        }
        if w != 0.0 {
            total += w * v.values()[mesh.ravel(&multi)?];
        }
    }
    Ok(total)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes call price with time to expiry `tau`; the payoff when
/// `tau <= 0`.
pub fn analytic_call(strike: f64, r: f64, sigma: f64, tau: f64, s: f64) -> f64 {
    if tau <= 0.0 {
        return (s - strike).max(0.0);
    }
    if s <= 0.0 {
        return 0.0;
    }
    let vol = sigma * tau.sqrt();
    let d_plus = ((s / strike).ln() + (r + sigma * sigma / 2.0) * tau) / vol;
    let d_minus = d_plus - vol;
    normal_cdf(d_plus) * s - normal_cdf(d_minus) * strike * (-r * tau).exp()
}

/// `L` with `L L^T = rho`, from the eigen-decomposition (handles
/// semi-definite `rho`).
pub fn correlation_factor(rho: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rho.len();
    let m = DMatrix::from_fn(d, d, |i, j| rho[i][j]);
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min < -1e-12 {
        return Err(VmcError::validation(format!(
            "correlation matrix is not positive semi-definite (eigenvalue {min:e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Discounted Monte Carlo price from exact terminal sampling of correlated
/// geometric Brownian motions; returns `(price, standard error)`.
pub fn mc_price(spec: &OptionSpec, s0: &[f64], paths: usize, seed: u64) -> Result<(f64, f64)> {
    if s0.len() != spec.d() || s0.iter().any(|&s| !(s > 0.0)) {
        return Err(VmcError::validation(format!(
            "need {} positive initial prices, got {s0:?}",
            spec.d()
        )));
    }
    if paths < 2 {
        return Err(VmcError::validation("need at least two paths"));
    }
    let d = spec.d();
    let factor = correlation_factor(&spec.rho)?;
    let t = spec.expiry;
    let drift: Vec<f64> = spec
        .sigma
        .iter()
        .map(|s| (spec.r - s * s / 2.0) * t)
        .collect();
    let vol: Vec<f64> = spec.sigma.iter().map(|s| s * t.sqrt()).collect();
    let chunks = paths.div_ceil(MC_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(paths - c * MC_CHUNK);
            let mut z = vec![0.0; d];
            let mut s = vec![0.0; d];
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                for i in 0..d {
                    let w: f64 = (0..d).map(|j| factor[(i, j)] * z[j]).sum();
                    s[i] = s0[i] * (drift[i] + vol[i] * w).exp();
                }
                let p = payoff_with_strike(spec, spec.strike, &s);
                sum += p;
                sq += p * p;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = sums
        .iter()
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let nf = paths as f64;
    let mean = sum / nf;
    let var = ((sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let disc = (-spec.r * t).exp();
    Ok((disc * mean, disc * (var / nf).sqrt()))
}
