//! Explicit Euler time stepping of `theta` along the projected dynamics.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, AnsatzState};
use crate::error::{Result, VmcError};
use crate::geometry::{estimate_mv, exact_mv, GeometryEstimate, GeometryForm};
use crate::mesh::{GridFunction, MeshSpec};
use crate::operator::{OperatorSpec, RowStencil, SourceFn};

/// Dense snapshots are stored only up to this many bits.
pub const MAX_DENSE_SNAPSHOT_QUBITS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub steps: usize,
    pub batch: u64,
    pub svd_eps: f64,
    pub seed: u64,
    pub record_stride: usize,
    /// Use enumerated `M`, `V` instead of sampled estimates.
    pub exact_geometry: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt: 5e-5,
            steps: 20_000,
            batch: 1024,
            svd_eps: 1e-12,
            seed: 0,
            record_stride: 2000,
            exact_geometry: false,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(VmcError::validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.svd_eps > 0.0) {
            return Err(VmcError::validation(format!(
                "svd_eps must be positive, got {}",
                self.svd_eps
            )));
        }
        if self.batch == 0 {
            return Err(VmcError::validation("batch size must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(VmcError::validation("record_stride must be at least 1"));
        }
        Ok(())
    }
}

/// Which linear-algebra route [`solve_direction_with`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveRoute {
    /// Gram route when the estimate has fewer rows than columns.
    Auto,
    /// SVD of the materialized `M`.
    Dense,
    /// Eigen-decomposition of `G = A A^T` for factored estimates.
    Gram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub delta: Vec<f64>,
    /// Retained singular values.
    pub rank: usize,
    /// Largest over smallest retained singular value (`NaN` at rank 0).
    pub cond: f64,
    pub v_norm: f64,
}

impl Direction {
    pub fn is_zero(&self) -> bool {
        self.rank == 0
    }
}

/// `dtheta = M^+ V dt` with singular values of `M` below `svd_eps`
/// (absolute) discarded.
pub fn solve_direction(est: &GeometryEstimate, dt: f64, svd_eps: f64) -> Result<Direction> {
    solve_direction_with(est, dt, svd_eps, SolveRoute::Auto)
}

pub fn solve_direction_with(
    est: &GeometryEstimate,
    dt: f64,
    svd_eps: f64,
    route: SolveRoute,
) -> Result<Direction> {
    if !(svd_eps > 0.0) {
        return Err(VmcError::validation("svd_eps must be positive"));
    }
    let dir = match (&est.form, route) {
        (GeometryForm::Factored { a, b }, SolveRoute::Gram) => gram_solve(a, b, dt, svd_eps),
        (GeometryForm::Factored { a, b }, SolveRoute::Auto) if a.nrows() <= a.ncols() => {
            gram_solve(a, b, dt, svd_eps)
        }
        (GeometryForm::Dense { .. }, SolveRoute::Gram) => {
            return Err(VmcError::validation("Gram route needs a factored estimate"))
        }
        _ => dense_solve(&est.m(), &est.v(), dt, svd_eps),
    }?;
    if dir.is_zero() {
        warn!("all singular values below {svd_eps:e}; taking a zero step");
    }
    Ok(dir)
}

fn finish(delta: DVector<f64>, kept: &[f64], v_norm: f64) -> Result<Direction> {
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(VmcError::numerical("update direction is not finite"));
    }
    let cond = match kept.len() {
        0 => f64::NAN,
        _ => {
            let hi = kept.iter().cloned().fold(f64::MIN, f64::max);
            let lo = kept.iter().cloned().fold(f64::MAX, f64::min);
            hi / lo
        }
    };
    Ok(Direction {
        delta: delta.iter().copied().collect(),
        rank: kept.len(),
        cond,
        v_norm,
    })
}

fn dense_solve(m: &DMatrix<f64>, v: &DVector<f64>, dt: f64, eps: f64) -> Result<Direction> {
    if m.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(VmcError::numerical("geometry estimate is not finite"));
    }
    let svd = m.clone().svd(true, true);
    let kept: Vec<f64> = svd
        .singular_values
        .iter()
        .copied()
        .filter(|&s| s >= eps)
        .collect();
    let u = svd.u.as_ref().expect("left vectors requested");
    let vt = svd.v_t.as_ref().expect("right vectors requested");
    let mut delta = DVector::zeros(m.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s >= eps {
            let coef = u.column(i).dot(v) / s * dt;
            delta.axpy(coef, &vt.row(i).transpose(), 1.0);
        }
    }
    finish(delta, &kept, v.norm())
}

/// `A^+ b dt = A^T G^+ b dt` with `G = A A^T`; the nonzero eigenvalues of
/// `G` are those of `M = A^T A`.
fn gram_solve(a: &DMatrix<f64>, b: &DVector<f64>, dt: f64, eps: f64) -> Result<Direction> {
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(VmcError::numerical("geometry estimate is not finite"));
    }
    let g = a * a.transpose();
    let eig = SymmetricEigen::new(g);
    let mut coef = DVector::zeros(a.nrows());
    let mut kept = Vec::new();
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda >= eps {
            let col = eig.eigenvectors.column(i);
            coef.axpy(col.dot(b) / lambda, &col, 1.0);
            kept.push(lambda);
        }
    }
    let delta = a.tr_mul(&coef) * dt;
    finish(delta, &kept, a.tr_mul(b).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub state: AnsatzState,
    pub dense: Option<GridFunction>,
}

/// One row of `geometry_trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub time: f64,
    pub rank: usize,
    pub cond: f64,
    pub v_norm: f64,
    pub unique: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub trace: Vec<StepTrace>,
    pub zero_direction_steps: usize,
    pub steps_taken: usize,
    /// Last finite state.
    pub final_state: AnsatzState,
    /// Set when the run stopped early on a numerical failure.
    pub abort: Option<String>,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.time)
    }
}

/// Integrates from `t0` for `cfg.steps` steps. A numerical failure ends the
/// run early with `abort` set and the last good state kept.
pub fn evolve(
    mut ansatz: Ansatz,
    op: &OperatorSpec,
    mesh: &MeshSpec,
    src: &SourceFn,
    cfg: &EvolutionConfig,
    t0: f64,
) -> Result<Trajectory> {
    cfg.validate()?;
    if ansatz.n() != mesh.n() {
        return Err(VmcError::validation(format!(
            "network has n = {} but the mesh has n = {}",
            ansatz.n(),
            mesh.n()
        )));
    }
    let stencil = RowStencil::new(op, mesh);
    let dense = mesh.n() <= MAX_DENSE_SNAPSHOT_QUBITS;
    let snapshot = |a: &Ansatz, step: usize| -> Result<Snapshot> {
        Ok(Snapshot {
            step,
            time: t0 + step as f64 * cfg.dt,
            state: a.state.clone(),
            dense: if dense { Some(a.amplitudes(mesh)?) } else { None },
        })
    };
    let mut snapshots = vec![snapshot(&ansatz, 0)?];
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut zero_steps = 0;
    let mut abort = None;
    let mut taken = 0;
    for step in 0..cfg.steps {
        let t = t0 + step as f64 * cfg.dt;
        let result = (|| -> Result<(Direction, usize)> {
            let est = if cfg.exact_geometry {
                exact_mv(&ansatz, op, mesh, src, t)?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(step as u64);
                let batch = ansatz.sample_with(cfg.batch, &mut rng)?;
                estimate_mv(&ansatz, &stencil, src, t, &batch)?
            };
            let dir = solve_direction(&est, cfg.dt, cfg.svd_eps)?;
            Ok((dir, est.effective_samples))
        })();
        let (dir, unique) = match result {
            Ok(v) => v,
            Err(e) if e.is_numerical() => {
                abort = Some(format!("step {step} (t = {t}): {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let mut next = ansatz.state.clone();
        next.step(&dir.delta);
        if !next.is_finite() {
            abort = Some(format!("step {step} (t = {t}): parameters became non-finite"));
            break;
        }
        ansatz.state = next;
        taken = step + 1;
        if dir.is_zero() {
            zero_steps += 1;
        }
        trace.push(StepTrace {
            step,
            time: t,
            rank: dir.rank,
            cond: dir.cond,
            v_norm: dir.v_norm,
            unique,
        });
        if taken % cfg.record_stride == 0 || taken == cfg.steps {
            snapshots.push(snapshot(&ansatz, taken)?);
        }
    }
    if zero_steps > 0 {
        warn!("{zero_steps} of {taken} steps had a zero update direction");
    }
    Ok(Trajectory {
        snapshots,
        trace,
        zero_direction_steps: zero_steps,
        steps_taken: taken,
        final_state: ansatz.state,
        abort,
    })
}

/// Per-snapshot `(time, ||u - u_approx|| / ||u||)`.
pub fn snapshot_errors(
    traj: &Trajectory,
    baseline: &[(f64, GridFunction)],
) -> Result<Vec<(f64, f64)>> {
    if traj.snapshots.len() != baseline.len() {
        return Err(VmcError::validation(format!(
            "trajectory has {} snapshots but the baseline has {}",
            traj.snapshots.len(),
            baseline.len()
        )));
    }
    traj.snapshots
        .iter()
        .zip(baseline)
        .map(|(snap, (time, exact))| {
            if (snap.time - time).abs() > 1e-9 * time.abs().max(1.0) {
                return Err(VmcError::validation(format!(
                    "snapshot times differ: {} vs {time}",
                    snap.time
                )));
            }
            let approx = snap.dense.as_ref().ok_or_else(|| {
                VmcError::validation("trajectory snapshot has no dense values")
            })?;
            let norm = exact.norm();
            if norm == 0.0 {
                return Err(VmcError::validation(format!(
                    "baseline has zero norm at t = {time}"
                )));
            }
            Ok((*time, exact.distance(approx) / norm))
        })
        .collect()
}

/// Mean over snapshots of the relative error against the baseline.
pub fn relative_error(traj: &Trajectory, baseline: &[(f64, GridFunction)]) -> Result<f64> {
    let errs = snapshot_errors(traj, baseline)?;
    Ok(errs.iter().map(|e| e.1).sum::<f64>() / errs.len() as f64)
}
