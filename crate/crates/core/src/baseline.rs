//! Dense forward-Euler reference solver and the discrete Gaussian initial
//! condition `u0(x) = prod_i e^{-t} I_{x_i}(t)`.

use log::warn;

use crate::error::{Result, VmcError};
use crate::mesh::{GridFunction, MeshSpec};
use crate::operator::{OperatorSpec, SourceFn, SparseOperator};

/// Largest `n` for dense baseline runs.
pub const MAX_BASELINE_QUBITS: usize = 24;

/// Growth factor of `||u||` treated as a blow-up.
const BLOWUP_FACTOR: f64 = 1e6;

/// `I_nu(t)` from its power series; accurate for moderate `t`.
pub fn bessel_i_series(nu: u32, t: f64) -> f64 {
    let half = 0.5 * t;
    let q = half * half;
    // (t/2)^nu / nu!
    let mut term = (1..=nu).fold(1.0, |acc, k| acc * half / k as f64);
    let mut sum = term;
    let mut j = 1.0;
    loop {
        term *= q / (j * (j + nu as f64));
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
        j += 1.0;
    }
}

/// `e^{-t} I_k(t)` for `k = 0..=max_order` by Miller's downward recurrence
/// `I_{k-1} = I_{k+1} + (2k/t) I_k`, normalized with
/// `I_0 + 2 sum_{k>=1} I_k = e^t`.
pub fn scaled_bessel_table(max_order: usize, t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(VmcError::validation(format!(
            "Gaussian width parameter must be positive, got {t}"
        )));
    }
    let start = max_order.max(t.ceil() as usize) + 40 + (10.0 * t.sqrt()).ceil() as usize;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-30;
    for k in (1..=start).rev() {
        vals[k - 1] = vals[k + 1] + 2.0 * k as f64 / t * vals[k];
        if vals[k - 1] > 1e250 {
            for v in &mut vals[k - 1..] {
                *v *= 1e-250;
            }
        }
    }
    let norm = vals[0] + 2.0 * vals[1..=start].iter().sum::<f64>();
    Ok(vals[..=max_order].iter().map(|v| v / norm).collect())
}

/// Discrete Gaussian on the mesh. With `centered`, axis index `j` maps to
/// `x = j - m/2` so the peak sits mid-grid; otherwise `x = j`.
pub fn bessel_gaussian(mesh: &MeshSpec, t: f64, centered: bool) -> Result<GridFunction> {
    let m = mesh.m();
    let offset = if centered { (m / 2) as i64 } else { 0 };
    let table = scaled_bessel_table(m, t)?;
    let axis: Vec<f64> = (0..m as i64)
        .map(|j| table[(j - offset).unsigned_abs() as usize])
        .collect();
    let mut multi = vec![0; mesh.d()];
    Ok(GridFunction::from_fn(mesh, |k| {
        multi = mesh.unravel(k).expect("index in range");
        multi.iter().map(|&j| axis[j]).product()
    }))
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub snapshots: Vec<(f64, GridFunction)>,
    pub dt: f64,
    pub steps: usize,
}

/// `u <- u + dt (L u + f(t))`, recording at `t0` and every `record_stride`
/// steps (plus the final step).
#[allow(clippy::too_many_arguments)]
pub fn euler_run(
    u0: &GridFunction,
    op: &OperatorSpec,
    mesh: &MeshSpec,
    src: &SourceFn,
    dt: f64,
    steps: usize,
    record_stride: usize,
    t0: f64,
) -> Result<BaselineRun> {
    if mesh.n() > MAX_BASELINE_QUBITS {
        return Err(VmcError::TooLarge {
            what: "dense Euler baseline",
            n: mesh.n(),
            limit: MAX_BASELINE_QUBITS,
        });
    }
    if u0.len() != mesh.size() {
        return Err(VmcError::validation(format!(
            "initial condition has {} values for a mesh of {}",
            u0.len(),
            mesh.size()
        )));
    }
    if !(dt > 0.0) || record_stride == 0 {
        return Err(VmcError::validation("dt and record_stride must be positive"));
    }
    let cfl = op.cfl_number(mesh, dt);
    if cfl > 1.0 {
        warn!("explicit Euler is unstable here: dt * 2 tr(A) / dx^2 = {cfl:.3} > 1");
    }
    let sparse = SparseOperator::assemble(op, mesh)?;
    let limit = BLOWUP_FACTOR * u0.norm().max(f64::MIN_POSITIVE);
    let mut u = u0.values().to_vec();
    let mut lu = vec![0.0; u.len()];
    let mut snapshots = vec![(t0, u0.clone())];
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        sparse.apply_into(&u, &mut lu);
        if src.is_zero() {
            for (x, l) in u.iter_mut().zip(&lu) {
                *x += dt * l;
            }
        } else {
            for (k, (x, l)) in u.iter_mut().zip(&lu).enumerate() {
                *x += dt * (l + src.eval(t, k));
            }
        }
        let done = step + 1;
        if done % record_stride == 0 || done == steps {
            let g = GridFunction::new(mesh, u.clone())?;
            let norm = g.norm();
            if !norm.is_finite() || norm > limit {
                return Err(VmcError::numerical(format!(
                    "Euler baseline blew up at step {done} (CFL number {cfl:.3})"
                )));
            }
            snapshots.push((t0 + done as f64 * dt, g));
        }
    }
    Ok(BaselineRun {
        snapshots,
        dt,
        steps,
    })
}
