//! Projected dynamics: local energies and the linear system `M dtheta = V dt`.
//!
//! With `u = alpha * psi_beta` and `sigma = grad_beta log psi`,
//!
//! ```text
//! M = alpha^2 E[(1, sigma)(1, sigma)^T],   V = alpha^2 E[(1, sigma) l]
//! l(x) = sum_j L[x, j] psi(j) / psi(x) + f(t, x) / (alpha psi(x))
//! ```
//!
//! Expectations are taken over `psi^2`, either by the buffer/count estimator
//! or by enumerating the mesh.
//!
//! Estimates are stored factored as `M = A^T A`, `V = A^T b`, one row of `A`
//! per unique sample, which keeps a step at `O(U^2 p)` when the number of
//! unique samples `U` is below `p`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ansatz::Ansatz;
use crate::error::{Result, VmcError};
use crate::mesh::MeshSpec;
use crate::operator::{OperatorSpec, RowStencil, SourceFn, SparseRow};

/// Largest `n` accepted by [`exact_mv`].
pub const MAX_EXACT_QUBITS: usize = 16;

/// Deduplicated sample buffer with multiplicities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch {
    indices: Vec<usize>,
    counts: Vec<u64>,
}

impl SampleBatch {
    /// Entries are sorted by index; duplicates are rejected.
    pub fn new(indices: Vec<usize>, counts: Vec<u64>) -> Result<Self> {
        if indices.is_empty() {
            return Err(VmcError::validation("sample batch is empty"));
        }
        if indices.len() != counts.len() {
            return Err(VmcError::validation(format!(
                "{} indices but {} counts",
                indices.len(),
                counts.len()
            )));
        }
        if counts.contains(&0) {
            return Err(VmcError::validation("sample counts must be positive"));
        }
        let mut pairs: Vec<(usize, u64)> = indices.into_iter().zip(counts).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(VmcError::validation("sample buffer has duplicate entries"));
        }
        let (indices, counts) = pairs.into_iter().unzip();
        Ok(Self { indices, counts })
    }

    /// Buffer built from raw draws (duplicates allowed).
    pub fn from_draws(draws: &[usize]) -> Result<Self> {
        let mut sorted = draws.to_vec();
        sorted.sort_unstable();
        let mut indices = Vec::new();
        let mut counts: Vec<u64> = Vec::new();
        for k in sorted {
            if indices.last() == Some(&k) {
                *counts.last_mut().expect("nonempty") += 1;
            } else {
                indices.push(k);
                counts.push(1);
            }
        }
        Self::new(indices, counts)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of unique samples.
    pub fn unique(&self) -> usize {
        self.indices.len()
    }

    /// Requested batch size `B = sum c_i`.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryForm {
    /// `M = A^T A`, `V = A^T b`.
    Factored { a: DMatrix<f64>, b: DVector<f64> },
    Dense { m: DMatrix<f64>, v: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometryEstimate {
    pub form: GeometryForm,
    pub alpha_sq: f64,
    /// Unique samples (or mesh points) contributing.
    pub effective_samples: usize,
    pub min_local_energy: f64,
    pub max_local_energy: f64,
}

impl GeometryEstimate {
    pub fn dense(m: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() != v.len() {
            return Err(VmcError::validation(format!(
                "M is {}x{} but V has length {}",
                m.nrows(),
                m.ncols(),
                v.len()
            )));
        }
        Ok(Self {
            form: GeometryForm::Dense { m, v },
            alpha_sq: f64::NAN,
            effective_samples: 0,
            min_local_energy: f64::NAN,
            max_local_energy: f64::NAN,
        })
    }

    /// Length of `theta`.
    pub fn dim(&self) -> usize {
        match &self.form {
            GeometryForm::Factored { a, .. } => a.ncols(),
            GeometryForm::Dense { v, .. } => v.len(),
        }
    }

    pub fn m(&self) -> DMatrix<f64> {
        match &self.form {
            GeometryForm::Factored { a, .. } => a.tr_mul(a),
            GeometryForm::Dense { m, .. } => m.clone(),
        }
    }

    pub fn v(&self) -> DVector<f64> {
        match &self.form {
            GeometryForm::Factored { a, b } => a.tr_mul(b),
            GeometryForm::Dense { v, .. } => v.clone(),
        }
    }
}

/// Models whose tangent vectors `du(x)/dtheta` can be enumerated.
pub trait TangentModel: Sync {
    fn n(&self) -> usize;
    /// Length of `theta`.
    fn dim(&self) -> usize;
    fn value(&self, k: usize) -> f64;
    fn value_and_tangent(&self, k: usize) -> Result<(f64, Vec<f64>)>;
}

impl TangentModel for Ansatz {
    fn n(&self) -> usize {
        Ansatz::n(self)
    }

    fn dim(&self) -> usize {
        self.num_params() + 1
    }

    fn value(&self, k: usize) -> f64 {
        (self.state.log_alpha + self.log_psi_at(k)).exp()
    }

    fn value_and_tangent(&self, k: usize) -> Result<(f64, Vec<f64>)> {
        let (lp, score) = self.log_psi_and_score(k)?;
        let u = (self.state.log_alpha + lp).exp();
        let mut t = Vec::with_capacity(score.len() + 1);
        t.push(u);
        t.extend(score.iter().map(|s| u * s));
        Ok((u, t))
    }
}

/// `u_theta = Phi theta` over explicit basis columns on the mesh.
#[derive(Debug, Clone)]
pub struct LinearAnsatz {
    pub phi: DMatrix<f64>,
    pub theta: DVector<f64>,
}

impl LinearAnsatz {
    pub fn new(mesh: &MeshSpec, phi: DMatrix<f64>, theta: DVector<f64>) -> Result<Self> {
        if phi.nrows() != mesh.size() || phi.ncols() != theta.len() {
            return Err(VmcError::validation(format!(
                "basis is {}x{}, expected {} rows and {} columns",
                phi.nrows(),
                phi.ncols(),
                mesh.size(),
                theta.len()
            )));
        }
        Ok(Self { phi, theta })
    }

    pub fn values(&self) -> DVector<f64> {
        &self.phi * &self.theta
    }
}

impl TangentModel for LinearAnsatz {
    fn n(&self) -> usize {
        self.phi.nrows().trailing_zeros() as usize
    }

    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn value(&self, k: usize) -> f64 {
        self.phi.row(k).dot(&self.theta.transpose())
    }

    fn value_and_tangent(&self, k: usize) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(k), self.phi.row(k).iter().copied().collect()))
    }
}

/// Local energy at `k` from precomputed log-amplitudes.
fn local_energy_from(
    row: &SparseRow,
    log_psi: impl Fn(usize) -> f64,
    k: usize,
    log_alpha: f64,
    f: f64,
) -> f64 {
    let lk = log_psi(k);
    let mut l: f64 = row
        .entries
        .iter()
        .map(|&(c, w)| if c == k { w } else { w * (log_psi(c) - lk).exp() })
        .sum();
    if f != 0.0 {
        l += f * (-(log_alpha + lk)).exp();
    }
    l
}

/// `l(t, k) = (L psi)(k) / psi(k) + f(t, k) / (alpha psi(k))`.
pub fn local_energy(
    ansatz: &Ansatz,
    op: &OperatorSpec,
    mesh: &MeshSpec,
    src: &SourceFn,
    t: f64,
    k: usize,
) -> Result<f64> {
    check_sizes(ansatz.n(), mesh)?;
    let row = op.row(mesh, k)?;
    let l = local_energy_from(
        &row,
        |c| ansatz.log_psi_at(c),
        k,
        ansatz.state.log_alpha,
        src.eval(t, k),
    );
    finite_or_err(l, k)
}

fn finite_or_err(l: f64, k: usize) -> Result<f64> {
    if l.is_finite() {
        Ok(l)
    } else {
        Err(VmcError::numerical(format!("non-finite local energy at index {k}")))
    }
}

fn check_sizes(n: usize, mesh: &MeshSpec) -> Result<()> {
    if n != mesh.n() {
        return Err(VmcError::validation(format!(
            "model has n = {n} but the mesh has n = {}",
            mesh.n()
        )));
    }
    Ok(())
}

/// Monte Carlo estimate of `M` and `V` from a sample buffer.
pub fn estimate_mv(
    ansatz: &Ansatz,
    stencil: &RowStencil,
    src: &SourceFn,
    t: f64,
    batch: &SampleBatch,
) -> Result<GeometryEstimate> {
    let mesh = stencil.mesh();
    check_sizes(ansatz.n(), mesh)?;
    if let Some(&k) = batch.indices().last() {
        if k >= mesh.size() {
            return Err(VmcError::validation(format!("sample index {k} is off the mesh")));
        }
    }
    let rows: Vec<SparseRow> = batch
        .indices()
        .par_iter()
        .map(|&k| {
            let mut row = SparseRow::default();
            stencil.row_into(k, &mut row);
            row
        })
        .collect();

    // Every amplitude needed: the samples and their stencil neighbours.
    let mut needed: Vec<usize> = rows
        .iter()
        .flat_map(|r| r.entries.iter().map(|e| e.0))
        .chain(batch.indices().iter().copied())
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let log_psi: Vec<f64> = needed.par_iter().map(|&k| ansatz.log_psi_at(k)).collect();
    let lookup = |k: usize| log_psi[needed.binary_search(&k).expect("amplitude was evaluated")];

    let log_alpha = ansatz.state.log_alpha;
    let alpha = log_alpha.exp();
    let total = batch.total() as f64;
    let dim = ansatz.num_params() + 1;
    let per_sample: Vec<(Vec<f64>, f64)> = batch
        .indices()
        .par_iter()
        .zip(batch.counts().par_iter())
        .zip(rows.par_iter())
        .map(|((&k, &c), row)| {
            let (_, score) = ansatz.log_psi_and_score(k)?;
            let l = local_energy_from(row, lookup, k, log_alpha, src.eval(t, k));
            let l = finite_or_err(l, k)?;
            let w = (c as f64 / total).sqrt() * alpha;
            let mut a = Vec::with_capacity(dim);
            a.push(w);
            a.extend(score.iter().map(|s| w * s));
            Ok((a, l))
        })
        .collect::<Result<_>>()?;

    let u = per_sample.len();
    let mut a = DMatrix::zeros(u, dim);
    let mut b = DVector::zeros(u);
    let mut lmin = f64::INFINITY;
    let mut lmax = f64::NEG_INFINITY;
    for (i, (row, l)) in per_sample.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
        b[i] = row[0] * l;
        lmin = lmin.min(*l);
        lmax = lmax.max(*l);
    }
    Ok(GeometryEstimate {
        form: GeometryForm::Factored { a, b },
        alpha_sq: alpha * alpha,
        effective_samples: u,
        min_local_energy: lmin,
        max_local_energy: lmax,
    })
}

/// `M` and `V` by enumerating the mesh: `M = T^T T`, `V = T^T (L u + f)`
/// with `T[x] = du(x)/dtheta`.
pub fn exact_mv<T: TangentModel>(
    model: &T,
    op: &OperatorSpec,
    mesh: &MeshSpec,
    src: &SourceFn,
    t: f64,
) -> Result<GeometryEstimate> {
    check_sizes(model.n(), mesh)?;
    if mesh.n() > MAX_EXACT_QUBITS {
        return Err(VmcError::TooLarge {
            what: "exact geometry enumeration",
            n: mesh.n(),
            limit: MAX_EXACT_QUBITS,
        });
    }
    let size = mesh.size();
    let dim = model.dim();
    let rows: Vec<(f64, Vec<f64>)> = (0..size)
        .into_par_iter()
        .map(|k| model.value_and_tangent(k))
        .collect::<Result<_>>()?;
    let u: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let stencil = RowStencil::new(op, mesh);
    let mut tangents = DMatrix::zeros(size, dim);
    let mut force = DVector::zeros(size);
    let mut row = SparseRow::default();
    let mut lmin = f64::INFINITY;
    let mut lmax = f64::NEG_INFINITY;
    for (k, (uk, tk)) in rows.iter().enumerate() {
        for (j, v) in tk.iter().enumerate() {
            tangents[(k, j)] = *v;
        }
        stencil.row_into(k, &mut row);
        let fk = row.dot(&u) + src.eval(t, k);
        force[k] = fk;
        let l = fk / uk;
        lmin = lmin.min(l);
        lmax = lmax.max(l);
    }
    // Equals alpha^2 for the normalized ansatz.
    let alpha_sq = u.iter().map(|v| v * v).sum();
    Ok(GeometryEstimate {
        form: GeometryForm::Factored {
            a: tangents,
            b: force,
        },
        alpha_sq,
        effective_samples: size,
        min_local_energy: lmin,
        max_local_energy: lmax,
    })
}
