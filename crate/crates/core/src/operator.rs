//! Central-difference discretization of `L = sum_ij A_ij d_i d_j` on the
//! mesh, exposed row by row, plus boundary source functions.
//!
//! Axis terms use the 3-point stencil `A_ii (u[+e_i] - 2u + u[-e_i]) / dx^2`.
//! Each unordered pair `i < j` contributes `2 A_ij` times the 4-point mixed
//! difference `(u[++] - u[+-] - u[-+] + u[--]) / (4 dx^2)`. A row therefore
//! has at most `2d^2 + 1` nonzeros.
//!
//! Under Dirichlet conditions the grid is surrounded by a ghost layer one
//! step outside it. Rows drop ghost columns; prescribed ghost values enter
//! through [`dirichlet_source`].

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};
use crate::mesh::{BoundaryKind, GridFunction, MeshSpec};

#[derive(Debug, Clone, Deserialize)]
struct RawOperator {
    coeff_matrix: Vec<Vec<f64>>,
    bc: BoundaryKind,
}

/// Constant symmetric coefficient matrix and boundary kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOperator")]
pub struct OperatorSpec {
    coeff_matrix: Vec<Vec<f64>>,
    bc: BoundaryKind,
}

impl TryFrom<RawOperator> for OperatorSpec {
    type Error = VmcError;

    fn try_from(raw: RawOperator) -> Result<Self> {
        OperatorSpec::new(raw.coeff_matrix, raw.bc)
    }
}

impl OperatorSpec {
    pub fn new(coeff_matrix: Vec<Vec<f64>>, bc: BoundaryKind) -> Result<Self> {
        let d = coeff_matrix.len();
        if d == 0 {
            return Err(VmcError::validation("coefficient matrix is empty"));
        }
        for (i, row) in coeff_matrix.iter().enumerate() {
            if row.len() != d {
                return Err(VmcError::validation(format!(
                    "coefficient matrix row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(VmcError::validation(format!(
                    "coefficient matrix row {i} is not finite"
                )));
            }
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (coeff_matrix[i][j], coeff_matrix[j][i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(VmcError::validation(format!(
                        "coefficient matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        let spec = Self { coeff_matrix, bc };
        let min_eig = spec.min_eigenvalue();
        if min_eig < -1e-12 {
            log::warn!("coefficient matrix is indefinite (min eigenvalue {min_eig:e}); the problem is ill-posed");
        }
        Ok(spec)
    }

    /// `L = D * Laplacian` in `d` dimensions.
    pub fn diffusion(d: usize, diffusivity: f64, bc: BoundaryKind) -> Result<Self> {
        let a = (0..d)
            .map(|i| (0..d).map(|j| if i == j { diffusivity } else { 0.0 }).collect())
            .collect();
        Self::new(a, bc)
    }

    /// Heat operator with correlation: `A_ii = 1/2`, `A_ij = rho_ij / 2`.
    pub fn correlated_heat(rho: &[Vec<f64>], bc: BoundaryKind) -> Result<Self> {
        let a = rho
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &r)| if i == j { 0.5 } else { 0.5 * r })
                    .collect()
            })
            .collect();
        Self::new(a, bc)
    }

    pub fn d(&self) -> usize {
        self.coeff_matrix.len()
    }

    pub fn bc(&self) -> BoundaryKind {
        self.bc
    }

    pub fn coeff_matrix(&self) -> &[Vec<f64>] {
        &self.coeff_matrix
    }

    fn min_eigenvalue(&self) -> f64 {
        let d = self.d();
        let m = DMatrix::from_fn(d, d, |i, j| self.coeff_matrix[i][j]);
        m.symmetric_eigenvalues().min()
    }

    fn check_mesh(&self, mesh: &MeshSpec) -> Result<()> {
        if mesh.d() != self.d() {
            return Err(VmcError::validation(format!(
                "operator is {}-dimensional but mesh has d = {}",
                self.d(),
                mesh.d()
            )));
        }
        Ok(())
    }

    /// Explicit-Euler stability number `dt * 2 * trace(A) / dx^2`; values
    /// above 1 are unstable for the pure-diffusion stencil.
    pub fn cfl_number(&self, mesh: &MeshSpec, dt: f64) -> f64 {
        let trace: f64 = (0..self.d()).map(|i| self.coeff_matrix[i][i]).sum();
        dt * 2.0 * trace / (mesh.dx() * mesh.dx())
    }

    /// Stencil taps relative to the centre point.
    pub fn stencil(&self, mesh: &MeshSpec) -> Vec<Tap> {
        let d = self.d();
        let h2 = mesh.dx() * mesh.dx();
        let a = &self.coeff_matrix;
        let trace: f64 = (0..d).map(|i| a[i][i]).sum();
        let mut taps = vec![Tap {
            moves: vec![],
            weight: -2.0 * trace / h2,
        }];
        for i in 0..d {
            for step in [-1, 1] {
                taps.push(Tap {
                    moves: vec![(i, step)],
                    weight: a[i][i] / h2,
                });
            }
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if a[i][j] == 0.0 {
                    continue;
                }
                let w = 2.0 * a[i][j] / (4.0 * h2);
                for si in [-1, 1] {
                    for sj in [-1, 1] {
                        taps.push(Tap {
                            moves: vec![(i, si), (j, sj)],
                            weight: if si == sj { w } else { -w },
                        });
                    }
                }
            }
        }
        taps
    }

    /// Row `k` of the discretized operator.
    pub fn row(&self, mesh: &MeshSpec, k: usize) -> Result<SparseRow> {
        self.check_mesh(mesh)?;
        if k >= mesh.size() {
            return Err(VmcError::validation(format!(
                "row index {k} out of range [0, {})",
                mesh.size()
            )));
        }
        let stencil = RowStencil::new(self, mesh);
        let mut row = SparseRow::default();
        stencil.row_into(k, &mut row);
        Ok(row)
    }

    /// Dense `(L u)_k = sum_j L_kj u_j`, evaluated row by row.
    pub fn apply(&self, mesh: &MeshSpec, u: &GridFunction) -> Result<GridFunction> {
        self.check_mesh(mesh)?;
        if u.len() != mesh.size() {
            return Err(VmcError::validation(format!(
                "grid function has {} values, mesh has {}",
                u.len(),
                mesh.size()
            )));
        }
        Ok(SparseOperator::assemble(self, mesh)?.apply(u))
    }

    /// Dense matrix, for small meshes only.
    pub fn assemble_dense(&self, mesh: &MeshSpec) -> Result<DMatrix<f64>> {
        self.check_mesh(mesh)?;
        if mesh.n() > 14 {
            return Err(VmcError::TooLarge {
                what: "dense operator assembly",
                n: mesh.n(),
                limit: 14,
            });
        }
        let size = mesh.size();
        let stencil = RowStencil::new(self, mesh);
        let mut out = DMatrix::zeros(size, size);
        let mut row = SparseRow::default();
        for k in 0..size {
            stencil.row_into(k, &mut row);
            for &(c, v) in &row.entries {
                out[(k, c)] = v;
            }
        }
        Ok(out)
    }
}

/// One stencil point: per-axis unit moves and the coefficient it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tap {
    pub moves: Vec<(usize, i32)>,
    pub weight: f64,
}

/// Nonzero `(column, value)` pairs of one operator row, columns ascending
/// and unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
}

impl SparseRow {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }

    pub fn dot(&self, u: &[f64]) -> f64 {
        self.entries.iter().map(|&(c, v)| v * u[c]).sum()
    }
}

/// Precomputed stencil for fast repeated row extraction on one mesh.
#[derive(Debug, Clone)]
pub struct RowStencil {
    mesh: MeshSpec,
    bc: BoundaryKind,
    taps: Vec<Tap>,
}

impl RowStencil {
    pub fn new(op: &OperatorSpec, mesh: &MeshSpec) -> Self {
        Self {
            mesh: mesh.clone(),
            bc: op.bc,
            taps: op.stencil(mesh),
        }
    }

    pub fn mesh(&self) -> &MeshSpec {
        &self.mesh
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    pub fn max_entries(&self) -> usize {
        self.taps.len()
    }

    /// Fills `row` with row `k`; `k` must be in range. Cost is
    /// `O(d^2)` independent of the mesh size.
    pub fn row_into(&self, k: usize, row: &mut SparseRow) {
        let mesh = &self.mesh;
        let w = mesh.bits_per_axis();
        let m = mesh.m() as i64;
        let mask = mesh.m() - 1;
        row.entries.clear();
        'taps: for tap in &self.taps {
            let mut col = k;
            for &(axis, step) in &tap.moves {
                let shift = axis * w;
                let cur = ((k >> shift) & mask) as i64;
                let mut next = cur + step as i64;
                if next < 0 || next >= m {
                    match self.bc {
                        BoundaryKind::Dirichlet => continue 'taps,
                        BoundaryKind::Periodic => next = next.rem_euclid(m),
                    }
                }
                col = (col & !(mask << shift)) | ((next as usize) << shift);
            }
            match row.entries.iter_mut().find(|(c, _)| *c == col) {
                Some(entry) => entry.1 += tap.weight,
                None => row.entries.push((col, tap.weight)),
            }
        }
        row.entries.sort_unstable_by_key(|&(c, _)| c);
    }
}

/// Compressed-row copy of the operator for dense baseline stepping.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseOperator {
    pub fn assemble(op: &OperatorSpec, mesh: &MeshSpec) -> Result<Self> {
        op.check_mesh(mesh)?;
        if mesh.n() > 26 {
            return Err(VmcError::TooLarge {
                what: "sparse operator assembly",
                n: mesh.n(),
                limit: 26,
            });
        }
        let stencil = RowStencil::new(op, mesh);
        let mut offsets = Vec::with_capacity(mesh.size() + 1);
        let mut cols = Vec::with_capacity(mesh.size() * stencil.max_entries());
        let mut vals = Vec::with_capacity(mesh.size() * stencil.max_entries());
        let mut row = SparseRow::default();
        offsets.push(0);
        for k in 0..mesh.size() {
            stencil.row_into(k, &mut row);
            for &(c, v) in &row.entries {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        Ok(Self { offsets, cols, vals })
    }

    pub fn size(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.offsets[k], self.offsets[k + 1]);
            *slot = self.cols[lo..hi]
                .iter()
                .zip(&self.vals[lo..hi])
                .map(|(&c, &v)| v * u[c])
                .sum();
        }
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        let mut out = vec![0.0; self.size()];
        self.apply_into(u.values(), &mut out);
        GridFunction::from_raw(out)
    }
}

/// Boundary data `g(t, x)` evaluated at ghost-layer coordinates.
pub type BoundaryData = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Source term `f(t, k)` entering `du/dt = L u + f`.
#[derive(Clone, Default)]
pub enum SourceFn {
    #[default]
    Zero,
    Dirichlet(Arc<DirichletSource>),
    Custom(Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>),
}

impl fmt::Debug for SourceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "SourceFn::Zero"),
            Self::Dirichlet(_) => write!(f, "SourceFn::Dirichlet"),
            Self::Custom(_) => write!(f, "SourceFn::Custom"),
        }
    }
}

impl SourceFn {
    pub fn eval(&self, t: f64, k: usize) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Dirichlet(src) => src.eval(t, k),
            Self::Custom(f) => f(t, k),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    pub fn to_grid(&self, mesh: &MeshSpec, t: f64) -> GridFunction {
        GridFunction::from_fn(mesh, |k| self.eval(t, k))
    }
}

/// Stencil weight times ghost value, summed over the ghost neighbours of
/// each boundary-layer point.
pub struct DirichletSource {
    mesh: MeshSpec,
    taps: Vec<Tap>,
    g: BoundaryData,
}

impl DirichletSource {
    pub fn eval(&self, t: f64, k: usize) -> f64 {
        if !self.mesh.is_boundary(k) {
            return 0.0;
        }
        let m = self.mesh.m() as i64;
        let mut multi = vec![0usize; self.mesh.d()];
        self.mesh.unravel_into(k, &mut multi);
        let mut target: Vec<i64> = vec![0; multi.len()];
        let mut acc = 0.0;
        for tap in &self.taps {
            target
                .iter_mut()
                .zip(&multi)
                .for_each(|(t, &v)| *t = v as i64);
            for &(axis, step) in &tap.moves {
                target[axis] += step as i64;
            }
            if target.iter().any(|&v| v < 0 || v >= m) {
                let x = self.mesh.coords_of(&target);
                acc += tap.weight * (self.g)(t, &x);
            }
        }
        acc
    }
}

/// Source that imposes Dirichlet data `g` on the ghost layer surrounding
/// the grid, so the grid itself stays strictly inside the boundary. The
/// result is supported on the outermost grid layer.
pub fn dirichlet_source(op: &OperatorSpec, mesh: &MeshSpec, g: BoundaryData) -> Result<SourceFn> {
    op.check_mesh(mesh)?;
    if op.bc() != BoundaryKind::Dirichlet {
        return Err(VmcError::validation(
            "Dirichlet source requested for a periodic operator",
        ));
    }
    Ok(SourceFn::Dirichlet(Arc::new(DirichletSource {
        mesh: mesh.clone(),
        taps: op.stencil(mesh),
        g,
    })))
}
