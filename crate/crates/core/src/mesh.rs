//! Hypercube mesh with `2^n` points and its encoding as `n`-bit strings.
//!
//! A linear index `k` in `[0, 2^n)` has little-endian bits
//! `k = sum_i bits[i] * 2^i`, and unravels into a `d`-tuple of per-axis
//! indices in base `m = 2^(n/d)`, least significant axis first. Axis `i`
//! therefore owns bits `i*(n/d) .. (i+1)*(n/d)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};

/// Largest qubit count the engine accepts at all. Dense work has its own,
/// much smaller limit.
pub const MAX_QUBITS: usize = 48;

/// Boundary handling for the stencil and neighbour lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Periodic,
}

#[derive(Debug, Clone, Deserialize)]
struct RawMesh {
    d: usize,
    n: usize,
    bounds: Vec<[f64; 2]>,
}

/// Digitization of `[a_1,b_1] x ... x [a_d,b_d]` into `2^n` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMesh")]
pub struct MeshSpec {
    d: usize,
    n: usize,
    bounds: Vec<[f64; 2]>,
}

impl TryFrom<RawMesh> for MeshSpec {
    type Error = VmcError;

    fn try_from(raw: RawMesh) -> Result<Self> {
        MeshSpec::new(raw.d, raw.n, raw.bounds)
    }
}

impl MeshSpec {
    pub fn new(d: usize, n: usize, bounds: Vec<[f64; 2]>) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(VmcError::validation(format!(
                "mesh needs d >= 1 and n >= 1 (got d = {d}, n = {n})"
            )));
        }
        if !n.is_multiple_of(d) {
            return Err(VmcError::validation(format!(
                "qubit count n = {n} is not divisible by dimension d = {d}"
            )));
        }
        if n > MAX_QUBITS {
            return Err(VmcError::validation(format!(
                "n = {n} exceeds the supported maximum of {MAX_QUBITS}"
            )));
        }
        if bounds.len() != d {
            return Err(VmcError::validation(format!(
                "expected {d} axis bounds, got {}",
                bounds.len()
            )));
        }
        let len0 = (bounds[0][1] - bounds[0][0]).abs();
        for (i, [a, b]) in bounds.iter().enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(VmcError::validation(format!("axis {i} bounds are not finite")));
            }
            if b <= a {
                return Err(VmcError::validation(format!(
                    "axis {i} has empty interval [{a}, {b}]"
                )));
            }
            let len = b - a;
            if (len - len0).abs() > 1e-12 * len0.max(1.0) {
                return Err(VmcError::validation(format!(
                    "axis {i} has length {len} but axis 0 has length {len0}; the mesh must be a hypercube"
                )));
            }
        }
        Ok(Self { d, n, bounds })
    }

    /// Same interval on every axis.
    pub fn cube(d: usize, n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(d, n, vec![[lo, hi]; d])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    /// Bits per axis, `n / d`.
    pub fn bits_per_axis(&self) -> usize {
        self.n / self.d
    }

    /// Points per axis, `2^(n/d)`.
    pub fn m(&self) -> usize {
        1usize << self.bits_per_axis()
    }

    /// Total number of grid points, `2^n`.
    pub fn size(&self) -> usize {
        1usize << self.n
    }

    pub fn dx(&self) -> f64 {
        (self.bounds[0][1] - self.bounds[0][0]).abs() / self.m() as f64
    }

    fn check_linear(&self, linear: usize) -> Result<()> {
        if linear >= self.size() {
            return Err(VmcError::validation(format!(
                "linear index {linear} out of range [0, {}) for n = {}",
                self.size(),
                self.n
            )));
        }
        Ok(())
    }

    /// Base-`m` digit expansion of `linear`, least significant digit first.
    pub fn unravel(&self, linear: usize) -> Result<Vec<usize>> {
        self.check_linear(linear)?;
        let mut multi = vec![0; self.d];
        self.unravel_into(linear, &mut multi);
        Ok(multi)
    }

    /// Unchecked unravel into a caller-provided buffer.
    pub(crate) fn unravel_into(&self, linear: usize, multi: &mut [usize]) {
        let w = self.bits_per_axis();
        let mask = self.m() - 1;
        for (i, slot) in multi.iter_mut().enumerate() {
            *slot = (linear >> (i * w)) & mask;
        }
    }

    pub fn ravel(&self, multi: &[usize]) -> Result<usize> {
        if multi.len() != self.d {
            return Err(VmcError::validation(format!(
                "multi-index has {} components, mesh has d = {}",
                multi.len(),
                self.d
            )));
        }
        let m = self.m();
        if let Some((i, &v)) = multi.iter().enumerate().find(|(_, &v)| v >= m) {
            return Err(VmcError::validation(format!(
                "multi-index component {i} = {v} outside [0, {m})"
            )));
        }
        Ok(self.ravel_unchecked(multi))
    }

    pub(crate) fn ravel_unchecked(&self, multi: &[usize]) -> usize {
        let w = self.bits_per_axis();
        multi
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &v)| acc | (v << (i * w)))
    }

    /// Little-endian bit string of `linear`.
    pub fn bits(&self, linear: usize) -> Result<Vec<u8>> {
        self.check_linear(linear)?;
        Ok(index_to_bits(linear, self.n))
    }

    pub fn from_bits(&self, bits: &[u8]) -> Result<usize> {
        if bits.len() != self.n {
            return Err(VmcError::validation(format!(
                "bit string has length {}, mesh has n = {}",
                bits.len(),
                self.n
            )));
        }
        bits_to_index(bits)
    }

    /// Physical coordinates `a_i + multi_i * dx` of a grid point.
    pub fn to_coords(&self, linear: usize) -> Result<Vec<f64>> {
        let multi = self.unravel(linear)?;
        Ok(self.coords_of(&multi.iter().map(|&v| v as i64).collect::<Vec<_>>()))
    }

    /// Coordinates of a (possibly off-grid) signed multi-index. Used for the
    /// ghost layer one step outside the grid.
    pub fn coords_of(&self, multi: &[i64]) -> Vec<f64> {
        let dx = self.dx();
        multi
            .iter()
            .zip(&self.bounds)
            .map(|(&k, [a, _])| a + k as f64 * dx)
            .collect()
    }

    /// Neighbour of `multi` one step along `axis` (0-based). Dirichlet
    /// returns `None` when stepping off the grid; periodic wraps.
    pub fn neighbor(
        &self,
        multi: &[usize],
        axis: usize,
        step: i32,
        bc: BoundaryKind,
    ) -> Option<Vec<usize>> {
        debug_assert!(step == 1 || step == -1);
        let m = self.m() as i64;
        let mut out = multi.to_vec();
        let moved = multi[axis] as i64 + step as i64;
        match bc {
            BoundaryKind::Dirichlet if moved < 0 || moved >= m => return None,
            BoundaryKind::Dirichlet => out[axis] = moved as usize,
            BoundaryKind::Periodic => out[axis] = moved.rem_euclid(m) as usize,
        }
        Some(out)
    }

    /// True when any coordinate of the point sits on the outermost layer.
    pub fn is_boundary(&self, linear: usize) -> bool {
        let w = self.bits_per_axis();
        let mask = self.m() - 1;
        (0..self.d).any(|i| {
            let v = (linear >> (i * w)) & mask;
            v == 0 || v == mask
        })
    }
}

/// All three views of one grid point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridIndex {
    pub linear: usize,
    pub bits: Vec<u8>,
    pub multi: Vec<usize>,
}

impl GridIndex {
    pub fn new(mesh: &MeshSpec, linear: usize) -> Result<Self> {
        Ok(Self {
            linear,
            bits: mesh.bits(linear)?,
            multi: mesh.unravel(linear)?,
        })
    }
}

pub fn index_to_bits(linear: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((linear >> i) & 1) as u8).collect()
}

pub fn bits_to_index(bits: &[u8]) -> Result<usize> {
    bits.iter().enumerate().try_fold(0usize, |acc, (i, &b)| match b {
        0 => Ok(acc),
        1 => Ok(acc | (1 << i)),
        other => Err(VmcError::validation(format!(
            "bit {i} has non-binary value {other}"
        ))),
    })
}

/// Dense field over all `2^n` mesh points, indexed by linear index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(mesh: &MeshSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.size() {
            return Err(VmcError::validation(format!(
                "grid function has {} values, mesh has {}",
                values.len(),
                mesh.size()
            )));
        }
        Ok(Self { values })
    }

    /// Caller guarantees the length matches the mesh.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(mesh: &MeshSpec) -> Self {
        Self {
            values: vec![0.0; mesh.size()],
        }
    }

    pub fn from_fn(mesh: &MeshSpec, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            values: (0..mesh.size()).map(f).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Euclidean distance to another grid function of the same length.
    pub fn distance(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
