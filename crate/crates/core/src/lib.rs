//! Mesh-based variational Monte Carlo for linear parabolic PDEs.
//!
//! The solution `u(t, x)` on a `2^n`-point hypercube mesh is represented as
//! `alpha * psi_beta(x)`, where `psi_beta` is a normalized masked
//! autoregressive network over the `n`-bit encoding of mesh points. The
//! parameters are evolved by projecting `du/dt = L u + f` onto the tangent
//! space of the ansatz, with all inner products estimated by sampling from
//! `psi^2`.

pub mod ansatz;
pub mod baseline;
pub mod blackscholes;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod mesh;
pub mod operator;
pub mod pretrain;

pub use ansatz::{Ansatz, AnsatzState, Checkpoint, NetworkSpec};
pub use baseline::{bessel_gaussian, euler_run, BaselineRun};
pub use blackscholes::{OptionKind, OptionSpec, ReductionCoeffs};
pub use error::{Result, VmcError};
pub use evolution::{evolve, relative_error, solve_direction, EvolutionConfig, Trajectory};
pub use geometry::{estimate_mv, exact_mv, GeometryEstimate, SampleBatch};
pub use mesh::{BoundaryKind, GridFunction, GridIndex, MeshSpec};
pub use operator::{dirichlet_source, OperatorSpec, SourceFn, SparseOperator, SparseRow};
pub use pretrain::PretrainConfig;
