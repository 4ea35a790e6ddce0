//! Fixtures shared by the benchmarks.

use meshvmc::{bessel_gaussian, Ansatz, BoundaryKind, GridFunction, MeshSpec, NetworkSpec, OperatorSpec};

/// 2D Dirichlet diffusion on `2^n` points, unit spacing, with the
/// discrete Gaussian start and a freshly initialized `[64, 64]` ansatz.
pub struct Fixture {
    pub mesh: MeshSpec,
    pub op: OperatorSpec,
    pub u0: GridFunction,
    pub ansatz: Ansatz,
}

pub fn diffusion_2d(n: usize) -> Fixture {
    assert!(n >= 2 && n.is_multiple_of(2), "n must be even and at least 2");
    let half = (1usize << (n / 2)) as f64 / 2.0;
    let mesh = MeshSpec::new(2, n, vec![[-half, half]; 2]).expect("mesh");
    let op = OperatorSpec::diffusion(2, 0.1, BoundaryKind::Dirichlet).expect("operator");
    let u0 = bessel_gaussian(&mesh, 3.0, true).expect("initial condition");
    let ansatz = Ansatz::new(NetworkSpec::new(n, vec![64, 64]), 0).expect("ansatz");
    Fixture { mesh, op, u0, ansatz }
}
