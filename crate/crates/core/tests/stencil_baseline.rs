use meshvmc::baseline::scaled_bessel_table;
use meshvmc::{bessel_gaussian, euler_run, BoundaryKind, GridFunction, MeshSpec, OperatorSpec, SourceFn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Operator matrix written directly from the difference formulas:
/// `A_ii (u(x+e_i) - 2u + u(x-e_i)) / h^2` per axis and
/// `2 A_ij (u(x+e_i+e_j) - u(x+e_i-e_j) - u(x-e_i+e_j) + u(x-e_i-e_j)) / (4h^2)`
/// per axis pair. Dirichlet drops off-grid points, Periodic wraps them.
fn oracle_matrix(a: &[Vec<f64>], mesh: &MeshSpec, periodic: bool) -> DMatrix<f64> {
    let d = mesh.d();
    let m = mesh.m() as i64;
    let h2 = mesh.dx() * mesh.dx();
    let size = mesh.size();
    let mut out = DMatrix::zeros(size, size);
    let idx = |multi: &[i64]| -> Option<usize> {
        let mut k = 0usize;
        for (axis, &v) in multi.iter().enumerate() {
            let v = if periodic { v.rem_euclid(m) } else { v };
            if v < 0 || v >= m {
                return None;
            }
            k += v as usize * (m as usize).pow(axis as u32);
        }
        Some(k)
    };
    for k in 0..size {
        let x: Vec<i64> = mesh.unravel(k).unwrap().iter().map(|&v| v as i64).collect();
        let mut add = |moves: &[(usize, i64)], w: f64| {
            let mut y = x.clone();
            for &(axis, s) in moves {
                y[axis] += s;
            }
            if let Some(c) = idx(&y) {
                out[(k, c)] += w;
            }
        };
        for i in 0..d {
            add(&[], -2.0 * a[i][i] / h2);
            add(&[(i, 1)], a[i][i] / h2);
            add(&[(i, -1)], a[i][i] / h2);
            for j in (i + 1)..d {
                let w = 2.0 * a[i][j] / (4.0 * h2);
                add(&[(i, 1), (j, 1)], w);
                add(&[(i, -1), (j, -1)], w);
                add(&[(i, 1), (j, -1)], -w);
                add(&[(i, -1), (j, 1)], -w);
            }
        }
    }
    out
}

fn test_operators(d: usize) -> Vec<Vec<Vec<f64>>> {
    let diag: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 0.1 + 0.2 * i as f64 } else { 0.0 }).collect())
        .collect();
    let corr: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 0.5 } else { 0.15 }).collect())
        .collect();
    vec![diag, corr]
}

#[test]
fn rows_match_difference_formulas_exhaustively() {
    for (d, ns) in [(1usize, vec![1usize, 2, 5, 10]), (2, vec![2, 4, 6, 10]), (3, vec![3, 6, 9])] {
        for n in ns {
            let mesh = MeshSpec::cube(d, n, -1.0, 2.0).unwrap();
            for a in test_operators(d) {
                for bc in [BoundaryKind::Dirichlet, BoundaryKind::Periodic] {
                    let op = OperatorSpec::new(a.clone(), bc).unwrap();
                    let oracle = oracle_matrix(&a, &mesh, bc == BoundaryKind::Periodic);
                    let scale = oracle.amax();
                    for k in 0..mesh.size() {
                        let row = op.row(&mesh, k).unwrap();
                        assert!(row.len() <= 2 * d * d + 1);
                        let mut dense_row = vec![0.0; mesh.size()];
                        for &(c, w) in &row.entries {
                            dense_row[c] += w;
                        }
                        for (c, w) in dense_row.iter().enumerate() {
                            assert!(
                                (w - oracle[(k, c)]).abs() <= 1e-12 * scale,
                                "d={d} n={n} {bc:?} row {k} col {c}"
                            );
                        }
                    }
                    let dense = op.assemble_dense(&mesh).unwrap();
                    assert_eq!(dense, dense.transpose(), "d={d} n={n} {bc:?} not symmetric");
                }
            }
        }
    }
}

#[test]
fn interior_rows_of_pure_diffusion_have_two_d_plus_one_entries() {
    let mesh = MeshSpec::cube(3, 9, 0.0, 1.0).unwrap();
    let op = OperatorSpec::diffusion(3, 0.1, BoundaryKind::Dirichlet).unwrap();
    let interior = mesh.ravel(&[3, 4, 2]).unwrap();
    assert_eq!(op.row(&mesh, interior).unwrap().len(), 7);
}

#[test]
fn row_and_dense_application_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (d, n) in [(1, 10), (2, 10), (2, 8)] {
        let mesh = MeshSpec::cube(d, n, 0.0, 1.0).unwrap();
        for a in test_operators(d) {
            for bc in [BoundaryKind::Dirichlet, BoundaryKind::Periodic] {
                let op = OperatorSpec::new(a.clone(), bc).unwrap();
                let u = GridFunction::from_fn(&mesh, |_| rng.gen::<f64>() - 0.5);
                let rowwise = op.apply(&mesh, &u).unwrap();
                let dense = op.assemble_dense(&mesh).unwrap()
                    * nalgebra::DVector::from_column_slice(u.values());
                let scale = dense.amax();
                for (x, y) in rowwise.values().iter().zip(dense.iter()) {
                    assert!((x - y).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}

#[test]
fn periodic_rows_sum_to_zero() {
    for (d, n) in [(1, 6), (2, 8), (3, 9), (2, 2)] {
        let mesh = MeshSpec::cube(d, n, 0.0, 1.0).unwrap();
        for a in test_operators(d) {
            let op = OperatorSpec::new(a, BoundaryKind::Periodic).unwrap();
            for k in 0..mesh.size() {
                let row = op.row(&mesh, k).unwrap();
                let scale: f64 = row.entries.iter().map(|e| e.1.abs()).sum();
                assert!(row.sum().abs() <= 1e-13 * scale, "d={d} n={n} row {k}");
            }
        }
    }
}

#[test]
fn periodic_euler_conserves_mass() {
    let mesh = MeshSpec::new(2, 8, vec![[-8.0, 8.0], [-8.0, 8.0]]).unwrap();
    let op = OperatorSpec::new(vec![vec![0.1, 0.03], vec![0.03, 0.1]], BoundaryKind::Periodic).unwrap();
    let u0 = bessel_gaussian(&mesh, 3.0, true).unwrap();
    let run = euler_run(&u0, &op, &mesh, &SourceFn::Zero, 5e-5, 20_000, 5_000, 0.0).unwrap();
    let m0 = u0.sum();
    for (_, u) in &run.snapshots {
        assert!((u.sum() - m0).abs() <= 1e-10 * m0);
    }
}

#[test]
fn homogeneous_dirichlet_norm_never_grows() {
    let mesh = MeshSpec::new(2, 8, vec![[-8.0, 8.0], [-8.0, 8.0]]).unwrap();
    let op = OperatorSpec::diffusion(2, 0.1, BoundaryKind::Dirichlet).unwrap();
    let u0 = bessel_gaussian(&mesh, 3.0, true).unwrap();
    let run = euler_run(&u0, &op, &mesh, &SourceFn::Zero, 5e-5, 20_000, 500, 0.0).unwrap();
    for w in run.snapshots.windows(2) {
        assert!(w[1].1.norm() <= w[0].1.norm(), "norm grew at t = {}", w[1].0);
    }
    assert!(run.snapshots.last().unwrap().1.norm() < u0.norm());
}

/// On the infinite lattice `e^{-t} I_x(t)` solves `du/dt = (u(x+1) - 2u + u(x-1)) / 2`
/// from a point mass, so the Gaussian at width `t0` evolved for time `s`
/// under `A = 1/2`, `dx = 1` is the Gaussian at width `t0 + s`.
#[test]
fn bessel_gaussian_is_the_lattice_heat_kernel() {
    let mesh = MeshSpec::new(1, 7, vec![[-64.0, 64.0]]).unwrap();
    let op = OperatorSpec::diffusion(1, 0.5, BoundaryKind::Dirichlet).unwrap();
    let u0 = bessel_gaussian(&mesh, 2.0, true).unwrap();
    let exact = bessel_gaussian(&mesh, 3.0, true).unwrap();
    let coarse = |steps: usize| {
        let run = euler_run(&u0, &op, &mesh, &SourceFn::Zero, 1.0 / steps as f64, steps, steps, 0.0).unwrap();
        run.snapshots.last().unwrap().1.distance(&exact) / exact.norm()
    };
    let (e1, e2) = (coarse(200), coarse(400));
    assert!(e1 < 5e-3 && e2 < e1 / 1.8, "{e1} {e2}");
}

#[test]
fn euler_converges_to_continuum_heat_kernel_under_refinement() {
    // u_t = D u_xx from a Gaussian of variance s0 on [-L, L]; at time T the
    // exact solution is a Gaussian of variance s0 + 2 D T (boundary effects
    // are far below the discretization error).
    let (d_coef, s0, t_end, half) = (0.1, 0.2, 0.25, 4.0);
    let gauss = |x: f64, var: f64| (-(x * x) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
    let mut errs = Vec::new();
    for n in [6, 7, 8] {
        let mesh = MeshSpec::new(1, n, vec![[-half, half]]).unwrap();
        let op = OperatorSpec::diffusion(1, d_coef, BoundaryKind::Dirichlet).unwrap();
        let x = |k: usize| mesh.to_coords(k).unwrap()[0];
        let u0 = GridFunction::from_fn(&mesh, |k| gauss(x(k), s0));
        let exact = GridFunction::from_fn(&mesh, |k| gauss(x(k), s0 + 2.0 * d_coef * t_end));
        // dt proportional to dx^2 keeps the time error second order in dx.
        let steps = 40 * (1usize << (2 * (n - 6)));
        let run = euler_run(&u0, &op, &mesh, &SourceFn::Zero, t_end / steps as f64, steps, steps, 0.0).unwrap();
        errs.push(run.snapshots.last().unwrap().1.distance(&exact) / exact.norm());
    }
    for w in errs.windows(2) {
        assert!(w[0] / w[1] >= 3.0, "refinement ratio {} ({errs:?})", w[0] / w[1]);
    }
}

#[test]
fn gaussian_grid_sum_bounds() {
    let mesh = MeshSpec::new(1, 4, vec![[-8.0, 8.0]]).unwrap();
    let total = bessel_gaussian(&mesh, 3.0, true).unwrap().sum();
    assert!((0.999..=1.0).contains(&total), "{total}");
    let table = scaled_bessel_table(60, 3.0).unwrap();
    let full = table[0] + 2.0 * table[1..].iter().sum::<f64>();
    assert!((full - 1.0).abs() < 1e-14);
}
