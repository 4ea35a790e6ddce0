//! Runtime property checks, each against an independent oracle (dense
//! matrices, enumeration, finite differences, closed forms).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use meshvmc::blackscholes::{analytic_call, invert_transform, mc_price, price_grid, reduction_coeffs, to_heat};
use meshvmc::geometry::{LinearAnsatz, TangentModel};
use meshvmc::mesh::index_to_bits;
use meshvmc::operator::RowStencil;
use meshvmc::{
    dirichlet_source, estimate_mv, euler_run, exact_mv, solve_direction, Ansatz, AnsatzState,
    BoundaryKind, MeshSpec, NetworkSpec, OperatorSpec, OptionKind, OptionSpec, SourceFn,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn record(id: &str, name: &str, f: impl FnOnce() -> Check) -> PropertyResult {
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    PropertyResult {
        id: id.into(),
        name: name.into(),
        passed,
        detail,
    }
}

macro_rules! tryc {
    ($e:expr) => {
        $e.map_err(|e| e.to_string())?
    };
}

/// Properties a-h. `i` (determinism) needs the command layer; see
/// [`determinism`].
pub fn run_numeric() -> Vec<PropertyResult> {
    vec![
        record("a", "normalization", normalization),
        record("b", "score vs finite differences", score_fd),
        record("c", "sampled geometry vs exact", sampled_geometry),
        record("d", "exact metric structure", metric_structure),
        record("e", "FEM equivalence", fem_equivalence),
        record("f", "projected step consistency", projection_order),
        record("g", "stencil and Euler", stencil),
        record("h", "Black-Scholes oracles", black_scholes),
    ]
}

fn random_ansatz(n: usize, hidden: Vec<usize>, seed: u64, scale: f64) -> Result<Ansatz, String> {
    let mut a = tryc!(Ansatz::new(NetworkSpec::new(n, hidden), seed));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for b in &mut a.state.beta {
        *b += scale * (rng.gen::<f64>() * 2.0 - 1.0);
    }
    a.state.log_alpha = 0.3;
    Ok(a)
}

fn normalization() -> Check {
    let mut worst = 0.0f64;
    for n in [1, 4, 8, 12] {
        for draw in 0..10 {
            let a = random_ansatz(n, vec![8, 8], 97 * n as u64 + draw, 1.5)?;
            let total: f64 = tryc!(a.psi_all()).iter().map(|p| p * p).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max |sum psi^2 - 1| = {worst:.2e}"))
}

fn score_fd() -> Check {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for draw in 0..2 {
        let a = random_ansatz(6, vec![10, 10], 7 + draw, 1.0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        for _ in 0..3 {
            let bits = index_to_bits(rng.gen_range(0..64), 6);
            let score = tryc!(a.score(&bits));
            for _ in 0..15 {
                let j = rng.gen_range(0..a.num_params());
                let shifted = |delta: f64| -> Result<f64, String> {
                    let mut beta = a.state.beta.clone();
                    beta[j] += delta;
                    let b = tryc!(Ansatz::with_state(a.spec().clone(), AnsatzState { log_alpha: 0.0, beta }));
                    Ok(tryc!(b.psi(&bits)).ln())
                };
                let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
                worst = worst.max((fd - score[j]).abs() / score[j].abs().max(1e-3));
            }
        }
    }
    ensure(worst <= 1e-5, format!("max relative gap {worst:.2e}"))
}

/// 2D correlated Dirichlet problem with non-trivial boundary data.
fn correlated_problem(n: usize) -> Result<(MeshSpec, OperatorSpec, SourceFn), String> {
    let mesh = tryc!(MeshSpec::cube(2, n, -1.0, 1.0));
    let op = tryc!(OperatorSpec::new(vec![vec![0.5, 0.1], vec![0.1, 0.3]], BoundaryKind::Dirichlet));
    let g = Arc::new(|t: f64, x: &[f64]| 0.2 + 0.1 * x[0] - 0.05 * x[1] * x[1] + 0.1 * t);
    let src = tryc!(dirichlet_source(&op, &mesh, g));
    Ok((mesh, op, src))
}

/// Enumerated mean and variance of the per-draw contributions to `M` and `V`.
fn enumerated_moments(
    a: &Ansatz,
    mesh: &MeshSpec,
    op: &OperatorSpec,
    src: &SourceFn,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>), String> {
    let dense = tryc!(op.assemble_dense(mesh));
    let psi = DVector::from_vec(tryc!(a.psi_all()));
    let lpsi = &dense * &psi;
    let alpha = a.alpha();
    let a2 = alpha * alpha;
    let dim = a.num_params() + 1;
    let (mut m1, mut m2) = (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim));
    let (mut v1, mut v2) = (DVector::zeros(dim), DVector::zeros(dim));
    for k in 0..mesh.size() {
        let mut s = vec![1.0];
        s.extend(tryc!(a.score(&tryc!(mesh.bits(k)))));
        let l = lpsi[k] / psi[k] + src.eval(t, k) / (alpha * psi[k]);
        let r = psi[k] * psi[k];
        for i in 0..dim {
            for j in 0..dim {
                let x = a2 * s[i] * s[j];
                m1[(i, j)] += r * x;
                m2[(i, j)] += r * x * x;
            }
            let y = a2 * s[i] * l;
            v1[i] += r * y;
            v2[i] += r * y * y;
        }
    }
    let m_var = m2 - m1.component_mul(&m1);
    let v_var = v2 - v1.component_mul(&v1);
    Ok((m1, m_var, v1, v_var))
}

fn sampled_geometry() -> Check {
    let (mesh, op, src) = correlated_problem(6)?;
    let a = random_ansatz(6, vec![7], 11, 0.8)?;
    let (m1, m_var, v1, v_var) = enumerated_moments(&a, &mesh, &op, &src, 0.2)?;
    let stencil = RowStencil::new(&op, &mesh);
    let b = 100_000u64;
    let est = tryc!(estimate_mv(&a, &stencil, &src, 0.2, &tryc!(a.sample(b, 77))));
    let (m, v) = (est.m(), est.v());
    let z = |x: f64, mean: f64, var: f64| {
        (x - mean).abs() / ((var.max(0.0) / b as f64).sqrt() + 1e-12 * mean.abs().max(1.0))
    };
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max(z(m[(i, j)], m1[(i, j)], m_var[(i, j)]));
        }
        worst = worst.max(z(v[i], v1[i], v_var[i]));
    }

    let exact = tryc!(exact_mv(&a, &op, &mesh, &src, 0.0)).m();
    let mut pts = Vec::new();
    for b in [100u64, 1_000, 10_000, 100_000] {
        let seeds = 8;
        let mut mse = 0.0;
        for s in 0..seeds {
            let batch = tryc!(a.sample(b, 1_000 * b + s));
            let m = tryc!(estimate_mv(&a, &stencil, &src, 0.0, &batch)).m();
            mse += (m - &exact).norm_squared() / seeds as f64;
        }
        pts.push(((b as f64).ln(), 0.5 * mse.ln()));
    }
    let slope = fit_slope(&pts);
    ensure(
        worst <= 5.0 && (slope + 0.5).abs() <= 0.15,
        format!("max |z| = {worst:.2} at B = 1e5, error slope in B = {slope:.3}"),
    )
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}

fn metric_structure() -> Check {
    let (mut off, mut neg) = (0.0f64, 0.0f64);
    for (n, seed) in [(4usize, 1u64), (7, 2), (10, 3)] {
        let a = random_ansatz(n, vec![6], seed, 0.8)?;
        let mesh = tryc!(MeshSpec::cube(1, n, 0.0, 1.0));
        let op = tryc!(OperatorSpec::diffusion(1, 0.1, BoundaryKind::Periodic));
        let m = tryc!(exact_mv(&a, &op, &mesh, &SourceFn::Zero, 0.0)).m();
        for j in 1..m.ncols() {
            off = off.max(m[(0, j)].abs());
        }
        neg = neg.max(-m.symmetric_eigenvalues().min());
    }
    ensure(
        off <= 1e-10 && neg <= 1e-10,
        format!("max |M[0,j]| = {off:.2e}, most negative eigenvalue {:.2e}", -neg),
    )
}

fn fem_equivalence() -> Check {
    let mesh = tryc!(MeshSpec::cube(1, 5, 0.0, 1.0));
    let op = tryc!(OperatorSpec::diffusion(1, 0.05, BoundaryKind::Dirichlet));
    let src = tryc!(dirichlet_source(&op, &mesh, Arc::new(|t: f64, x: &[f64]| 1.0 + x[0] + t)));
    let centres = [0usize, 5, 10, 15, 20, 25, 31];
    let phi = DMatrix::from_fn(mesh.size(), centres.len(), |k, j| {
        (1.0 - (k as f64 - centres[j] as f64).abs() / 5.0).max(0.0)
    });
    let theta = DVector::from_vec(vec![0.3, -0.2, 0.9, 0.4, -0.7, 0.1, 0.5]);
    let model = tryc!(LinearAnsatz::new(&mesh, phi.clone(), theta.clone()));
    let t = 0.3;
    let l = tryc!(op.assemble_dense(&mesh));
    let f = DVector::from_vec(src.to_grid(&mesh, t).into_values());
    let mass = phi.transpose() * &phi;
    let stiffness = -(phi.transpose() * &l * &phi);
    let rhs = -(&stiffness * &theta) + phi.transpose() * &f;
    let est = tryc!(exact_mv(&model, &op, &mesh, &src, t));
    let gm = (est.m() - &mass).amax() / mass.amax();
    let gv = (est.v() - &rhs).amax() / rhs.amax().max(1.0);
    let dt = 1e-3;
    let fem = mass.lu().solve(&(rhs * dt)).ok_or("singular mass matrix")?;
    let step = tryc!(solve_direction(&est, dt, 1e-12));
    let gs = step.delta.iter().zip(fem.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(
        gm <= 1e-10 && gv <= 1e-10 && gs <= 1e-8,
        format!("mass/rhs gaps {gm:.1e}/{gv:.1e}, step gap {gs:.1e}"),
    )
}

fn values_at(a: &Ansatz, theta: &[f64], mesh: &MeshSpec) -> Result<DVector<f64>, String> {
    let mut moved = a.clone();
    moved.state = AnsatzState::from_theta(theta);
    Ok(DVector::from_vec(tryc!(moved.amplitudes(mesh)).into_values()))
}

/// Gauss-Newton minimizer of `|target - u(theta)|`, started at the current
/// parameters; flat directions (singular values below 1e-7) are left alone.
fn brute_projection(a: &Ansatz, mesh: &MeshSpec, target: &DVector<f64>) -> Result<DVector<f64>, String> {
    let mut theta = a.state.to_theta();
    let mut moved = a.clone();
    for _ in 0..100 {
        moved.state = AnsatzState::from_theta(&theta);
        let size = target.len();
        let mut jac = DMatrix::zeros(size, theta.len());
        let mut resid = DVector::zeros(size);
        for k in 0..size {
            let (u, tangent) = tryc!(moved.value_and_tangent(k));
            resid[k] = target[k] - u;
            for (j, v) in tangent.iter().enumerate() {
                jac[(k, j)] = *v;
            }
        }
        let update = jac.svd(true, true).solve(&resid, 1e-7)?;
        theta.iter_mut().zip(update.iter()).for_each(|(t, u)| *t += u);
        if update.norm() <= 1e-15 {
            break;
        }
    }
    values_at(a, &theta, mesh)
}

fn projection_order() -> Check {
    let mesh = tryc!(MeshSpec::cube(1, 4, 0.0, 1.0));
    let op = tryc!(OperatorSpec::diffusion(1, 0.01, BoundaryKind::Dirichlet));
    let src = tryc!(dirichlet_source(&op, &mesh, Arc::new(|_t: f64, x: &[f64]| 0.5 + x[0])));
    let a = random_ansatz(4, vec![1], 8, 0.8)?;
    let est = tryc!(exact_mv(&a, &op, &mesh, &src, 0.0));
    let u = DVector::from_vec(tryc!(a.amplitudes(&mesh)).into_values());
    let force = tryc!(op.assemble_dense(&mesh)) * &u + DVector::from_vec(src.to_grid(&mesh, 0.0).into_values());
    let theta = a.state.to_theta();
    let mut gaps = Vec::new();
    for dt in [1e-2, 5e-3, 2.5e-3, 1.25e-3] {
        let dir = tryc!(solve_direction(&est, dt, 1e-12));
        let stepped: Vec<f64> = theta.iter().zip(&dir.delta).map(|(t, d)| t + d).collect();
        let linear = values_at(&a, &stepped, &mesh)?;
        let brute = brute_projection(&a, &mesh, &(&u + &force * dt))?;
        gaps.push((brute - linear).norm());
    }
    let order = gaps.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    ensure(order >= 1.9, format!("minimum observed order {order:.3}"))
}

/// Dense operator written straight from the difference formulas.
fn oracle_matrix(a: &[Vec<f64>], mesh: &MeshSpec, periodic: bool) -> Result<DMatrix<f64>, String> {
    let d = mesh.d();
    let m = mesh.m() as i64;
    let h2 = mesh.dx() * mesh.dx();
    let mut out = DMatrix::zeros(mesh.size(), mesh.size());
    for k in 0..mesh.size() {
        let x: Vec<i64> = tryc!(mesh.unravel(k)).iter().map(|&v| v as i64).collect();
        let mut add = |moves: &[(usize, i64)], w: f64| {
            let mut c = 0usize;
            for axis in 0..d {
                let mut v = x[axis] + moves.iter().filter(|mv| mv.0 == axis).map(|mv| mv.1).sum::<i64>();
                if periodic {
                    v = v.rem_euclid(m);
                } else if v < 0 || v >= m {
                    return;
                }
                c += v as usize * (m as usize).pow(axis as u32);
            }
            out[(k, c)] += w;
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
    Ok(out)
}

fn stencil() -> Check {
    let mut row_gap = 0.0f64;
    let mut row_sum = 0.0f64;
    for (d, ns) in [(1usize, vec![2usize, 6, 10]), (2, vec![4, 10]), (3, vec![6, 9])] {
        let corr: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 0.5 } else { 0.15 }).collect()).collect();
        for n in ns {
            let mesh = tryc!(MeshSpec::cube(d, n, -1.0, 2.0));
            for bc in [BoundaryKind::Dirichlet, BoundaryKind::Periodic] {
                let periodic = bc == BoundaryKind::Periodic;
                let op = tryc!(OperatorSpec::new(corr.clone(), bc));
                let oracle = oracle_matrix(&corr, &mesh, periodic)?;
                let scale = oracle.amax();
                for k in 0..mesh.size() {
                    let row = tryc!(op.row(&mesh, k));
                    let mut dense_row = vec![0.0; mesh.size()];
                    for &(c, w) in &row.entries {
                        dense_row[c] += w;
                    }
                    for (c, w) in dense_row.iter().enumerate() {
                        row_gap = row_gap.max((w - oracle[(k, c)]).abs() / scale);
                    }
                    if periodic {
                        row_sum = row_sum.max(row.sum().abs() / scale);
                    }
                }
            }
        }
    }
    let mesh = tryc!(MeshSpec::new(2, 8, vec![[-8.0, 8.0], [-8.0, 8.0]]));
    let op = tryc!(OperatorSpec::new(vec![vec![0.1, 0.03], vec![0.03, 0.1]], BoundaryKind::Periodic));
    let u0 = tryc!(meshvmc::bessel_gaussian(&mesh, 3.0, true));
    let run = tryc!(euler_run(&u0, &op, &mesh, &SourceFn::Zero, 5e-5, 20_000, 20_000, 0.0));
    let m0 = u0.sum();
    let drift = run.snapshots.iter().map(|(_, u)| (u.sum() - m0).abs() / m0).fold(0.0, f64::max);
    ensure(
        row_gap <= 1e-12 && row_sum <= 1e-13 && drift <= 1e-10,
        format!("row gap {row_gap:.1e}, periodic row sum {row_sum:.1e}, mass drift {drift:.1e}"),
    )
}

fn black_scholes() -> Check {
    let spec = tryc!(OptionSpec::call(1.25, 0.03, 0.3, 1.0));
    let coeffs = tryc!(reduction_coeffs(&spec));
    let heat = tryc!(to_heat(&spec, &coeffs, 12));
    let dx = heat.mesh.dx();
    let steps = (spec.expiry / (0.5 * dx * dx)).ceil() as usize;
    let run = tryc!(euler_run(&heat.u0, &heat.op, &heat.mesh, &heat.source, spec.expiry / steps as f64, steps, steps, 0.0));
    let v = tryc!(invert_transform(&run.snapshots[run.snapshots.len() - 1].1, &coeffs, &spec, &heat.mesh, spec.expiry));
    let s = tryc!(price_grid(&spec, &heat.mesh));
    let (mut num, mut den) = (0.0, 0.0);
    for (x, si) in v.values().iter().zip(&s) {
        let exact = analytic_call(1.25, 0.03, 0.3, 1.0, si[0]);
        num += (x - exact).powi(2);
        den += exact * exact;
    }
    let euler_err = (num / den).sqrt();

    let (mc, se) = tryc!(mc_price(&spec, &[1.25], 1_000_000, 3));
    let z = (mc - analytic_call(1.25, 0.03, 0.3, 1.0, 1.25)).abs() / se;

    let (a, b) = (coeffs.a[0], coeffs.b);
    let coeff_ok = (a - 0.166667).abs() <= 5e-7 && (b + 0.031250).abs() <= 5e-7;

    let basket = tryc!(OptionSpec::new(
        OptionKind::BasketCall,
        1.0,
        0.03,
        vec![0.3, 0.3],
        vec![vec![1.0, 0.1], vec![0.1, 1.0]],
        vec![0.5, 0.5],
        1.0,
    ));
    let mut curve = Vec::new();
    for i in 0..6 {
        curve.push(tryc!(mc_price(&tryc!(basket.with_strike(1.0 + 0.1 * i as f64)), &[1.25, 1.25], 200_000, 17)));
    }
    let convex = curve.windows(3).all(|w| {
        let se = w.iter().map(|p| p.1).fold(0.0, f64::max);
        w[0].0 - 2.0 * w[1].0 + w[2].0 >= -2.0 * se
    });
    ensure(
        euler_err <= 0.005 && z <= 3.0 && coeff_ok && convex,
        format!(
            "Euler n=12 error {euler_err:.2e}, MC |z| = {z:.2}, a = {a:.6}, b = {b:.6}, basket convex {convex}"
        ),
    )
}

/// Files under `dir`, relative and sorted, minus wall-clock outputs.
fn tree(dir: &Path) -> std::io::Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for entry in fs::read_dir(&p)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "ablation_timing.csv") {
                let rel = path.strip_prefix(dir).expect("under dir").to_path_buf();
                out.push((rel, fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Whether two run directories hold the same files with the same bytes.
pub fn identical_trees(a: &Path, b: &Path) -> Check {
    let (ta, tb) = (tryc!(tree(a)), tryc!(tree(b)));
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    if names(&ta) != names(&tb) {
        return Err(format!("file sets differ: {:?} vs {:?}", names(&ta), names(&tb)));
    }
    match ta.iter().zip(&tb).find(|(x, y)| x.1 != y.1) {
        Some((x, _)) => Err(format!("{} differs", x.0.display())),
        None => Ok(format!("{} files identical", ta.len())),
    }
}

/// Runs `exec(dir)` twice per command into fresh directories under `root`
/// and compares the trees byte for byte.
pub fn determinism<F>(root: &Path, commands: &[&str], mut exec: F) -> PropertyResult
where
    F: FnMut(&str, &Path) -> crate::error::Result<()>,
{
    record("i", "determinism", || {
        let mut notes = Vec::new();
        for cmd in commands {
            let (a, b) = (root.join(format!("{cmd}-a")), root.join(format!("{cmd}-b")));
            for dir in [&a, &b] {
                if dir.exists() {
                    tryc!(fs::remove_dir_all(dir));
                }
                exec(cmd, dir).map_err(|e| format!("{cmd}: {e}"))?;
            }
            notes.push(format!("{cmd}: {}", identical_trees(&a, &b).map_err(|e| format!("{cmd}: {e}"))?));
        }
        Ok(notes.join("; "))
    })
}
