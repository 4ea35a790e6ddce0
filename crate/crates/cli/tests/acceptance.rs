//! Acceptance suite: one PASS/FAIL line per criterion. Runs the desk-scale
//! presets, so it takes a while; set `ACCEPTANCE_ONLY=1,6` to run a subset.

use std::path::Path;
use std::time::Instant;

use meshvmc::evolution::MAX_DENSE_SNAPSHOT_QUBITS;
use meshvmc::{euler_run, MeshSpec, SourceFn};
use meshvmc_cli::config::{preset, ExperimentConfig};
use meshvmc_cli::io::RunDir;
use meshvmc_cli::pricing::run_suite_row;
use meshvmc_cli::run::{evolve_seeded, pretrain_seeded, problem, run_batch_ablation, run_table1};
use meshvmc_cli::selftest::{fit_slope, run_numeric};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn run_dir(root: &Path, name: &str, cfg: &ExperimentConfig) -> RunDir {
    RunDir::create(&root.join(name), cfg, name).expect("run directory")
}

/// Diffusion cells: d=1 n=4 and d=2 n=8, 3 seeds, mean error under the gate.
fn criterion_1(root: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, tol, minutes) in [("table1-d1", 1.5e-2, 20.0), ("table1-d2", 2.5e-2, 60.0)] {
        let cfg = preset(name).unwrap();
        assert_eq!(cfg.seeds.len(), 3);
        let start = Instant::now();
        match run_table1(&cfg, &run_dir(root, name, &cfg)) {
            Ok(r) => {
                let secs = start.elapsed().as_secs_f64();
                ok &= r.mean_error <= tol && r.tolerance == Some(tol) && secs <= minutes * 60.0;
                notes.push(format!(
                    "d={} n={}: mean error {:.3e} (<= {tol:.1e}), {secs:.0} s",
                    r.d, r.n, r.mean_error
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{name}: {e}"));
            }
        }
    }
    outcome(ok, notes.join("; "))
}

/// 1D pricing rows: VMC within 4x and Euler within 2x of the reference
/// errors, against the closed form.
fn criterion_2() -> Outcome {
    let cfg = preset("pricing-suite").unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    let rows: Vec<_> = cfg.pricing_suite.iter().filter(|r| r.option.d() == 1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let start = Instant::now();
        match run_suite_row(&cfg, row) {
            Ok(r) => {
                let secs = start.elapsed().as_secs_f64();
                ok &= r.passed && r.euler_tolerance.is_some() && secs <= 30.0 * 60.0;
                notes.push(format!(
                    "sigma={}: vmc {:.3e} (<= {:.3e}), euler {:.3e} (<= {:.3e}), {secs:.0} s",
                    r.sigma,
                    r.vmc_error,
                    r.vmc_tolerance,
                    r.euler_error,
                    r.euler_tolerance.unwrap_or(f64::NAN)
                ));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{}: {e}", row.name));
            }
        }
    }
    outcome(ok, notes.join("; "))
}

/// 2D basket call at rho = 0.1 against a 1e6-path Monte Carlo price.
fn criterion_3() -> Outcome {
    let cfg = preset("pricing-suite").unwrap();
    let row = cfg
        .pricing_suite
        .iter()
        .find(|r| r.option.d() == 2)
        .expect("suite has a 2D row");
    assert_eq!(cfg.option.mc_paths, 1_000_000);
    assert_eq!(row.option.rho[0][1], 0.1);
    let start = Instant::now();
    match run_suite_row(&cfg, row) {
        Ok(r) => {
            let secs = start.elapsed().as_secs_f64();
            outcome(
                r.vmc_error <= 0.10 && secs <= 90.0 * 60.0,
                format!(
                    "n={}: vmc vs mc {:.3e} (<= 0.10), euler vs mc {:.3e}, {secs:.0} s",
                    r.n, r.vmc_error, r.euler_error
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Mean error at B=1024 strictly below B=128 on d=2 n=8, 3 seeds.
fn criterion_4(root: &Path) -> Outcome {
    let cfg = preset("ablation").unwrap();
    assert_eq!(cfg.ablation.batches, vec![128, 1024]);
    assert_eq!(cfg.seeds.len(), 3);
    assert_eq!((cfg.mesh.d(), cfg.mesh.n()), (2, 8));
    match run_batch_ablation(&cfg, &run_dir(root, "ablation", &cfg)) {
        Ok(r) => {
            let rows: Vec<String> = r
                .rows
                .iter()
                .zip(&r.timing)
                .map(|(row, t)| {
                    format!(
                        "B={}: {:.3e} +- {:.1e} ({:.2} ms/step)",
                        row.batch,
                        row.mean_error,
                        row.std_error,
                        1e3 * t.seconds_per_step
                    )
                })
                .collect();
            outcome(r.decreasing == Some(true), rows.join(", "))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn seconds_per_step(mut f: impl FnMut(usize) -> f64, steps: usize) -> f64 {
    // Differencing two run lengths cancels the fixed per-run cost.
    let best = |f: &mut dyn FnMut(usize) -> f64, s: usize| (0..5).map(|_| f(s)).fold(f64::INFINITY, f64::min);
    let (short, long) = (best(&mut f, steps), best(&mut f, 2 * steps));
    (long - short).max(1e-12) / steps as f64
}

/// Per-step cost across n in {8, 10, 12, 14}: VMC polynomial in n (log-log
/// exponent <= 4), dense Euler at least linear in 2^n. VMC is timed on the
/// d=2 diffusion problem (unit spacing, growing box) after pretraining, so
/// the sampled state is the one a real run evolves.
fn criterion_5() -> Outcome {
    let ns = [8usize, 10, 12, 14];
    assert!(ns.iter().all(|&n| n <= MAX_DENSE_SNAPSHOT_QUBITS));
    let base = preset("table1-d2").unwrap();
    let mut vmc = Vec::new();
    let mut unique = Vec::new();
    let mut euler = Vec::new();
    for &n in &ns {
        let half = (1usize << (n / 2)) as f64 / 2.0;
        let mut cfg = base.clone();
        cfg.mesh = MeshSpec::new(2, n, vec![[-half, half]; 2]).unwrap();
        let p = problem(&cfg).unwrap();
        let fit = pretrain_seeded(&cfg, 0, &p.u0, n).unwrap();
        assert!(fit.abort.is_none());
        let mut mean_unique = 0.0;
        let time_vmc = |steps: usize| {
            let mut c = cfg.clone();
            c.evolution.steps = steps;
            c.evolution.record_stride = steps;
            let start = Instant::now();
            let traj = evolve_seeded(&c, &p, fit.ansatz.clone(), 0, c.evolution.batch).unwrap();
            let secs = start.elapsed().as_secs_f64();
            assert!(traj.abort.is_none());
            mean_unique = traj.trace.iter().map(|t| t.unique as f64).sum::<f64>() / traj.trace.len() as f64;
            secs
        };
        vmc.push(seconds_per_step(time_vmc, 20));
        unique.push(mean_unique);
        let euler_steps = (1usize << 26) >> n;
        let time_euler = |steps: usize| {
            let start = Instant::now();
            euler_run(&p.u0, &p.op, &p.mesh, &SourceFn::Zero, cfg.evolution.dt, steps, steps, 0.0).unwrap();
            start.elapsed().as_secs_f64()
        };
        euler.push(seconds_per_step(time_euler, euler_steps));
    }
    let vmc_exp = fit_slope(&ns.iter().zip(&vmc).map(|(&n, t)| ((n as f64).ln(), t.ln())).collect::<Vec<_>>());
    let euler_exp = fit_slope(
        &ns.iter()
            .zip(&euler)
            .map(|(&n, t)| ((n as f64) * std::f64::consts::LN_2, t.ln()))
            .collect::<Vec<_>>(),
    );
    let fmt = |v: &[f64]| v.iter().map(|t| format!("{:.2e}", t)).collect::<Vec<_>>().join("/");
    let fmt_u = unique.iter().map(|u| format!("{u:.0}")).collect::<Vec<_>>().join("/");
    outcome(
        vmc_exp <= 4.0 && euler_exp >= 1.0,
        format!(
            "B={}: vmc s/step {} (unique {fmt_u}; exponent in n {vmc_exp:.3} <= 4); euler s/step {} (exponent in 2^n {euler_exp:.3} >= 1)",
            base.evolution.batch,
            fmt(&vmc),
            fmt(&euler)
        ),
    )
}

/// Property suites a-i.
fn criterion_6(root: &Path) -> Outcome {
    let mut results = run_numeric();
    results.push(meshvmc_cli::determinism(&preset("smoke").unwrap(), &root.join("determinism")));
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{}: {}", r.id, r.detail)).collect();
    for r in &results {
        println!("    {} {} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.id, r.name, r.detail);
    }
    if failed.is_empty() {
        outcome(true, format!("{} suites", results.len()))
    } else {
        outcome(false, failed.join("; "))
    }
}

fn main() {
    // `cargo test -- --list` and similar probes must not start the suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "diffusion table cells", Box::new(|| criterion_1(root))),
        (2, "1D pricing rows", Box::new(criterion_2)),
        (3, "2D basket vs Monte Carlo", Box::new(criterion_3)),
        (4, "batch-size ablation", Box::new(|| criterion_4(root))),
        (5, "per-step cost scaling", Box::new(criterion_5)),
        (6, "property suites", Box::new(|| criterion_6(root))),
    ];
    let mut failures = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        println!(
            "{} criterion {id} ({name}): {} [{:.0} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        failures += usize::from(!o.passed);
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
