//! Experiment stages and the composite table1 / ablation / pricing runs.

use std::path::Path;
use std::time::Instant;

use meshvmc::baseline::MAX_BASELINE_QUBITS;
use meshvmc::evolution::{snapshot_errors, StepTrace};
use meshvmc::pretrain::{PretrainOutcome, TraceRow};
use meshvmc::{
    bessel_gaussian, euler_run, evolve, pretrain, relative_error, Ansatz, BaselineRun, Checkpoint,
    EvolutionConfig, GridFunction, MeshSpec, OperatorSpec, PretrainConfig, SourceFn, Trajectory,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result, Stage};
use crate::io::{read_json, write_snapshot, Manifest, RunDir, SnapshotMeta};
use crate::pricing::{self, Method, SuiteResult};

/// Diffusion problem of the config: homogeneous boundary, discrete
/// Gaussian start.
pub struct Problem {
    pub mesh: MeshSpec,
    pub op: OperatorSpec,
    pub u0: GridFunction,
}

pub fn problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let u0 = bessel_gaussian(&cfg.mesh, cfg.initial.bessel_t, cfg.initial.centered)
        .stage("initial condition")?;
    Ok(Problem {
        mesh: cfg.mesh.clone(),
        op: cfg.operator.clone(),
        u0,
    })
}

pub fn pretrain_seeded(cfg: &ExperimentConfig, seed: u64, target: &GridFunction, n: usize) -> Result<PretrainOutcome> {
    let ansatz = Ansatz::new(cfg.network.spec(n), seed).stage("pretrain")?;
    let pcfg = PretrainConfig {
        seed,
        ..cfg.pretrain.clone()
    };
    pretrain::run(&pcfg, ansatz, target).stage("pretrain")
}

fn fitted(out: PretrainOutcome) -> Result<PretrainOutcome> {
    match &out.abort {
        Some(msg) => Err(CliError::numerical("pretrain", msg.clone())),
        None => Ok(out),
    }
}

pub fn evolve_seeded(cfg: &ExperimentConfig, p: &Problem, ansatz: Ansatz, seed: u64, batch: u64) -> Result<Trajectory> {
    let ecfg = EvolutionConfig {
        seed,
        batch,
        ..cfg.evolution.clone()
    };
    evolve(ansatz, &p.op, &p.mesh, &SourceFn::Zero, &ecfg, 0.0).stage("evolve")
}

fn completed(traj: Trajectory) -> Result<Trajectory> {
    match &traj.abort {
        Some(msg) => Err(CliError::numerical("evolve", msg.clone())),
        None => Ok(traj),
    }
}

pub fn baseline(cfg: &ExperimentConfig, p: &Problem) -> Result<BaselineRun> {
    let e = &cfg.evolution;
    euler_run(&p.u0, &p.op, &p.mesh, &SourceFn::Zero, e.dt, e.steps, e.record_stride, 0.0)
        .stage("baseline")
}

// ---- single stages -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub seed: u64,
    pub fit_error: f64,
    pub final_loss: f64,
    pub abort: Option<String>,
}

/// Writes `checkpoint.json`, `pretrain_trace.csv` and `pretrain.json`. A
/// non-finite loss still writes the last good checkpoint before failing.
pub fn run_pretrain(cfg: &ExperimentConfig, dir: &RunDir) -> Result<PretrainReport> {
    let p = problem(cfg)?;
    let out = pretrain_seeded(cfg, cfg.seed, &p.u0, p.mesh.n())?;
    write_pretrain(dir, &out, cfg.seed)?;
    let report = PretrainReport {
        seed: cfg.seed,
        fit_error: out.fit_error,
        final_loss: out.trace.last().map_or(f64::NAN, |r| r.loss),
        abort: out.abort.clone(),
    };
    dir.write_report("pretrain.json", &report)?;
    fitted(out)?;
    Ok(report)
}

fn write_pretrain(dir: &RunDir, out: &PretrainOutcome, seed: u64) -> Result<()> {
    let ck = Checkpoint::from_ansatz(&out.ansatz, seed);
    ck.save(&dir.path("checkpoint.json")).stage("checkpoint")?;
    dir.write_csv::<TraceRow>("pretrain_trace.csv", &out.trace)?;
    Ok(())
}

/// Snapshots to `baseline/snapshot_XXXXXX.{bin,json}`.
pub fn run_baseline(cfg: &ExperimentConfig, dir: &RunDir) -> Result<BaselineRun> {
    let p = problem(cfg)?;
    let run = baseline(cfg, &p)?;
    let sub = dir.subdir("baseline")?;
    for (i, (t, u)) in run.snapshots.iter().enumerate() {
        let step = (i * cfg.evolution.record_stride).min(cfg.evolution.steps);
        let meta = SnapshotMeta {
            shape: vec![p.mesh.m(); p.mesh.d()],
            time: *t,
            step,
            dtype: "f64-le".into(),
            config_hash: dir.hash().to_string(),
        };
        write_snapshot(&sub, &format!("snapshot_{step:06}"), u, &meta)?;
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub time: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub seed: u64,
    pub steps_taken: usize,
    pub zero_direction_steps: usize,
    pub mean_relative_error: Option<f64>,
    pub abort: Option<String>,
}

/// Starts from `checkpoint` or pretrains first. Writes `trajectory/`,
/// `final_state.json`, `geometry_trace.csv` and, when the grid is small
/// enough for the baseline, `error.csv`.
pub fn run_evolve(cfg: &ExperimentConfig, dir: &RunDir, checkpoint: Option<&Path>) -> Result<EvolveReport> {
    let p = problem(cfg)?;
    let ansatz = match checkpoint {
        Some(path) => {
            let a = Checkpoint::load(path).stage("checkpoint")?.to_ansatz().stage("checkpoint")?;
            if a.n() != p.mesh.n() {
                return Err(CliError::validation(format!(
                    "checkpoint has n = {} but the mesh has n = {}",
                    a.n(),
                    p.mesh.n()
                )));
            }
            a
        }
        None => {
            let out = pretrain_seeded(cfg, cfg.seed, &p.u0, p.mesh.n())?;
            write_pretrain(dir, &out, cfg.seed)?;
            fitted(out)?.ansatz
        }
    };
    let traj = evolve_seeded(cfg, &p, ansatz, cfg.seed, cfg.evolution.batch)?;
    let sub = dir.subdir("trajectory")?;
    for snap in &traj.snapshots {
        let a = Ansatz::with_state(cfg.network.spec(p.mesh.n()), snap.state.clone()).stage("trajectory")?;
        Checkpoint::from_ansatz(&a, cfg.seed)
            .save(&sub.join(format!("step_{:06}.json", snap.step)))
            .stage("trajectory")?;
    }
    let last = Ansatz::with_state(cfg.network.spec(p.mesh.n()), traj.final_state.clone()).stage("trajectory")?;
    Checkpoint::from_ansatz(&last, cfg.seed)
        .save(&dir.path("final_state.json"))
        .stage("trajectory")?;
    dir.write_csv::<StepTrace>("geometry_trace.csv", &traj.trace)?;
    let mut mean = None;
    if p.mesh.n() <= MAX_BASELINE_QUBITS.min(meshvmc::evolution::MAX_DENSE_SNAPSHOT_QUBITS) && traj.abort.is_none() {
        let base = baseline(cfg, &p)?;
        let errs = snapshot_errors(&traj, &base.snapshots).stage("compare")?;
        let rows: Vec<ErrorRow> = errs
            .iter()
            .map(|&(time, relative_error)| ErrorRow { time, relative_error })
            .collect();
        dir.write_csv("error.csv", &rows)?;
        mean = Some(relative_error(&traj, &base.snapshots).stage("compare")?);
    }
    let report = EvolveReport {
        seed: cfg.seed,
        steps_taken: traj.steps_taken,
        zero_direction_steps: traj.zero_direction_steps,
        mean_relative_error: mean,
        abort: traj.abort.clone(),
    };
    dir.write_report("evolve.json", &report)?;
    completed(traj)?;
    Ok(report)
}

// ---- table1 --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub d: usize,
    pub n: usize,
    pub n_per_axis: usize,
    pub seeds: Vec<u64>,
    pub fit_errors: Vec<f64>,
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub tolerance: Option<f64>,
    pub passed: Option<bool>,
}

/// Gate for a Dirichlet diffusion cell, keyed by `(d, n/d)`.
pub fn table1_tolerance(d: usize, n_per_axis: usize) -> Option<f64> {
    match (d, n_per_axis) {
        (1, 4) => Some(1.5e-2),
        (2, 4) => Some(2.5e-2),
        (1, 5) => Some(1e-2),
        _ => None,
    }
}

/// Pretrain, baseline and evolve for each seed; writes `table1_cell.json`.
pub fn run_table1(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Table1Report> {
    let p = problem(cfg)?;
    let base = baseline(cfg, &p)?;
    let mut errors = Vec::new();
    let mut fits = Vec::new();
    for &seed in &cfg.seeds {
        let fit = fitted(pretrain_seeded(cfg, seed, &p.u0, p.mesh.n())?)?;
        fits.push(fit.fit_error);
        let traj = completed(evolve_seeded(cfg, &p, fit.ansatz, seed, cfg.evolution.batch)?)?;
        errors.push(relative_error(&traj, &base.snapshots).stage("compare")?);
    }
    let mean_error = errors.iter().sum::<f64>() / errors.len() as f64;
    let (d, n) = (p.mesh.d(), p.mesh.n());
    let tolerance = table1_tolerance(d, n / d);
    let report = Table1Report {
        d,
        n,
        n_per_axis: n / d,
        seeds: cfg.seeds.clone(),
        fit_errors: fits,
        errors,
        mean_error,
        tolerance,
        passed: tolerance.map(|t| mean_error <= t),
    };
    dir.write_report("table1_cell.json", &report)?;
    Ok(report)
}

// ---- batch ablation ------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub batch: u64,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub batch: u64,
    pub seconds_per_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// `errors[i][j]`: batch `i`, seed `j`.
    pub errors: Vec<Vec<f64>>,
    pub timing: Vec<TimingRow>,
    /// Whether the mean error falls strictly as the batch grows; `None`
    /// with a single batch size.
    pub decreasing: Option<bool>,
}

/// One pretraining per seed shared by all batch sizes. Writes
/// `ablation.csv` and the wall-clock `ablation_timing.csv`.
pub fn run_batch_ablation(cfg: &ExperimentConfig, dir: &RunDir) -> Result<AblationReport> {
    let mut batches = cfg.ablation.batches.clone();
    batches.sort_unstable();
    batches.dedup();
    if batches.is_empty() {
        return Err(CliError::validation("ablation needs at least one batch size"));
    }
    let p = problem(cfg)?;
    let base = baseline(cfg, &p)?;
    let mut errors = vec![Vec::new(); batches.len()];
    let mut seconds = vec![0.0; batches.len()];
    let mut steps = vec![0usize; batches.len()];
    for &seed in &cfg.seeds {
        let fit = fitted(pretrain_seeded(cfg, seed, &p.u0, p.mesh.n())?)?;
        for (i, &b) in batches.iter().enumerate() {
            let start = Instant::now();
            let traj = completed(evolve_seeded(cfg, &p, fit.ansatz.clone(), seed, b)?)?;
            seconds[i] += start.elapsed().as_secs_f64();
            steps[i] += traj.steps_taken;
            errors[i].push(relative_error(&traj, &base.snapshots).stage("compare")?);
        }
    }
    let rows: Vec<AblationRow> = batches
        .iter()
        .zip(&errors)
        .map(|(&batch, e)| {
            let mean = e.iter().sum::<f64>() / e.len() as f64;
            let var = if e.len() > 1 {
                e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64
            } else {
                0.0
            };
            AblationRow {
                batch,
                mean_error: mean,
                std_error: var.sqrt(),
            }
        })
        .collect();
    let timing: Vec<TimingRow> = batches
        .iter()
        .zip(seconds.iter().zip(&steps))
        .map(|(&batch, (s, &k))| TimingRow {
            batch,
            seconds_per_step: s / k.max(1) as f64,
        })
        .collect();
    dir.write_csv("ablation.csv", &rows)?;
    dir.write_csv("ablation_timing.csv", &timing)?;
    let decreasing = (rows.len() > 1).then(|| rows.windows(2).all(|w| w[1].mean_error < w[0].mean_error));
    Ok(AblationReport {
        rows,
        errors,
        timing,
        decreasing,
    })
}

// ---- pricing -------------------------------------------------------------

/// Writes `price_report.json` and `price_curve.csv`.
pub fn run_price(cfg: &ExperimentConfig, dir: &RunDir, method: Method, curve: bool) -> Result<pricing::PriceReport> {
    let report = pricing::price_option(cfg, &cfg.option.option, method)?;
    dir.write_report("price_report.json", &report)?;
    if curve {
        let rows = pricing::price_curve(cfg, method)?;
        dir.write_csv("price_curve.csv", &rows)?;
    }
    Ok(report)
}

/// Runs every suite row; writes `table3.csv`.
pub fn run_pricing_suite(cfg: &ExperimentConfig, dir: &RunDir) -> Result<Vec<SuiteResult>> {
    if cfg.pricing_suite.is_empty() {
        return Err(CliError::validation("pricing_suite has no rows"));
    }
    let results = cfg
        .pricing_suite
        .iter()
        .map(|row| pricing::run_suite_row(cfg, row))
        .collect::<Result<Vec<_>>>()?;
    dir.write_csv("table3.csv", &results)?;
    Ok(results)
}

// ---- compare -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub artifact: String,
    pub relative_difference: f64,
    pub identical: bool,
}

/// Relative difference of the final amplitudes of two runs of the same
/// problem. Refuses runs whose mesh/operator hashes differ.
pub fn compare(a: &Path, b: &Path) -> Result<CompareReport> {
    let ma: Manifest = read_json(&a.join("manifest.json"))?;
    let mb: Manifest = read_json(&b.join("manifest.json"))?;
    if ma.problem_hash != mb.problem_hash {
        return Err(CliError::validation(format!(
            "runs solve different problems (mesh/operator hash {} vs {})",
            &ma.problem_hash[..12],
            &mb.problem_hash[..12]
        )));
    }
    let cfg: ExperimentConfig = read_json(&a.join("config.json"))?;
    let artifact = ["final_state.json", "checkpoint.json"]
        .into_iter()
        .find(|name| a.join(name).exists() && b.join(name).exists())
        .ok_or_else(|| CliError::validation("neither final_state.json nor checkpoint.json is present in both runs"))?;
    let load = |dir: &Path| -> Result<GridFunction> {
        Checkpoint::load(&dir.join(artifact))
            .and_then(|c| c.to_ansatz())
            .and_then(|a| a.amplitudes(&cfg.mesh))
            .stage("compare")
    };
    let (ua, ub) = (load(a)?, load(b)?);
    let norm = ua.norm().max(f64::MIN_POSITIVE);
    Ok(CompareReport {
        artifact: artifact.to_string(),
        relative_difference: ua.distance(&ub) / norm,
        identical: ua == ub,
    })
}
