//! Option pricing through the heat reduction: VMC and Euler price grids,
//! spot prices and errors against the analytic and Monte Carlo oracles.

use meshvmc::blackscholes::{
    analytic_call, invert_transform, mc_price, price_at, price_grid, reduction_coeffs, to_heat,
    HeatProblem,
};
use meshvmc::evolution::MAX_DENSE_SNAPSHOT_QUBITS;
use meshvmc::{
    euler_run, evolve, pretrain, Ansatz, EvolutionConfig, GridFunction, OptionKind, OptionSpec,
    PretrainConfig, ReductionCoeffs,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, PricingSection, SuiteRow};
use crate::error::{CliError, Result, Stage};

/// A heat problem with its time grid.
pub struct PricingPlan {
    pub option: OptionSpec,
    pub coeffs: ReductionCoeffs,
    pub heat: HeatProblem,
    pub dt: f64,
    pub steps: usize,
}

pub fn plan(option: &OptionSpec, n: usize, section: &PricingSection) -> Result<PricingPlan> {
    if n > MAX_DENSE_SNAPSHOT_QUBITS {
        return Err(CliError::validation(format!(
            "pricing reads the full price grid and needs n <= {MAX_DENSE_SNAPSHOT_QUBITS}, got {n}"
        )));
    }
    let coeffs = reduction_coeffs(option).stage("reduction")?;
    let heat = to_heat(option, &coeffs, n).stage("heat problem")?;
    let (dt, steps) = section.time_grid(heat.mesh.dx())?;
    Ok(PricingPlan {
        option: option.clone(),
        coeffs,
        heat,
        dt,
        steps,
    })
}

impl PricingPlan {
    fn to_prices(&self, u: &GridFunction) -> Result<GridFunction> {
        invert_transform(u, &self.coeffs, &self.option, &self.heat.mesh, self.option.expiry)
            .stage("invert transform")
    }

    /// Prices now from forward Euler on the heat grid.
    pub fn euler_prices(&self) -> Result<GridFunction> {
        let h = &self.heat;
        let run = euler_run(&h.u0, &h.op, &h.mesh, &h.source, self.dt, self.steps, self.steps, 0.0)
            .stage("euler")?;
        let (_, u) = run.snapshots.last().expect("euler records the final step");
        self.to_prices(u)
    }

    /// Prices now from pretraining on the payoff and evolving the ansatz.
    pub fn vmc_prices(&self, cfg: &ExperimentConfig, seed: u64) -> Result<VmcPrices> {
        let h = &self.heat;
        let ansatz = Ansatz::new(cfg.network.spec(h.mesh.n()), seed).stage("pretrain")?;
        let pcfg = PretrainConfig {
            seed,
            ..cfg.pretrain.clone()
        };
        let fit = pretrain::run(&pcfg, ansatz, &h.u0).stage("pretrain")?;
        if let Some(msg) = fit.abort {
            return Err(CliError::numerical("pretrain", msg));
        }
        let ecfg = EvolutionConfig {
            dt: self.dt,
            steps: self.steps,
            seed,
            record_stride: self.steps,
            ..cfg.evolution.clone()
        };
        let traj = evolve(fit.ansatz, &h.op, &h.mesh, &h.source, &ecfg, 0.0).stage("evolve")?;
        if let Some(msg) = traj.abort {
            return Err(CliError::numerical("evolve", msg));
        }
        let last = traj.snapshots.last().expect("evolve records the final step");
        let u = last.dense.as_ref().expect("dense snapshot on a small grid");
        Ok(VmcPrices {
            prices: self.to_prices(u)?,
            fit_error: fit.fit_error,
            zero_direction_steps: traj.zero_direction_steps,
        })
    }

    pub fn price_at(&self, v: &GridFunction, s0: &[f64]) -> Result<f64> {
        price_at(v, &self.option, &self.heat.mesh, s0).stage("interpolate")
    }

    /// `||V - V_exact|| / ||V_exact||` over the grid for a single-asset call.
    pub fn analytic_grid_error(&self, v: &GridFunction) -> Result<f64> {
        if self.option.kind != OptionKind::Call1d {
            return Err(CliError::validation("the analytic oracle covers the single-asset call only"));
        }
        let s = price_grid(&self.option, &self.heat.mesh).stage("price grid")?;
        let (mut num, mut den) = (0.0, 0.0);
        for (x, si) in v.values().iter().zip(&s) {
            let exact = analytic(&self.option, si[0]);
            num += (x - exact).powi(2);
            den += exact * exact;
        }
        Ok((num / den).sqrt())
    }
}

pub struct VmcPrices {
    pub prices: GridFunction,
    pub fit_error: f64,
    pub zero_direction_steps: usize,
}

fn analytic(option: &OptionSpec, s: f64) -> f64 {
    analytic_call(option.strike, option.r, option.sigma[0], option.expiry, s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Vmc,
    Euler,
    Analytic,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McQuote {
    pub price: f64,
    pub std_error: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceReport {
    pub method: Method,
    pub option: OptionSpec,
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    pub s0: Vec<f64>,
    pub price: f64,
    pub analytic: Option<f64>,
    pub mc: Option<McQuote>,
    pub rel_error_vs_analytic: Option<f64>,
    pub rel_error_vs_mc: Option<f64>,
    /// Relative error over the whole price grid against the closed form.
    pub grid_rel_error_vs_analytic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    #[serde(rename = "K")]
    pub strike: f64,
    pub price: f64,
    pub analytic: Option<f64>,
    pub mc: Option<f64>,
    pub mc_std_error: Option<f64>,
}

fn mc_quote(option: &OptionSpec, s0: &[f64], section: &PricingSection) -> Result<McQuote> {
    let (price, std_error) = mc_price(option, s0, section.mc_paths, section.mc_seed).stage("monte carlo")?;
    Ok(McQuote {
        price,
        std_error,
        paths: section.mc_paths,
    })
}

fn rel(x: f64, reference: f64) -> f64 {
    (x - reference).abs() / reference.abs()
}

/// Price of `option` at the spot by `method`, with the oracles alongside.
pub fn price_option(cfg: &ExperimentConfig, option: &OptionSpec, method: Method) -> Result<PriceReport> {
    let section = &cfg.option;
    let s0 = section.spot();
    let p = plan(option, section.n, section)?;
    let analytic_price = (option.kind == OptionKind::Call1d).then(|| analytic(option, s0[0]));
    let mc = Some(mc_quote(option, &s0, section)?);
    let mut grid_err = None;
    let price = match method {
        Method::Analytic => analytic_price.ok_or_else(|| {
            CliError::validation("the analytic method covers the single-asset call only")
        })?,
        Method::Mc => mc.as_ref().expect("computed above").price,
        Method::Euler | Method::Vmc => {
            let v = if method == Method::Euler {
                p.euler_prices()?
            } else {
                p.vmc_prices(cfg, cfg.seed)?.prices
            };
            if option.kind == OptionKind::Call1d {
                grid_err = Some(p.analytic_grid_error(&v)?);
            }
            p.price_at(&v, &s0)?
        }
    };
    Ok(PriceReport {
        method,
        option: option.clone(),
        n: section.n,
        dt: p.dt,
        steps: p.steps,
        s0,
        price,
        analytic: analytic_price,
        rel_error_vs_analytic: analytic_price.map(|a| rel(price, a)),
        rel_error_vs_mc: mc.as_ref().map(|m| rel(price, m.price)),
        mc,
        grid_rel_error_vs_analytic: grid_err,
    })
}

/// Spot price by `method` across the configured strikes.
pub fn price_curve(cfg: &ExperimentConfig, method: Method) -> Result<Vec<CurveRow>> {
    let section = &cfg.option;
    let s0 = section.spot();
    section
        .curve_strikes
        .iter()
        .map(|&k| {
            let option = section.option.with_strike(k).stage("strike sweep")?;
            let analytic_price = (option.kind == OptionKind::Call1d).then(|| analytic(&option, s0[0]));
            let mc = mc_quote(&option, &s0, section)?;
            let price = match method {
                Method::Analytic => analytic_price.ok_or_else(|| {
                    CliError::validation("the analytic method covers the single-asset call only")
                })?,
                Method::Mc => mc.price,
                Method::Euler => {
                    let p = plan(&option, section.n, section)?;
                    p.price_at(&p.euler_prices()?, &s0)?
                }
                Method::Vmc => {
                    let p = plan(&option, section.n, section)?;
                    p.price_at(&p.vmc_prices(cfg, cfg.seed)?.prices, &s0)?
                }
            };
            Ok(CurveRow {
                strike: k,
                price,
                analytic: analytic_price,
                mc: Some(mc.price),
                mc_std_error: Some(mc.std_error),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub kind: OptionKind,
    pub d: usize,
    pub n: usize,
    pub sigma: f64,
    pub rho: f64,
    #[serde(rename = "K")]
    pub strike: f64,
    pub r: f64,
    #[serde(rename = "T")]
    pub expiry: f64,
    /// `analytic` (error over the price grid) or `mc` (error at the spot).
    pub oracle: String,
    pub vmc_error: f64,
    pub vmc_tolerance: f64,
    pub euler_error: f64,
    pub euler_tolerance: Option<f64>,
    pub fit_error: f64,
    pub passed: bool,
}

pub fn run_suite_row(cfg: &ExperimentConfig, row: &SuiteRow) -> Result<SuiteResult> {
    let section = &cfg.option;
    let n = row.n.unwrap_or(section.n);
    let p = plan(&row.option, n, section)?;
    let mut row_cfg = cfg.clone();
    if let Some(iters) = row.pretrain_iters {
        row_cfg.pretrain.iters = iters;
    }
    let vmc = p.vmc_prices(&row_cfg, cfg.seed)?;
    let euler = p.euler_prices()?;
    let (oracle, vmc_error, euler_error) = if row.option.kind == OptionKind::Call1d {
        (
            "analytic",
            p.analytic_grid_error(&vmc.prices)?,
            p.analytic_grid_error(&euler)?,
        )
    } else {
        let s0 = match &section.s0 {
            Some(s) if s.len() == row.option.d() => s.clone(),
            _ => vec![row.option.strike; row.option.d()],
        };
        let mc = mc_quote(&row.option, &s0, section)?;
        (
            "mc",
            rel(p.price_at(&vmc.prices, &s0)?, mc.price),
            rel(p.price_at(&euler, &s0)?, mc.price),
        )
    };
    let passed = vmc_error <= row.vmc_tolerance
        && row.euler_tolerance.is_none_or(|tol| euler_error <= tol);
    Ok(SuiteResult {
        name: row.name.clone(),
        kind: row.option.kind,
        d: row.option.d(),
        n,
        sigma: row.option.sigma[0],
        rho: if row.option.d() > 1 { row.option.rho[0][1] } else { 0.0 },
        strike: row.option.strike,
        r: row.option.r,
        expiry: row.option.expiry,
        oracle: oracle.to_string(),
        vmc_error,
        vmc_tolerance: row.vmc_tolerance,
        euler_error,
        euler_tolerance: row.euler_tolerance,
        fit_error: vmc.fit_error,
        passed,
    })
}
