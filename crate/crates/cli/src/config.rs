//! Experiment configuration: JSON with defaults, named presets and
//! `section.key=value` overrides.

use std::path::{Path, PathBuf};

use meshvmc::{
    BoundaryKind, EvolutionConfig, MeshSpec, NetworkSpec, OperatorSpec, OptionKind, OptionSpec,
    PretrainConfig,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// Width `t` of the discrete Gaussian `prod_i e^{-t} I_{x_i}(t)`.
    pub bessel_t: f64,
    /// Put the peak mid-grid instead of at multi-index 0.
    pub centered: bool,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            bessel_t: 3.0,
            centered: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitOrdering {
    /// Least significant bit generated first.
    Lsb,
    Msb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub ordering: BitOrdering,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            ordering: BitOrdering::Lsb,
        }
    }
}

impl NetworkSection {
    pub fn spec(&self, n: usize) -> NetworkSpec {
        match self.ordering {
            BitOrdering::Lsb => NetworkSpec::new(n, self.hidden.clone()),
            BitOrdering::Msb => NetworkSpec::reversed(n, self.hidden.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub batches: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            batches: vec![128, 1024],
        }
    }
}

/// One option priced on its heat grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingSection {
    pub option: OptionSpec,
    /// Qubits of the heat grid.
    pub n: usize,
    /// Spot prices; the strike on every axis when absent.
    pub s0: Option<Vec<f64>>,
    /// Heat-time step as a multiple of `dx^2`, used unless `dt` or `steps`
    /// is given.
    pub dt_over_dx2: f64,
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub mc_paths: usize,
    pub mc_seed: u64,
    /// Strikes for `price_curve.csv`.
    pub curve_strikes: Vec<f64>,
}

impl Default for PricingSection {
    fn default() -> Self {
        Self {
            option: base_call(0.3),
            n: 6,
            s0: None,
            dt_over_dx2: 0.1,
            dt: None,
            steps: None,
            mc_paths: 1_000_000,
            mc_seed: 7,
            curve_strikes: vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5],
        }
    }
}

impl PricingSection {
    pub fn spot(&self) -> Vec<f64> {
        self.s0
            .clone()
            .unwrap_or_else(|| vec![self.option.strike; self.option.d()])
    }

    /// `(dt, steps)` covering the expiry for grid spacing `dx`.
    pub fn time_grid(&self, dx: f64) -> Result<(f64, usize)> {
        let t = self.option.expiry;
        let (dt, steps) = match (self.dt, self.steps) {
            (Some(_), Some(_)) => {
                return Err(CliError::validation("set at most one of option.dt and option.steps"))
            }
            (Some(dt), None) => {
                if !(dt > 0.0) {
                    return Err(CliError::validation("option.dt must be positive"));
                }
                let steps = (t / dt).round().max(1.0) as usize;
                (t / steps as f64, steps)
            }
            (None, Some(steps)) => {
                if steps == 0 {
                    return Err(CliError::validation("option.steps must be positive"));
                }
                (t / steps as f64, steps)
            }
            (None, None) => {
                if !(self.dt_over_dx2 > 0.0) {
                    return Err(CliError::validation("option.dt_over_dx2 must be positive"));
                }
                let steps = (t / (self.dt_over_dx2 * dx * dx)).ceil() as usize;
                (t / steps as f64, steps)
            }
        };
        Ok((dt, steps))
    }
}

/// A row of the pricing suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteRow {
    pub name: String,
    pub option: OptionSpec,
    #[serde(default)]
    pub n: Option<usize>,
    pub vmc_tolerance: f64,
    #[serde(default)]
    pub euler_tolerance: Option<f64>,
    /// Overrides `pretrain.iters` for this row.
    #[serde(default)]
    pub pretrain_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of single runs: network init, pretraining and sampling.
    pub seed: u64,
    /// Seeds of repeated runs (table1, ablation).
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub mesh: MeshSpec,
    pub operator: OperatorSpec,
    pub initial: InitialSection,
    pub network: NetworkSection,
    pub pretrain: PretrainConfig,
    pub evolution: EvolutionConfig,
    pub ablation: AblationSection,
    pub option: PricingSection,
    pub pricing_suite: Vec<SuiteRow>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        preset("table1-d1").expect("built-in preset")
    }
}

pub fn base_call(sigma: f64) -> OptionSpec {
    OptionSpec::call(1.25, 0.03, sigma, 1.0).expect("valid built-in option")
}

pub fn basket_2d(kind: OptionKind, rho: f64) -> OptionSpec {
    OptionSpec::new(
        kind,
        1.25,
        0.03,
        vec![0.3, 0.3],
        vec![vec![1.0, rho], vec![rho, 1.0]],
        vec![0.5, 0.5],
        1.0,
    )
    .expect("valid built-in option")
}

/// Mesh with unit spacing over `[-m/2, m/2)` per axis, so grid coordinates
/// are the integer multi-indices shifted to the centre.
fn unit_mesh(d: usize, n: usize) -> MeshSpec {
    let half = (1usize << (n / d)) as f64 / 2.0;
    MeshSpec::new(d, n, vec![[-half, half]; d]).expect("valid built-in mesh")
}

fn diffusion_config(d: usize, n: usize) -> ExperimentConfig {
    ExperimentConfig {
        seed: 0,
        seeds: vec![0, 1, 2],
        output_dir: PathBuf::from("runs"),
        mesh: unit_mesh(d, n),
        operator: OperatorSpec::diffusion(d, 0.1, BoundaryKind::Dirichlet).expect("valid operator"),
        initial: InitialSection::default(),
        network: NetworkSection::default(),
        pretrain: PretrainConfig::default(),
        evolution: EvolutionConfig::default(),
        ablation: AblationSection::default(),
        option: PricingSection::default(),
        pricing_suite: default_suite(),
    }
}

/// Black-Scholes runs: short pretraining, a small heat-time step and a large
/// batch (cheap, as a coarse grid has few distinct samples).
fn pricing_config(option: OptionSpec, n: usize) -> ExperimentConfig {
    let mut cfg = diffusion_config(1, 4);
    cfg.pretrain.iters = 5000;
    cfg.evolution.batch = 1_000_000;
    cfg.evolution.svd_eps = 1e-6;
    cfg.option.option = option;
    cfg.option.n = n;
    cfg
}

pub fn default_suite() -> Vec<SuiteRow> {
    // Gates are 4x the reference VMC error and 2x the reference Euler error.
    let row = |name: &str, sigma: f64, ref_vmc: f64, ref_euler: f64| SuiteRow {
        name: name.to_string(),
        option: base_call(sigma),
        n: None,
        vmc_tolerance: 4.0 * ref_vmc,
        euler_tolerance: Some(2.0 * ref_euler),
        pretrain_iters: None,
    };
    vec![
        row("call-sigma0.3", 0.3, 0.011781, 0.002494),
        row("call-sigma0.1", 0.1, 0.032792, 0.000930),
        row("call-sigma0.2", 0.2, 0.017272, 0.002389),
        row("call-sigma0.4", 0.4, 0.011560, 0.001392),
        SuiteRow {
            name: "basket-call-2d".to_string(),
            option: basket_2d(OptionKind::BasketCall, 0.1),
            n: Some(BASKET_N),
            vmc_tolerance: 0.10,
            euler_tolerance: None,
            pretrain_iters: Some(BASKET_PRETRAIN_ITERS),
        },
    ]
}

/// Qubits of the 2D basket grid.
pub const BASKET_N: usize = 8;

/// The 2D payoff needs a longer fit than the 1D ones.
pub const BASKET_PRETRAIN_ITERS: usize = 20_000;

pub const PRESETS: &[&str] = &[
    "table1-d1",
    "table1-d2",
    "ablation",
    "bs-call",
    "bs-basket-2d",
    "pricing-suite",
    "smoke",
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "table1-d1" => diffusion_config(1, 4),
        "table1-d2" | "ablation" => diffusion_config(2, 8),
        "bs-call" | "pricing-suite" => pricing_config(base_call(0.3), 6),
        "bs-basket-2d" => {
            let mut cfg = pricing_config(basket_2d(OptionKind::BasketCall, 0.1), BASKET_N);
            cfg.pretrain.iters = BASKET_PRETRAIN_ITERS;
            cfg
        }
        "smoke" => {
            let mut cfg = diffusion_config(1, 4);
            cfg.network.hidden = vec![16];
            cfg.pretrain.iters = 4000;
            cfg.pretrain.lr = 0.03;
            cfg.evolution.steps = 200;
            cfg.evolution.dt = 1e-3;
            cfg.evolution.batch = 256;
            cfg.evolution.record_stride = 50;
            cfg.seeds = vec![0, 1];
            cfg.ablation.batches = vec![64, 256];
            cfg.option.n = 4;
            cfg.option.mc_paths = 20_000;
            cfg.option.dt_over_dx2 = 0.4;
            cfg.option.curve_strikes = vec![1.2, 1.3];
            cfg.pricing_suite = vec![SuiteRow {
                name: "call-smoke".to_string(),
                option: base_call(0.3),
                n: Some(4),
                vmc_tolerance: 1.0,
                euler_tolerance: Some(0.05),
                pretrain_iters: None,
            }];
            cfg
        }
        other => {
            return Err(CliError::validation(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// Parses `section.key=value`; the value is read as JSON when it parses,
/// as a string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (path, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override {s:?} is not key=value")))?;
    let keys: Vec<String> = path.split('.').map(str::to_string).collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::validation(format!("override key {path:?} is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((keys, value))
}

fn set_path(root: &mut Value, keys: &[String], value: Value) -> Result<()> {
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            CliError::validation(format!("{} is not a section", keys[..i].join(".")))
        })?;
        if i + 1 == keys.len() {
            if !obj.contains_key(key) {
                return Err(CliError::validation(format!("unknown config key {}", keys.join("."))));
            }
            obj.insert(key.clone(), value);
            return Ok(());
        }
        node = obj
            .get_mut(key)
            .ok_or_else(|| CliError::validation(format!("unknown config section {}", keys[..=i].join("."))))?;
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    Ok(())
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Preset (or defaults), then the JSON file, then the overrides.
pub fn resolve(preset_name: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match preset_name {
        Some(name) => preset(name)?,
        None => ExperimentConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::validation(format!("{} is not a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    for o in overrides {
        let (keys, v) = parse_override(o)?;
        set_path(&mut value, &keys, v)?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).map_err(|e| CliError::validation(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let core = |e: meshvmc::VmcError| CliError::validation(e.to_string());
        if self.operator.d() != self.mesh.d() {
            return Err(CliError::validation(format!(
                "operator is {}-dimensional but the mesh is {}-dimensional",
                self.operator.d(),
                self.mesh.d()
            )));
        }
        self.network.spec(self.mesh.n()).validate().map_err(core)?;
        self.pretrain.validate().map_err(core)?;
        self.evolution.validate().map_err(core)?;
        if self.pretrain.seed != 0 || self.evolution.seed != 0 {
            return Err(CliError::validation(
                "pretrain.seed and evolution.seed are derived from the top-level seed; set `seed` or `seeds` instead",
            ));
        }
        if self.seeds.is_empty() {
            return Err(CliError::validation("seeds must not be empty"));
        }
        if !(self.initial.bessel_t > 0.0) {
            return Err(CliError::validation("initial.bessel_t must be positive"));
        }
        if self.ablation.batches.contains(&0) {
            return Err(CliError::validation("ablation batches must be positive"));
        }
        let opt = &self.option;
        if opt.n == 0 || !opt.n.is_multiple_of(opt.option.d()) {
            return Err(CliError::validation(format!(
                "option.n = {} must be a positive multiple of the asset count {}",
                opt.n,
                opt.option.d()
            )));
        }
        if opt.spot().len() != opt.option.d() || opt.spot().iter().any(|s| !(*s > 0.0)) {
            return Err(CliError::validation("option.s0 needs one positive price per asset"));
        }
        if opt.mc_paths < 1000 {
            return Err(CliError::validation("option.mc_paths must be at least 1000"));
        }
        opt.time_grid(1.0)?;
        for row in &self.pricing_suite {
            let n = row.n.unwrap_or(opt.n);
            if n == 0 || n % row.option.d() != 0 {
                return Err(CliError::validation(format!(
                    "suite row {}: n = {n} must be a multiple of {}",
                    row.name,
                    row.option.d()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the output directory left out,
    /// so identical experiments hash equally wherever they are written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        digest(&serde_json::to_string(&c).expect("config serializes"))
    }

    /// Hash of the mesh and operator only; `compare` needs these to match.
    pub fn problem_hash(&self) -> String {
        let v = serde_json::json!({ "mesh": self.mesh, "operator": self.operator, "initial": self.initial });
        digest(&v.to_string())
    }
}

pub fn digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = resolve(
            Some("smoke"),
            None,
            &["evolution.batch=512".into(), "option.option.K=1.3".into(), "seeds=[4,5]".into()],
        )
        .unwrap();
        assert_eq!(cfg.evolution.batch, 512);
        assert_eq!(cfg.option.option.strike, 1.3);
        assert_eq!(cfg.seeds, vec![4, 5]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(None, None, &["evolution.bath=3".into()]).is_err());
        assert!(resolve(None, None, &["nosuch.key=3".into()]).is_err());
        assert!(resolve(None, None, &["evolution.dt=-1".into()]).is_err());
        assert!(resolve(None, None, &["evolution.seed=3".into()]).is_err());
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let e = resolve(Some("table1-d2"), None, &["operator.coeff_matrix=[[0.1]]".into()]);
        assert!(matches!(e, Err(CliError::Validation(_))));
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = preset("smoke").unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.evolution.batch += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.problem_hash(), b.problem_hash());
    }

    #[test]
    fn config_round_trips_through_json() {
        let a = preset("pricing-suite").unwrap();
        let s = serde_json::to_string_pretty(&a).unwrap();
        let b: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn time_grid_variants() {
        let mut p = PricingSection::default();
        let (dt, steps) = p.time_grid(0.1).unwrap();
        assert_eq!(steps, 1000);
        assert!((dt - 1e-3).abs() < 1e-15);
        p.steps = Some(40);
        assert_eq!(p.time_grid(0.1).unwrap(), (1.0 / 40.0, 40));
        p.dt = Some(0.01);
        assert!(p.time_grid(0.1).is_err());
    }
}
