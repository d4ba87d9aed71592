//! Batch command-line front end: JSON configuration, verb dispatch and
//! CSV/JSON emission. Exit codes: 0 success, 2 precondition or configuration
//! error, 3 numerical failure (including a FAILED steering report).

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StlcError};
use crate::kernels::{write_kernel_csv, write_theta_csv};
use crate::quadform::coercivity_residual;
use crate::signals::{project_zero_mean, Control};
use crate::simulator::{remainder_norms, DriftContext, Galerkin, StateVector, J_SIM};
use crate::spectral::{classify, cosine_coefficients, interaction_coefficients, lambda, Potential, PotentialDescriptor, J_SERIES};
use crate::synthesis::{find_balanced_potential, solve_moments, steer_full, SteeringStatus, SynthesisContext, SynthesisOptions};
use crate::C64;

/// Command-line arguments.
#[derive(Debug, Parser)]
#[command(name = "stlc", version, about = "Small-time local controllability toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Base seed (overrides the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

/// Verbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Coefficient tables and classifier verdict.
    Analyze,
    /// Kernel K(σ) and Θ(ω) tables.
    Kernels,
    /// Coercivity residuals of Q_k over random zero-mean controls.
    CoercivityScan,
    /// Drift certificates over a random control ensemble.
    Drift,
    /// Expansion remainders over a random control ensemble.
    Remainders,
    /// Full steering towards the configured target.
    Synthesize,
    /// Finite moment problem.
    Moments,
}

/// Horizon or horizon sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Horizon {
    One(f64),
    Sweep(Vec<f64>),
}

impl Horizon {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Horizon::One(t) => vec![*t],
            Horizon::Sweep(v) => v.clone(),
        }
    }
}

/// Steering target ψ* given either as a perturbation of the ground state
/// (√(1−|ε|²)φ₀ + εφ_mode) or by explicit coefficients [re, im].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TargetSpec {
    Ground,
    Mode { mode: usize, re: f64, im: f64 },
    Coeffs { coeffs: Vec<[f64; 2]> },
}

/// One moment target d_j = re + i·im.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentTarget {
    pub j: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// JSON run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialDescriptor,
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_horizon")]
    pub t: Horizon,
    /// (series, simulation) truncations.
    #[serde(default = "default_j_max")]
    pub j_max: [usize; 2],
    /// Cells of the control grid.
    #[serde(default = "default_grid")]
    pub grid_n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Ensemble size of the random scans.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Convergence tolerance of iterative solvers.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Small-time exponent ν of the negative Sobolev norms.
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Drift order p.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub moments: Vec<MomentTarget>,
    /// Solve moments in the primitive variable with endpoint pinning.
    #[serde(default)]
    pub regular: bool,
    /// σ grid of the kernel table.
    #[serde(default)]
    pub sigmas: Option<Vec<f64>>,
    /// ω grid of the Θ table.
    #[serde(default)]
    pub omegas: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_horizon() -> Horizon {
    Horizon::One(0.1)
}
fn default_j_max() -> [usize; 2] {
    [J_SERIES, J_SIM]
}
fn default_grid() -> usize {
    1024
}
fn default_samples() -> usize {
    100
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_nu() -> f64 {
    0.125
}
fn default_order() -> usize {
    1
}

impl RunConfig {
    /// Checks tolerances and sweep lists.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(StlcError::Config(m.into()));
        if !(self.tolerance > 0.0) || !(self.nu > 0.0) {
            return bad("tolerances must be positive");
        }
        let ts = self.t.values();
        if ts.is_empty() {
            return bad("horizon sweep must be nonempty");
        }
        if ts.iter().any(|t| !(*t > 0.0)) {
            return bad("horizons must be positive");
        }
        if self.grid_n == 0 || self.j_max[0] == 0 || self.j_max[1] == 0 {
            return bad("grid size and truncations must be positive");
        }
        if matches!(&self.sigmas, Some(v) if v.is_empty()) || matches!(&self.omegas, Some(v) if v.is_empty()) {
            return bad("sweep lists must be nonempty");
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| StlcError::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| StlcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolves the potential descriptor (balanced descriptors via the
    /// synthesis root-finder).
    pub fn potential(&self) -> Result<Potential> {
        match &self.potential {
            PotentialDescriptor::Balanced { k, family } => {
                let fam = family.clone().unwrap_or_default();
                Ok(find_balanced_potential(*k, &fam)?.potential.with_source(self.potential.clone()))
            }
            d => cosine_coefficients(d, self.j_max[0]),
        }
    }

    /// Target state on j = 0..=j_max.
    pub fn target_state(&self, j_max: usize) -> Result<StateVector> {
        let spec = self.target.clone().ok_or_else(|| StlcError::Config("synthesize requires a target".into()))?;
        let mut s = StateVector::ground(j_max);
        match spec {
            TargetSpec::Ground => {}
            TargetSpec::Mode { mode, re, im } => {
                let eps = C64::new(re, im);
                if mode > j_max || eps.norm() >= 1.0 {
                    return Err(StlcError::Config("target mode out of range or |ε| ≥ 1".into()));
                }
                let rest = (1.0 - eps.norm_sqr()).sqrt();
                s.coeffs[0] = C64::new(rest, 0.0);
                s.coeffs[mode] += eps;
            }
            TargetSpec::Coeffs { coeffs } => {
                if coeffs.len() > j_max + 1 {
                    return Err(StlcError::Config("more target coefficients than simulated modes".into()));
                }
                s.coeffs.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
                for (c, v) in s.coeffs.iter_mut().zip(&coeffs) {
                    *c = C64::new(v[0], v[1]);
                }
                if (s.norm() - 1.0).abs() > 1e-10 {
                    return Err(StlcError::NonUnitState(s.norm()));
                }
            }
        }
        Ok(s)
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn io<E: std::fmt::Display>(e: E) -> StlcError {
    StlcError::Io(e.to_string())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(io)?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io)?;
    std::io::Write::write_all(&mut w, b"\n").map_err(io)
}

fn csv_writer(dir: &Path, name: &str, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = csv::Writer::from_writer(create(dir, name)?);
    w.write_record(header).map_err(io)?;
    Ok(w)
}

/// Zero-mean random control with ‖u‖_{L²} = 1, deterministic in `seed`.
pub fn random_h_control(seed: u64, t: f64, n: usize) -> Control {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = project_zero_mean(&Control::real(t, &v));
    let norm = u.l2_norm();
    if norm == 0.0 {
        u
    } else {
        u.scaled(1.0 / norm)
    }
}

/// Per-element seed of ensemble member `i` at sweep position `s`.
fn element_seed(base: u64, s: usize, i: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(((s as u64) << 32) | i as u64)
}

struct Env {
    cfg: RunConfig,
    out: PathBuf,
}

fn analyze(env: &Env) -> Result<i32> {
    let pot = env.cfg.potential()?;
    let k = env.cfg.k;
    let verdict = classify(&pot, k);
    let model = interaction_coefficients(&pot, k, pot.j_max()).ok();
    let mut w = csv_writer(&env.out, "coefficients.csv", &["j", "lambda_j", "m_j", "c_j"])?;
    for j in 0..=pot.j_max() {
        let c = model.as_ref().map(|m| fmt(m.c_at(j))).unwrap_or_default();
        w.write_record(&[j.to_string(), fmt(lambda(j)), fmt(pot.m(j)), c]).map_err(io)?;
    }
    w.flush().map_err(io)?;
    write_json(&env.out, "verdict.json", &verdict)?;
    if let Some(m) = &model {
        write_json(&env.out, "drift.json", &serde_json::json!({ "k": k, "a": m.a, "k0": m.k0, "a_k": m.a_k }))?;
    }
    println!("{}", verdict.kind);
    Ok(0)
}

fn kernels(env: &Env) -> Result<i32> {
    let pot = env.cfg.potential()?;
    let model = interaction_coefficients(&pot, env.cfg.k, pot.j_max())?;
    let sigmas = env.cfg.sigmas.clone().unwrap_or_else(|| (0..=200).map(|i| i as f64 / 200.0).collect());
    let omegas = env.cfg.omegas.clone().unwrap_or_else(|| (0..=400).map(|i| -2000.0 + 10.0 * i as f64 + 0.5).collect());
    write_kernel_csv(&model, &sigmas, false, create(&env.out, "kernel.csv")?)?;
    write_kernel_csv(&model, &sigmas, true, create(&env.out, "kernel_modulated.csv")?)?;
    write_theta_csv(&model, &omegas, create(&env.out, "theta.csv")?)?;
    Ok(0)
}

fn coercivity_scan(env: &Env) -> Result<i32> {
    let cfg = &env.cfg;
    let pot = cfg.potential()?;
    let model = interaction_coefficients(&pot, cfg.k, pot.j_max())?;
    let ts = cfg.t.values();
    let jobs: Vec<(usize, f64, usize)> = ts.iter().enumerate().flat_map(|(s, &t)| (0..cfg.samples).map(move |i| (s, t, i))).collect();
    let rows: Vec<Result<Vec<String>>> = jobs
        .par_iter()
        .map(|&(s, t, i)| {
            let u = random_h_control(element_seed(cfg.seed, s, i), t, cfg.grid_n);
            let r = coercivity_residual(&model, &u, &u, cfg.nu)?;
            let u1_sq = r.norm_l2;
            Ok(vec![fmt(t), i.to_string(), fmt(r.q.re), fmt(r.q.im), fmt(u1_sq), fmt(r.q.im / u1_sq), fmt(r.residual.norm()), fmt(r.ratio)])
        })
        .collect();
    let mut w = csv_writer(&env.out, "coercivity_scan.csv", &["t", "sample", "re_q", "im_q", "u1_sq", "im_q_over_u1_sq", "residual", "ratio"])?;
    for r in rows {
        w.write_record(&r?).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(0)
}

fn drift(env: &Env) -> Result<i32> {
    let cfg = &env.cfg;
    let pot = cfg.potential()?;
    let ctx = DriftContext::new(&pot, cfg.k, cfg.j_max[1], cfg.order)?;
    let ts = cfg.t.values();
    let jobs: Vec<(usize, f64, usize)> = ts.iter().enumerate().flat_map(|(s, &t)| (0..cfg.samples).map(move |i| (s, t, i))).collect();
    let rows: Vec<Result<Vec<String>>> = jobs
        .par_iter()
        .map(|&(s, t, i)| {
            let u = random_h_control(element_seed(cfg.seed, s, i), t, cfg.grid_n);
            let c = ctx.certify(&u)?;
            let satisfied = c.lhs <= c.rhs_small_time + c.rhs_state + c.rhs_endpoint;
            Ok(vec![
                fmt(t),
                i.to_string(),
                c.order.to_string(),
                fmt(c.drift_coefficient),
                fmt(c.projection.re),
                fmt(c.projection.im),
                fmt(c.up_sq),
                fmt(c.lhs),
                fmt(c.rhs_small_time),
                fmt(c.rhs_state),
                fmt(c.rhs_endpoint),
                fmt(c.ratio),
                satisfied.to_string(),
            ])
        })
        .collect();
    let mut w = csv_writer(
        &env.out,
        "drift_scan.csv",
        &["t", "sample", "order", "drift_coefficient", "re_projection", "im_projection", "up_sq", "lhs", "rhs_small_time", "rhs_state", "rhs_endpoint", "ratio", "satisfied"],
    )?;
    for r in rows {
        w.write_record(&r?).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(0)
}

fn remainders(env: &Env) -> Result<i32> {
    let cfg = &env.cfg;
    let pot = cfg.potential()?;
    let galerkin = Galerkin::new(&pot, cfg.j_max[1].max(cfg.k));
    let ts = cfg.t.values();
    let jobs: Vec<(usize, f64, usize)> = ts.iter().enumerate().flat_map(|(s, &t)| (0..cfg.samples).map(move |i| (s, t, i))).collect();
    let rows: Vec<Result<Vec<String>>> = jobs
        .par_iter()
        .map(|&(s, t, i)| {
            let u = random_h_control(element_seed(cfg.seed, s, i), t, cfg.grid_n);
            let r = remainder_norms(&galerkin, &u, cfg.k)?;
            Ok(vec![fmt(t), i.to_string(), fmt(r.u1_l2), fmt(r.quadratic), fmt(r.quadratic_ratio), fmt(r.cubic), fmt(r.cubic_ratio)])
        })
        .collect();
    let mut w = csv_writer(&env.out, "remainders.csv", &["t", "sample", "u1_l2", "quadratic", "quadratic_ratio", "cubic", "cubic_ratio"])?;
    for r in rows {
        w.write_record(&r?).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(0)
}

fn synthesize(env: &Env) -> Result<i32> {
    let cfg = &env.cfg;
    let pot = cfg.potential()?;
    let opts = SynthesisOptions { j_sim: cfg.j_max[1], tolerance: cfg.tolerance, nu: cfg.nu, ..SynthesisOptions::default() };
    let ctx = SynthesisContext::new(&pot, cfg.k, opts)?;
    let target = cfg.target_state(ctx.galerkin.j_max())?;
    let mut code = 0;
    for (s, t) in cfg.t.values().into_iter().enumerate() {
        let rep = steer_full(&ctx, t, &target)?;
        let suffix = if cfg.t.values().len() > 1 { format!("_{s}") } else { String::new() };
        write_json(&env.out, &format!("report{suffix}.json"), &rep)?;
        if let Some(u) = &rep.control {
            u.write_csv(create(&env.out, &format!("control{suffix}.csv"))?)?;
        }
        println!("T={t}: {:?} ({})", rep.status, rep.message);
        if rep.status == SteeringStatus::Failed {
            code = 3;
        }
    }
    Ok(code)
}

fn moments(env: &Env) -> Result<i32> {
    let cfg = &env.cfg;
    if cfg.moments.is_empty() {
        return Err(StlcError::Config("moments requires a nonempty moment list".into()));
    }
    let targets: Vec<(usize, C64)> = cfg.moments.iter().map(|m| (m.j, C64::new(m.re, m.im))).collect();
    for (s, t) in cfg.t.values().into_iter().enumerate() {
        let sol = solve_moments(t, cfg.grid_n, &targets, cfg.regular)?;
        let suffix = if cfg.t.values().len() > 1 { format!("_{s}") } else { String::new() };
        write_json(&env.out, &format!("moments{suffix}.json"), &sol)?;
        sol.control.write_csv(create(&env.out, &format!("control{suffix}.csv"))?)?;
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let path = cli.config.ok_or_else(|| StlcError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::from_path(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(io)?;
    let env = Env { cfg, out };
    let run = || match cli.command {
        Command::Analyze => analyze(&env),
        Command::Kernels => kernels(&env),
        Command::CoercivityScan => coercivity_scan(&env),
        Command::Drift => drift(&env),
        Command::Remainders => remainders(&env),
        Command::Synthesize => synthesize(&env),
        Command::Moments => moments(&env),
    };
    match cli.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build().map_err(io)?.install(run),
        None => run(),
    }
}

/// Parses `args` and runs the verb; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> RunConfig {
        let c: RunConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        c
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = config(r#"{"potential":{"type":"linear"}}"#);
        assert_eq!(c.k, 0);
        assert_eq!(c.t.values(), vec![0.1]);
        assert_eq!(c.j_max, [J_SERIES, J_SIM]);
        let c = config(r#"{"potential":{"type":"linear"},"t":[0.05,0.1]}"#);
        assert_eq!(c.t.values().len(), 2);
        let bad: RunConfig = serde_json::from_str(r#"{"potential":{"type":"linear"},"t":[]}"#).unwrap();
        assert!(matches!(bad.validate(), Err(StlcError::Config(_))));
        let bad: RunConfig = serde_json::from_str(r#"{"potential":{"type":"linear"},"tolerance":0}"#).unwrap();
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"potential":{"type":"linear"},"bogus":1}"#).is_err());
    }

    #[test]
    fn target_specs() {
        let c = config(r#"{"potential":{"type":"linear"},"target":{"type":"mode","mode":1,"re":0,"im":0.001}}"#);
        let s = c.target_state(8).unwrap();
        assert!((s.norm() - 1.0).abs() < 1e-15);
        assert_eq!(s.coeff(1), C64::new(0.0, 1e-3));
        let c = config(r#"{"potential":{"type":"linear"},"target":{"type":"coeffs","coeffs":[[0.6,0],[0,0.8]]}}"#);
        assert_eq!(c.target_state(4).unwrap().coeff(1), C64::new(0.0, 0.8));
        let c = config(r#"{"potential":{"type":"linear"},"target":{"type":"coeffs","coeffs":[[0.6,0]]}}"#);
        assert!(matches!(c.target_state(4), Err(StlcError::NonUnitState(_))));
    }

    #[test]
    fn random_controls_are_reproducible_and_normalised() {
        let a = random_h_control(7, 0.3, 64);
        let b = random_h_control(7, 0.3, 64);
        assert_eq!(a, b);
        assert!((a.l2_norm() - 1.0).abs() < 1e-12);
        assert!(crate::signals::primitive(&a).endpoint().norm() < 1e-12);
        assert_ne!(element_seed(1, 0, 1), element_seed(1, 1, 0));
    }

    #[test]
    fn usage_errors_map_to_exit_code_two() {
        assert_eq!(run(["stlc", "nonsense"]), 2);
        assert_eq!(run(["stlc", "analyze"]), 2);
        assert_eq!(run(["stlc", "analyze", "--config", "/nonexistent/config.json"]), 2);
    }
}
