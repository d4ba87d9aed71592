//! Positive-result constructions: the bump χ, frequency-targeted probes,
//! moment problems, tangent controls along ±iφ_k and ±φ_k, complex motions,
//! projection steering and the damped fixed-point steering loop.

use crate::error::{Result, StlcError};
use crate::kernels::FrequencyKernel;
use crate::numerics::{bisect, composite, gl16, phi1};
use crate::quadform::pv_form;
use crate::signals::{concat, primitive, primitive_sobolev_norm, windowed_fourier, Control};
use crate::simulator::{Galerkin, StateVector, J_SIM};
use crate::spectral::{classify, interaction_coefficients, lambda, BalancedFamily, KernelModel, Potential, VerdictKind, J_SERIES, ORTHOGONALITY_TOL, TIE_FLOOR};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Required ratio |Θ_reg(ω₀) − a_k| / |Θ_pv(ω₀)| when choosing the pole index.
pub const POLE_DOMINANCE: f64 = 0.5;

/// Number of multiples 4pπ at which χ̂ is checked to vanish.
pub const P_CHECK: usize = 8;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn mollifier(y: f64) -> f64 {
    if y.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - y * y)).exp()
    }
}

fn mollifier_mass() -> f64 {
    composite(gl16(), -1.0, 1.0, 64, mollifier)
}

/// Smooth bump χ = f ⋆ ρ_r / ‖f ⋆ ρ_r‖ with f = 1_{[1/4,3/4]} and ρ_r the
/// standard mollifier of radius r.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub radius: f64,
    /// 1/‖f ⋆ ρ_r‖.
    pub norm_const: f64,
    mass: f64,
    /// χ(i/(n−1)), i = 0..n.
    pub samples: Vec<f64>,
    /// ‖χ‖_{L²} recomputed by quadrature.
    pub l2_norm: f64,
    /// max_{1≤p≤P_CHECK} |χ̂(4pπ)| by direct quadrature of χ.
    pub hat_zero_residual: f64,
}

impl Bump {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius <= 0.125) {
            return Err(StlcError::RadiusTooLarge);
        }
        let mut b = Bump { radius, norm_const: 1.0, mass: mollifier_mass(), samples: vec![], l2_norm: 0.0, hat_zero_residual: 0.0 };
        let (lo, hi) = (0.25 - radius, 0.75 + radius);
        let sq = composite(gl16(), lo, hi, 64, |x| b.eval(x).powi(2));
        b.norm_const = 1.0 / sq.sqrt();
        b.samples = (0..=1024).map(|i| b.eval(i as f64 / 1024.0)).collect();
        b.l2_norm = composite(gl16(), lo, hi, 64, |x| b.eval(x).powi(2)).sqrt();
        b.hat_zero_residual = (1..=P_CHECK).map(|p| b.hat_numeric(4.0 * PI * p as f64).norm()).fold(0.0, f64::max);
        Ok(b)
    }

    fn cdf(&self, y: f64) -> f64 {
        if y <= -1.0 {
            0.0
        } else if y >= 1.0 {
            1.0
        } else {
            composite(gl16(), -1.0, y, 48, mollifier) / self.mass
        }
    }

    /// χ(x).
    pub fn eval(&self, x: f64) -> f64 {
        let r = self.radius;
        self.norm_const * (self.cdf((x - 0.25) / r) - self.cdf((x - 0.75) / r))
    }

    /// χ̂(ω) = f̂(ω) ρ̂(rω) / ‖f ⋆ ρ_r‖ from the product formula.
    pub fn hat(&self, omega: f64) -> C64 {
        let f = if omega.abs() < 1e-8 {
            C64::new(0.5, 0.0) * C64::from_polar(1.0, -0.5 * omega)
        } else {
            (C64::from_polar(1.0, -0.25 * omega) - C64::from_polar(1.0, -0.75 * omega)) / C64::new(0.0, omega)
        };
        let xi = self.radius * omega;
        let panels = (xi.abs() / 2.0).ceil().max(64.0) as usize;
        let rho = composite(gl16(), -1.0, 1.0, panels, |y| mollifier(y) * (xi * y).cos()) / self.mass;
        f * (rho * self.norm_const)
    }

    /// χ̂(ω) by direct quadrature of χ (independent of the product formula).
    pub fn hat_numeric(&self, omega: f64) -> C64 {
        let (lo, hi) = (0.25 - self.radius, 0.75 + self.radius);
        let panels = 64 + (omega.abs() * (hi - lo) / 4.0).ceil() as usize;
        let re = composite(gl16(), lo, hi, panels, |x| self.eval(x) * (omega * x).cos());
        let im = composite(gl16(), lo, hi, panels, |x| -self.eval(x) * (omega * x).sin());
        C64::new(re, im)
    }

    /// max_{|ω| ≤ ω_max} |χ̂(ω)|⟨ω⟩⁴ on a grid of spacing 1/2.
    pub fn decay_constant(&self, omega_max: f64) -> f64 {
        let n = (2.0 * omega_max).ceil() as usize;
        (0..=n)
            .map(|i| {
                let w = 0.5 * i as f64;
                self.hat(w).norm() * (1.0 + w * w).powi(2)
            })
            .fold(0.0, f64::max)
    }
}

/// Asymptotic lower bound of |λ_j² c_j| and the index beyond which it holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleBand {
    pub a_mu: f64,
    pub j_mu: usize,
}

/// a_μ is 0.9 times the smallest nonzero parity limit (P ± Q) of λ_j²c_j
/// (smallest tail value of |λ_j²c_j| when there is no tail); J_μ is the first
/// index beyond which every usable parity class stays above a_μ.
pub fn pole_band(model: &KernelModel) -> PoleBand {
    let jm = model.j_max();
    let strength = |j: usize| (model.lambda[j].powi(2) * model.c[j]).abs();
    let (even, odd) = ((model.tail_p + model.tail_q).abs(), (model.tail_p - model.tail_q).abs());
    let limits: Vec<f64> = [even, odd].into_iter().filter(|&v| v > 1e-12 * (even + odd)).collect();
    let a_mu = if model.has_tail() && !limits.is_empty() {
        0.9 * limits.iter().cloned().fold(f64::INFINITY, f64::min)
    } else {
        0.9 * (jm / 2..=jm).map(strength).filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min)
    };
    if !a_mu.is_finite() || a_mu <= 0.0 {
        return PoleBand { a_mu: 0.0, j_mu: usize::MAX };
    }
    let usable = |j: usize| {
        let lim = if j % 2 == 0 { even } else { odd };
        !model.has_tail() || lim > 1e-12 * (even + odd)
    };
    let mut j_mu = 1;
    for j in (1..=jm).rev() {
        if usable(j) && strength(j) < a_mu {
            j_mu = j + 1;
            break;
        }
    }
    PoleBand { a_mu, j_mu }
}

/// Probe parameters: ω₀ = λ_{j₀} + ε₀β/T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub t: f64,
    pub eps0: i8,
    pub j0: usize,
    pub beta: f64,
}

impl ProbeSpec {
    pub fn omega0(&self) -> f64 {
        lambda(self.j0) + self.eps0 as f64 * self.beta / self.t
    }

    /// V(t) = 2T^{−1/2} cos(ω₀t) χ(t/T).
    pub fn eval(&self, chi: &Bump, t: f64) -> f64 {
        2.0 / self.t.sqrt() * (self.omega0() * t).cos() * chi.eval(t / self.t)
    }
}

/// Smallest admissible pole index: j ≥ J_μ, |λ_j²c_j| ≥ a_μ/2,
/// ω₀ ≥ max(1/T, 4β/T) and j > 3β/(2π²T) (ω₀ stays in the band of λ_j).
pub fn select_j0(model: &KernelModel, band: &PoleBand, t: f64, beta: f64, eps0: i8, j_limit: usize) -> Result<usize> {
    if band.a_mu <= 0.0 {
        return Err(StlcError::PoleTooWeak);
    }
    let containment = (3.0 * beta / (2.0 * PI * PI * t)).floor() as usize + 1;
    let start = band.j_mu.max(containment).max(1);
    for j in start..=j_limit.min(model.j_max()) {
        let strength = (model.lambda[j].powi(2) * model.c[j]).abs();
        let w0 = lambda(j) + eps0 as f64 * beta / t;
        if strength >= 0.5 * band.a_mu && w0 >= (1.0 / t).max(4.0 * beta / t) {
            return Ok(j);
        }
    }
    Err(StlcError::Precondition(format!(
        "no admissible pole index up to {j_limit} at T = {t}; increase T or the simulation truncation"
    )))
}

fn default_omega_window(spec: &ProbeSpec) -> f64 {
    spec.omega0() + 200.0 / spec.t
}

/// Result of [`probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub spec: ProbeSpec,
    /// Midpoint samples of V on the grid.
    pub control: Control,
    /// (1/2π) pv∫Θ_pv|V̂|².
    pub pv_value: f64,
    pub pv_residual: f64,
    /// Factor s with s²·pv_value = ±T.
    pub scale: f64,
    pub rescaled: Control,
    /// ‖V‖ before rescaling.
    pub l2_norm: f64,
}

/// Samples V on `n` cells and evaluates its principal-value form.
pub fn probe(model: &KernelModel, spec: &ProbeSpec, chi: &Bump, n: usize) -> Result<Probe> {
    let band = pole_band(model);
    let strength = (model.lambda.get(spec.j0).copied().unwrap_or(lambda(spec.j0)).powi(2) * model.c_at(spec.j0)).abs();
    if band.a_mu <= 0.0 || strength < 0.5 * band.a_mu {
        return Err(StlcError::PoleTooWeak);
    }
    let control = Control::from_fn(spec.t, n, |t| spec.eval(chi, t));
    let pv = pv_form(model, &control, default_omega_window(spec), false)?;
    let v = pv.value.re;
    let scale = (spec.t / v.abs()).sqrt();
    Ok(Probe {
        spec: *spec,
        l2_norm: control.l2_norm(),
        rescaled: control.scaled(scale),
        control,
        pv_value: v,
        pv_residual: pv.halving_residual,
        scale,
    })
}

/// Minimum-norm solution of a finite moment problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSolution {
    pub control: Control,
    /// |∫u e^{−iλ_j t} − d_j| per target.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Ridge parameter retained by the sweep.
    pub ridge: f64,
    pub u_l2: f64,
    /// N_T(u) = |u₁(T)| + ‖u₁‖.
    pub n_t: f64,
}

/// N_T(u) = |u₁(T)| + ‖u₁‖_{L²}.
pub fn cost_nt(u: &Control) -> f64 {
    let p = primitive(u);
    p.endpoint().norm() + p.l2_norm()
}

/// Real control on `n` cells of [0,T] with ∫₀ᵀ u e^{−iλ_j t} dt = d_j for the
/// given (j, d_j), of minimal L² norm, by a ridge-swept Gram solve with
/// iterative refinement. With `regular`, the endpoint constraint u₁(T) = 0
/// (the j = 0 moment) is added.
pub fn solve_moments(t: f64, n: usize, targets: &[(usize, C64)], regular: bool) -> Result<MomentSolution> {
    let mut tg: Vec<(usize, C64)> = targets.to_vec();
    tg.sort_by_key(|p| p.0);
    for w in tg.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(StlcError::Precondition(format!("duplicate moment index {}", w[0].0)));
        }
    }
    let scale = tg.iter().map(|p| p.1.norm()).fold(0.0, f64::max);
    if let Some(p) = tg.iter().find(|p| p.0 == 0) {
        if p.1.im.abs() > 1e-12 * scale.max(1e-300) {
            return Err(StlcError::Precondition("the j = 0 moment must be real".into()));
        }
        if regular && p.1.re.abs() > 1e-12 * scale.max(1e-300) {
            return Err(StlcError::Precondition("endpoint pinning requires d₀ = 0".into()));
        }
    } else if regular {
        tg.insert(0, (0, ZERO));
    }
    // Real rows: Re and Im of the cell integrals (one row for j = 0).
    let h = t / n as f64;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for &(j, d) in &tg {
        let l = lambda(j);
        let cell = phi1(C64::new(0.0, -l * h)) * h;
        let vals: Vec<C64> = (0..n).map(|m| cell * C64::from_polar(1.0, -l * m as f64 * h)).collect();
        rows.push(vals.iter().map(|v| v.re).collect());
        rhs.push(d.re);
        if j != 0 {
            rows.push(vals.iter().map(|v| v.im).collect());
            rhs.push(d.im);
        }
    }
    let m = rows.len();
    if m > n {
        return Err(StlcError::IllConditioned);
    }
    let r = DMatrix::from_fn(m, n, |i, c| rows[i][c]);
    let d = DVector::from_vec(rhs);
    let gram = &r * r.transpose();
    let trace = gram.trace() / m as f64;
    let tol = 1e-12 * scale.max(1.0);
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    let mut ridges = vec![0.0];
    ridges.extend((0..=12).map(|e| trace * 10f64.powi(-16 + e)));
    for ridge in ridges {
        let mut g = gram.clone();
        for i in 0..m {
            g[(i, i)] += ridge;
        }
        let Some(chol) = g.cholesky() else { continue };
        let mut y = chol.solve(&d);
        for _ in 0..4 {
            let resid = &d - &gram * &y;
            y += chol.solve(&resid);
        }
        let u = r.transpose() * &y;
        let res = (&d - &r * &u).amax();
        if !res.is_finite() {
            continue;
        }
        if best.as_ref().map_or(true, |b| res < b.1) {
            best = Some((ridge, res, u));
        }
        if res <= tol {
            break;
        }
    }
    let Some((ridge, res, u)) = best else { return Err(StlcError::IllConditioned) };
    if res > 1e-6 * scale.max(1.0) {
        return Err(StlcError::IllConditioned);
    }
    let control = Control::real(t, u.as_slice());
    let residuals: Vec<f64> = tg.iter().map(|&(j, dj)| (windowed_fourier(&control, lambda(j)) - dj).norm()).collect();
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(MomentSolution { u_l2: control.l2_norm(), n_t: cost_nt(&control), control, residuals, max_residual, ridge })
}

/// Tunable parameters of the synthesis pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub mollifier_radius: f64,
    /// β = 4π·p; `None` scans p = 1..=4 for |δ_u| ≤ 1/2.
    pub beta_multiple: Option<usize>,
    pub nu: f64,
    /// Budget on ‖U‖_{H̃^{−ν}} for null-moment probes.
    pub eta: Option<f64>,
    pub j_sim: usize,
    /// Damping θ of the fixed-point loop.
    pub theta: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Radius δ of admissible targets for full steering.
    pub delta: f64,
    /// Bound on ‖ψ0 − φ₀‖ + ‖target‖ for projection steering.
    pub projection_delta: f64,
    pub newton_iterations: usize,
    pub projection_tolerance: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            mollifier_radius: 0.125,
            beta_multiple: None,
            nu: 0.125,
            eta: None,
            j_sim: J_SIM,
            theta: 0.7,
            max_iterations: 200,
            tolerance: 1e-8,
            delta: 0.05,
            projection_delta: 0.5,
            newton_iterations: 40,
            projection_tolerance: 1e-11,
        }
    }
}

/// Shared state for synthesis at a fixed potential and mode.
#[derive(Debug, Clone)]
pub struct SynthesisContext {
    pub pot: Potential,
    pub k: usize,
    pub model: KernelModel,
    pub galerkin: Galerkin,
    pub chi: Bump,
    pub band: PoleBand,
    pub opts: SynthesisOptions,
    /// m_j ≠ 0 for j ≤ J_sim, j ≠ k.
    active: Vec<usize>,
    /// Θ of the simulated (truncated, tail-free) system.
    sim_kernel: FrequencyKernel,
    sim_a_k: f64,
}

impl SynthesisContext {
    pub fn new(pot: &Potential, k: usize, opts: SynthesisOptions) -> Result<Self> {
        let mk = pot.m(k);
        let norm = pot.norm();
        if mk.abs() > ORTHOGONALITY_TOL * norm.max(f64::MIN_POSITIVE) {
            return Err(StlcError::AssumptionViolated { k, value: mk.abs() });
        }
        let model = interaction_coefficients(pot, k, pot.j_max().max(J_SERIES))?;
        let galerkin = Galerkin::new(pot, opts.j_sim.max(k));
        let active = (0..=opts.j_sim).filter(|&j| j != k && pot.m(j).abs() > 1e-14 * norm).collect();
        let sim = model.truncated(opts.j_sim.max(k)).without_tail();
        Ok(Self {
            pot: pot.clone(),
            k,
            band: pole_band(&model),
            sim_a_k: sim.a_k,
            sim_kernel: FrequencyKernel::new(&sim),
            model,
            galerkin,
            chi: Bump::new(opts.mollifier_radius)?,
            opts,
            active,
        })
    }

    /// Predicted |Θ_reg(ω₀) − a_k| / |Θ_pv(ω₀)| on the simulated system,
    /// worst case over the two probe signs.
    pub fn pole_dominance(&self, t: f64, beta: f64, j0: usize) -> f64 {
        [1i8, -1]
            .iter()
            .map(|&e| {
                let w = lambda(j0) + e as f64 * beta / t;
                match self.sim_kernel.split(w) {
                    Ok(sp) if sp.j_omega == j0 && sp.pv_part != 0.0 => ((sp.reg_part - self.sim_a_k) / sp.pv_part).abs(),
                    _ => f64::INFINITY,
                }
            })
            .fold(0.0, f64::max)
    }

    /// Pole index for probes at horizon T: the smallest index passing
    /// [`select_j0`] (for both signs of ε₀) whose pole dominates the regular
    /// part of the simulated kernel by [`POLE_DOMINANCE`]; if none does, the
    /// most dominant admissible index.
    pub fn choose_pole(&self, t: f64, beta: f64, j_min: usize) -> Result<usize> {
        let lo = select_j0(&self.model, &self.band, t, beta, -1, self.opts.j_sim)?.max(select_j0(&self.model, &self.band, t, beta, 1, self.opts.j_sim)?).max(j_min);
        let mut best: Option<(usize, f64)> = None;
        for j in lo..=self.opts.j_sim {
            let strength = (self.model.lambda[j].powi(2) * self.model.c[j]).abs();
            if strength < 0.5 * self.band.a_mu {
                continue;
            }
            let r = self.pole_dominance(t, beta, j);
            if r <= POLE_DOMINANCE {
                return Ok(j);
            }
            if best.map_or(true, |b| r < b.1) {
                best = Some((j, r));
            }
        }
        best.map(|b| b.0).ok_or(StlcError::IncreaseJ0)
    }

    /// Grid size resolving both ω₀ and the simulated spectrum: a power of two
    /// with h·max(λ_J, ω₀) ≤ 1/2.
    pub fn grid_size(&self, t: f64, omega0: f64) -> usize {
        let need = (2.0 * t * lambda(self.opts.j_sim).max(omega0)).ceil() as usize;
        need.max(1024).next_power_of_two()
    }

    /// max over active j of |m_j û(λ_j)| / ‖u‖.
    pub fn moment_residual(&self, u: &Control) -> f64 {
        let nu = u.l2_norm().max(f64::MIN_POSITIVE);
        self.active.iter().map(|&j| (self.pot.m(j) * windowed_fourier(u, lambda(j))).norm()).fold(0.0, f64::max) / nu
    }
}

/// Null-moment probe: u = ∂_t U with U = c(V + W) vanishing at 0 and T,
/// û(λ_j) = 0 on the active modes and (1/2π)pv∫Θ_pv|Û|² = ±T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullProbe {
    pub spec: ProbeSpec,
    /// u = ∂_t U (piecewise constant; U is its primitive).
    pub derivative: Control,
    /// (1/2π)pv∫Θ_pv|Û|² after rescaling.
    pub pv_value: f64,
    /// c with U = c(V + W), V normalised to pv = ±T.
    pub rescale: f64,
    /// Relative deviation δ_u of pv(V) from −ε₀Tλ_{j₀}²c_{j₀}/β.
    pub delta_u: f64,
    pub moment_residual: f64,
    /// ‖W‖/‖V‖ at the primitive level.
    pub correction_ratio: f64,
    /// ‖U‖_{H̃^{−ν}}.
    pub neg_norm: f64,
}

fn nodal_derivative(spec: &ProbeSpec, chi: &Bump, n: usize) -> Control {
    let h = spec.t / n as f64;
    let nodes: Vec<f64> = (0..=n).map(|i| if i == 0 || i == n { 0.0 } else { spec.eval(chi, i as f64 * h) }).collect();
    Control::real(spec.t, &nodes.windows(2).map(|w| (w[1] - w[0]) / h).collect::<Vec<_>>())
}

/// Builds U^± of the requested pv sign at horizon T.
pub fn null_moment_probe(ctx: &SynthesisContext, t: f64, sign: i8) -> Result<NullProbe> {
    null_moment_probe_from(ctx, t, sign, 1)
}

/// As [`null_moment_probe`] with pole indices restricted to j₀ ≥ `j_min`.
pub fn null_moment_probe_from(ctx: &SynthesisContext, t: f64, sign: i8, j_min: usize) -> Result<NullProbe> {
    let multiples: Vec<usize> = match ctx.opts.beta_multiple {
        Some(p) => vec![p],
        None => (1..=4).collect(),
    };
    let mut best: Option<NullProbe> = None;
    let mut last_err = StlcError::PoleTooWeak;
    for p in multiples {
        match null_probe_with_beta(ctx, t, sign, 4.0 * PI * p as f64, j_min) {
            Ok(np) => {
                let ok = np.delta_u.abs() <= 0.5;
                if best.as_ref().map_or(true, |b| np.delta_u.abs() < b.delta_u.abs()) {
                    best = Some(np);
                }
                if ok {
                    break;
                }
            }
            Err(e) => last_err = e,
        }
    }
    best.ok_or(last_err)
}

fn null_probe_with_beta(ctx: &SynthesisContext, t: f64, sign: i8, beta: f64, j_min: usize) -> Result<NullProbe> {
    let model = &ctx.model;
    if ctx.band.a_mu <= 0.0 {
        return Err(StlcError::PoleTooWeak);
    }
    let s = sign.signum();
    let j0 = ctx.choose_pole(t, beta, j_min)?;
    let c0 = model.c[j0];
    // pv sign = −ε₀·sign(c_{j₀}).
    let spec = ProbeSpec { t, eps0: -s * c0.signum() as i8, j0, beta };
    let n = ctx.grid_size(t, spec.omega0());
    let window = default_omega_window(&spec);
    let uv = nodal_derivative(&spec, &ctx.chi, n);
    let pv_v = pv_form(model, &uv, window, true)?.value.re;
    if pv_v == 0.0 || pv_v.signum() as i8 != s {
        return Err(StlcError::PoleTooWeak);
    }
    let predicted = -(spec.eps0 as f64) * t * lambda(spec.j0).powi(2) * c0 / beta;
    let delta_u = pv_v / predicted - 1.0;
    let uv = uv.scaled((t / pv_v.abs()).sqrt());
    let targets: Vec<(usize, C64)> = ctx.active.iter().filter(|&&j| j != 0).map(|&j| (j, -windowed_fourier(&uv, lambda(j)))).collect();
    let w = solve_moments(t, n, &targets, true)?.control;
    let u = uv.axpy(1.0, &w)?;
    let pv_u = pv_form(model, &u, window, true)?.value.re;
    if pv_u.signum() as i8 != s {
        return Err(StlcError::IncreaseJ0);
    }
    let rescale = (t / pv_u.abs()).sqrt();
    let u = u.scaled(rescale);
    let neg_norm = primitive_sobolev_norm(&u, ctx.opts.nu).value;
    let neg_norm = if ctx.opts.nu > 0.0 { primitive_sobolev_norm(&u, -ctx.opts.nu).value } else { neg_norm };
    if let Some(eta) = ctx.opts.eta {
        if neg_norm > eta {
            return Err(StlcError::IncreaseJ0);
        }
    }
    Ok(NullProbe {
        spec,
        pv_value: pv_u * rescale * rescale,
        rescale,
        delta_u,
        moment_residual: ctx.moment_residual(&u),
        correction_ratio: primitive(&w).l2_norm() / primitive(&uv).l2_norm(),
        neg_norm,
        derivative: u,
    })
}

/// Certificate attached to a tangent control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentCertificate {
    pub t: f64,
    /// +1 for u^{+i}/u^{+1}, −1 for u^{−i}/u^{−1}.
    pub sign: i8,
    pub j0: usize,
    pub beta: f64,
    pub omega0: f64,
    /// Final rescaling factor applied to the probe.
    pub scale: f64,
    /// ‖ψ₁(T)‖ on the simulated modes.
    pub psi1_norm: f64,
    /// max_j |m_j û(λ_j)| / ‖u‖.
    pub moment_residual: f64,
    /// ⟨ψ₂(T), φ_k⟩.
    pub psi2: C64,
    /// |Re⟨ψ₂(T),φ_k⟩|/T² (i-tangents) or |Im⟨ψ₂(T),φ_k⟩|/T³ (real tangents).
    pub leakage_ratio: f64,
    pub u_l2: f64,
    pub u1_l2: f64,
    pub u1_endpoint: f64,
}

/// A synthesized control with its certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentControl {
    pub control: Control,
    pub certificate: TangentCertificate,
}

fn certify(ctx: &SynthesisContext, u: &Control, sign: i8, spec: &ProbeSpec, scale: f64, real: bool) -> TangentCertificate {
    let psi2 = ctx.galerkin.second_order(u, ctx.k);
    let pu = primitive(u);
    let t = u.t;
    TangentCertificate {
        t,
        sign,
        j0: spec.j0,
        beta: spec.beta,
        omega0: spec.omega0(),
        scale,
        psi1_norm: ctx.galerkin.linearized(u).norm(),
        moment_residual: ctx.moment_residual(u),
        psi2,
        leakage_ratio: if real { psi2.im.abs() / t.powi(3) } else { psi2.re.abs() / (t * t) },
        u_l2: u.l2_norm(),
        u1_l2: pu.l2_norm(),
        u1_endpoint: pu.endpoint().norm(),
    }
}

/// The pair u^{+i}, u^{−i} at horizon T without checking the classifier
/// verdict (used by the steering loop, where failure is reported instead).
/// When both probes move Im⟨ψ₂,φ_k⟩ the same way, the pole index is raised.
pub fn i_tangent_pair(ctx: &SynthesisContext, t: f64) -> Result<(TangentControl, TangentControl)> {
    let mut j_min = 1;
    loop {
        let probes = [null_moment_probe_from(ctx, t, 1, j_min)?, null_moment_probe_from(ctx, t, -1, j_min)?];
        let measured: Vec<C64> = probes.iter().map(|p| ctx.galerkin.second_order(&p.derivative, ctx.k)).collect();
        let pick = |want: f64| -> Option<usize> {
            (0..2).filter(|&i| measured[i].im * want > 0.0).max_by(|&a, &b| {
                let ea = measured[a].im.abs() / primitive(&probes[a].derivative).l2_norm_sq();
                let eb = measured[b].im.abs() / primitive(&probes[b].derivative).l2_norm_sq();
                ea.partial_cmp(&eb).unwrap()
            })
        };
        let (Some(ip), Some(im)) = (pick(1.0), pick(-1.0)) else {
            j_min = probes.iter().map(|p| p.spec.j0).max().unwrap_or(0) + 2;
            if j_min > ctx.opts.j_sim {
                return Err(StlcError::TangentBasisDegenerate);
            }
            continue;
        };
        let build = |i: usize, want: i8| -> TangentControl {
            let scale = (t / measured[i].im.abs()).sqrt();
            let u = probes[i].derivative.scaled(scale);
            let certificate = certify(ctx, &u, want, &probes[i].spec, scale, false);
            TangentControl { control: u, certificate }
        };
        return Ok((build(ip, 1), build(im, -1)));
    }
}

fn require_candidate(pot: &Potential, k: usize) -> Result<()> {
    let v = classify(pot, k);
    if v.kind != VerdictKind::QuadraticStlcCandidate {
        return Err(StlcError::Precondition(format!("tangent controls need a QUADRATIC_STLC_CANDIDATE potential, verdict {}", v.kind)));
    }
    Ok(())
}

/// u^{±i} with Im⟨ψ₂(T),φ_k⟩ = ±T, ψ₁(T) = 0 and u₁(T) = 0.
pub fn tangent_controls(ctx: &SynthesisContext, t: f64) -> Result<(TangentControl, TangentControl)> {
    require_candidate(&ctx.pot, ctx.k)?;
    i_tangent_pair(ctx, t)
}

/// Real tangent controls u^{±1} with their construction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealTangentPair {
    pub plus: TangentControl,
    pub minus: TangentControl,
    /// M from the smallness condition (2C₁+λ_k)/(2λ_kM) ≤ 1/4.
    pub m_required: usize,
    /// M actually used (capped so that the sub-horizon probes stay resolvable).
    pub m_used: usize,
    /// α in Re⟨ψ₂(T),φ_k⟩ = (α/2)(λ_k/2M)T² before rescaling.
    pub alpha: f64,
    /// C₁ = max |Re⟨ψ₂(T_M),φ_k⟩|/T_M² of the sub-horizon i-tangents.
    pub c1: f64,
}

/// u^{+1} = u^{+i} ⋄ 0 ⋄ u^{−i} and u^{−1} = u^{−i} ⋄ 0 ⋄ u^{+i} on sub-horizons
/// T_M = T/(2M), rescaled so that Re⟨ψ₂(T),φ_k⟩ = ±T².
pub fn real_tangent_controls(ctx: &SynthesisContext, t: f64) -> Result<RealTangentPair> {
    if ctx.k == 0 {
        return Err(StlcError::RealTangentUnavailable);
    }
    require_candidate(&ctx.pot, ctx.k)?;
    let lk = lambda(ctx.k);
    // Largest M whose sub-horizon still admits a dominant pole on the simulated modes.
    let beta = 4.0 * PI * ctx.opts.beta_multiple.unwrap_or(1) as f64;
    let feasible = |m: usize| {
        let tm = t / (2.0 * m as f64);
        ctx.choose_pole(tm, beta, 1).map_or(false, |j| ctx.pole_dominance(tm, beta, j) <= POLE_DOMINANCE)
    };
    let mut m_cap = 1;
    while m_cap < 64 && feasible(m_cap + 1) {
        m_cap += 1;
    }
    let (mut m_used, mut pair) = (1usize, i_tangent_pair(ctx, t / 2.0)?);
    let c1_of = |p: &(TangentControl, TangentControl), tm: f64| p.0.certificate.psi2.re.abs().max(p.1.certificate.psi2.re.abs()) / (tm * tm);
    let mut c1 = c1_of(&pair, t / 2.0);
    let m_required = ((2.0 * (2.0 * c1 + lk) / lk).ceil() as usize).max(1);
    let target_m = m_required.min(m_cap);
    if target_m != m_used {
        m_used = target_m;
        pair = i_tangent_pair(ctx, t / (2.0 * m_used as f64))?;
        c1 = c1_of(&pair, t / (2.0 * m_used as f64));
    }
    let piece = &pair.0.control;
    let gap = (m_used > 1).then(|| Control::zeros(piece.t * (2 * m_used - 2) as f64, piece.n() * (2 * m_used - 2)));
    let join = |a: &Control, b: &Control| -> Control {
        match &gap {
            Some(g) => concat(&concat(a, g), b),
            None => concat(a, b),
        }
    };
    let raw_plus = join(&pair.0.control, &pair.1.control);
    let raw_minus = join(&pair.1.control, &pair.0.control);
    let x_plus = ctx.galerkin.second_order(&raw_plus, ctx.k);
    let alpha = 4.0 * m_used as f64 * x_plus.re / (lk * t * t);
    let build = |raw: &Control, want: i8| -> Result<TangentControl> {
        let x = ctx.galerkin.second_order(raw, ctx.k);
        if x.re * want as f64 <= 0.0 {
            return Err(StlcError::TangentBasisDegenerate);
        }
        let scale = (t * t / x.re.abs()).sqrt();
        let u = raw.scaled(scale);
        let spec = ProbeSpec { t: piece.t, eps0: 0, j0: pair.0.certificate.j0, beta: pair.0.certificate.beta };
        Ok(TangentControl { certificate: certify(ctx, &u, want, &spec, scale, true), control: u })
    };
    Ok(RealTangentPair { plus: build(&raw_plus, 1)?, minus: build(&raw_minus, -1)?, m_required, m_used, alpha, c1 })
}

/// i-tangent pieces on a half horizon, reused by every complex motion.
#[derive(Debug, Clone)]
pub struct TangentBasis {
    /// Horizon of the composed motion (two pieces).
    pub t: f64,
    pub plus: TangentControl,
    pub minus: TangentControl,
    /// ⟨ψ₂,φ_k⟩ of the pieces.
    pub x_plus: C64,
    pub x_minus: C64,
    k: usize,
}

impl TangentBasis {
    /// Builds u^{±i} on [0, T/2].
    pub fn new(ctx: &SynthesisContext, t: f64) -> Result<Self> {
        let (plus, minus) = i_tangent_pair(ctx, 0.5 * t)?;
        Ok(Self { t, x_plus: plus.certificate.psi2, x_minus: minus.certificate.psi2, plus, minus, k: ctx.k })
    }

    /// b_{±i} = X_±/(T/2) (≈ ±i for small T).
    pub fn normalized(&self) -> (C64, C64) {
        (self.x_plus / (0.5 * self.t), self.x_minus / (0.5 * self.t))
    }
}

/// Complex quadratic motion v^z with its cost report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMotion {
    pub control: Control,
    pub z: C64,
    /// Predicted ⟨ψ₂(T), φ_k⟩ from the measured basis.
    pub predicted: C64,
    /// Weights (α, β) on the first and second pieces.
    pub weights: (f64, f64),
    /// Signs of the i-tangent used in each piece.
    pub signs: (i8, i8),
    pub u1_l2: f64,
    /// (|Re z|/T²)^{1/2} + (|Im z|/T)^{1/2}.
    pub cost_bound: f64,
    pub cost_ratio: f64,
}

/// v^z = √α u^{a} ⋄ √β u^{b} with z = α X_a e^{−iλ_kT/2} + β X_b, α, β ≥ 0.
/// For k = 0 only Im z is addressed (the real part is fixed by normalisation).
pub fn complex_motion(basis: &TangentBasis, z: C64) -> Result<ComplexMotion> {
    let t = basis.t;
    let half = basis.plus.control.t;
    let n = basis.plus.control.n();
    let cost_bound = (z.re.abs() / (t * t)).sqrt() + (z.im.abs() / t).sqrt();
    if z == ZERO {
        let control = Control::zeros(t, 2 * n);
        return Ok(ComplexMotion { control, z, predicted: ZERO, weights: (0.0, 0.0), signs: (0, 0), u1_l2: 0.0, cost_bound, cost_ratio: 0.0 });
    }
    let rot = C64::from_polar(1.0, -lambda(basis.k) * half);
    let x = |s: i8| if s > 0 { basis.x_plus } else { basis.x_minus };
    let piece = |s: i8| if s > 0 { &basis.plus.control } else { &basis.minus.control };
    let mut best: Option<(f64, f64, i8, i8)> = None;
    if basis.k == 0 {
        for s in [1i8, -1] {
            let d = x(s).im;
            if d * z.im > 0.0 {
                let a = z.im / d;
                best = Some((0.5 * a, 0.5 * a, s, s));
            }
        }
    } else {
        for a in [1i8, -1] {
            for b in [1i8, -1] {
                let (d1, d2) = (x(a) * rot, x(b));
                let det = d1.re * d2.im - d1.im * d2.re;
                if det.abs() < 1e-3 * d1.norm() * d2.norm() {
                    continue;
                }
                let al = (z.re * d2.im - z.im * d2.re) / det;
                let be = (d1.re * z.im - d1.im * z.re) / det;
                if al >= 0.0 && be >= 0.0 && best.map_or(true, |p| al + be < p.0 + p.1) {
                    best = Some((al, be, a, b));
                }
            }
        }
    }
    let (al, be, a, b) = best.ok_or(StlcError::TangentBasisDegenerate)?;
    let control = concat(&piece(a).scaled(al.sqrt()), &piece(b).scaled(be.sqrt()));
    let predicted = if basis.k == 0 { x(a) * al + x(b) * be } else { x(a) * rot * al + x(b) * be };
    let u1_l2 = primitive(&control).l2_norm();
    Ok(ComplexMotion { control, z, predicted, weights: (al, be), signs: (a, b), u1_l2, cost_bound, cost_ratio: u1_l2 / cost_bound })
}

/// P_kψ = ψ − ⟨ψ,φ_k⟩φ_k − Re⟨ψ,φ₀⟩φ₀.
pub fn project_k(psi: &StateVector, k: usize) -> StateVector {
    let mut c = psi.coeffs.clone();
    c[k] = ZERO;
    c[0] = C64::new(0.0, c[0].im);
    if k == 0 {
        c[0] = ZERO;
    }
    StateVector { coeffs: c, time: psi.time }
}

/// Outcome of [`steer_projection`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub control: Control,
    pub iterations: usize,
    /// ‖P_kψ(T) − target‖.
    pub error: f64,
    pub u_l2: f64,
    pub n_t: f64,
    /// ‖ψ0 − φ₀‖ + ‖target‖.
    pub data_size: f64,
    pub cost_ratio_l2: f64,
    pub cost_ratio_nt: f64,
    pub trace: Vec<f64>,
}

/// Chord iteration on the linearised moment map at φ₀ for P_kψ(T; u, ψ0) = target,
/// the k-th moment pinned to zero, with step halving whenever a full step
/// does not reduce the residual. Controls live on `n` cells of [0,T].
pub fn steer_projection(ctx: &SynthesisContext, t: f64, n: usize, psi0: &StateVector, target: &StateVector) -> Result<ProjectionReport> {
    steer_projection_from(ctx, t, n, psi0, target, None)
}

/// As [`steer_projection`], starting from `initial` (e.g. the previous
/// solution inside the steering loop).
pub fn steer_projection_from(
    ctx: &SynthesisContext,
    t: f64,
    n: usize,
    psi0: &StateVector,
    target: &StateVector,
    initial: Option<&Control>,
) -> Result<ProjectionReport> {
    let k = ctx.k;
    let j = ctx.galerkin.j_max();
    let tnorm = target.norm();
    if target.coeff(k).norm() > 1e-12 * tnorm.max(1.0) || target.coeff(0).re.abs() > 1e-12 * tnorm.max(1.0) {
        return Err(StlcError::Precondition("target must lie in V_k (no φ_k and no Re φ₀ component)".into()));
    }
    let data_size = psi0.distance(&StateVector::ground(j)) + tnorm;
    if data_size > ctx.opts.projection_delta {
        return Err(StlcError::Precondition(format!("‖ψ0 − φ₀‖ + ‖target‖ = {data_size:.3e} exceeds δ = {}", ctx.opts.projection_delta)));
    }
    let mut target = target.clone();
    target.coeffs.resize(j + 1, ZERO);
    let residual = |u: &Control| -> Result<(Vec<C64>, f64)> {
        let p = project_k(&ctx.galerkin.final_state(u, psi0)?, k);
        let r: Vec<C64> = target.coeffs.iter().zip(&p.coeffs).map(|(a, b)| a - b).collect();
        let err = r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        Ok((r, err))
    };
    let mut u = match initial {
        Some(c) if c.n() == n && (c.t - t).abs() <= 1e-12 * t => c.clone(),
        _ => Control::zeros(t, n),
    };
    let (mut r, mut err) = residual(&u)?;
    let mut trace = vec![err];
    let tol = ctx.opts.projection_tolerance;
    for it in 0..=ctx.opts.newton_iterations {
        if err <= tol {
            let n_t = cost_nt(&u);
            let ul2 = u.l2_norm();
            let ds = data_size.max(f64::MIN_POSITIVE);
            return Ok(ProjectionReport {
                iterations: it,
                error: err,
                u_l2: ul2,
                n_t,
                data_size,
                cost_ratio_l2: ul2 / ds,
                cost_ratio_nt: n_t / ds,
                trace,
                control: u,
            });
        }
        if it == ctx.opts.newton_iterations {
            break;
        }
        let mut targets = Vec::new();
        for jj in 0..=j {
            let mj = ctx.pot.m(jj);
            if jj == k {
                targets.push((jj, ZERO));
            } else if jj == 0 {
                if mj.abs() > 1e-14 {
                    targets.push((0, C64::new(r[0].im / mj, 0.0)));
                }
            } else if ctx.active.contains(&jj) {
                let d = r[jj] * C64::from_polar(1.0, lambda(jj) * t) / C64::new(0.0, mj);
                targets.push((jj, d.conj()));
            }
        }
        let du = solve_moments(t, n, &targets, false)?.control;
        let mut step = 1.0;
        let mut accepted = false;
        while step >= 1.0 / 64.0 {
            let trial = u.axpy(step, &du)?;
            let (tr, te) = residual(&trial)?;
            if te.is_finite() && te < err {
                u = trial;
                r = tr;
                err = te;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(err);
        if !accepted {
            break;
        }
    }
    Err(StlcError::Divergence)
}

/// Status of a steering run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SteeringStatus {
    Converged,
    Failed,
}

/// One fixed-point iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub z: C64,
    /// z* − ⟨ψ(T) − φ₀, φ_k⟩.
    pub residual: C64,
    pub projection_error: f64,
    pub state_error: f64,
}

/// Report of [`steer_full`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringReport {
    pub status: SteeringStatus,
    pub message: String,
    pub control: Option<Control>,
    /// ‖ψ(T) − ψ*‖.
    pub final_error: f64,
    pub iterations: usize,
    pub u_l2: f64,
    pub u1_l2: f64,
    pub u1_endpoint: f64,
    pub n_t: f64,
    /// |⟨ψ*,φ_k⟩|^{1/2} + ‖ψ* − φ₀‖.
    pub cost_l2_bound: f64,
    /// (|Re⟨ψ*,φ_k⟩|/T²)^{1/2} + (|Im⟨ψ*,φ_k⟩|/T)^{1/2} + ‖ψ* − φ₀‖.
    pub cost_h1_bound: f64,
    pub cost_l2_ratio: f64,
    pub cost_h1_ratio: f64,
    pub trace: Vec<IterationRecord>,
}

impl SteeringReport {
    fn failed(message: String, trace: Vec<IterationRecord>, final_error: f64) -> Self {
        Self {
            status: SteeringStatus::Failed,
            message,
            control: None,
            final_error,
            iterations: trace.len(),
            u_l2: f64::NAN,
            u1_l2: f64::NAN,
            u1_endpoint: f64::NAN,
            n_t: f64::NAN,
            cost_l2_bound: f64::NAN,
            cost_h1_bound: f64::NAN,
            cost_l2_ratio: f64::NAN,
            cost_h1_ratio: f64::NAN,
            trace,
        }
    }
}

/// Steers φ₀ to ψ* at time T with u = v^{z'} ⋄ w on [0,T/2] ⋄ [T/2,T], where
/// v^{z'} is a complex motion (z' = z e^{iλ_kT/2} compensates the free
/// rotation of the second half) and w solves the projected problem; z is
/// updated by the damped iteration z ← z + θ(z* − ⟨ψ(T) − φ₀, φ_k⟩).
pub fn steer_full(ctx: &SynthesisContext, t: f64, target: &StateVector) -> Result<SteeringReport> {
    let k = ctx.k;
    let j = ctx.galerkin.j_max();
    let mut target = target.clone();
    target.coeffs.resize(j + 1, ZERO);
    let ground = StateVector::ground(j);
    let dist = target.distance(&ground);
    if dist > ctx.opts.delta {
        return Err(StlcError::Precondition(format!("‖ψ* − φ₀‖ = {dist:.3e} exceeds δ = {}", ctx.opts.delta)));
    }
    let zk = target.coeff(k) - if k == 0 { C64::new(1.0, 0.0) } else { ZERO };
    let z_star = target.coeff(k);
    let cost_l2_bound = z_star.norm().sqrt() + dist;
    let cost_h1_bound = (z_star.re.abs() / (t * t)).sqrt() + (z_star.im.abs() / t).sqrt() + dist;
    if dist == 0.0 {
        return Ok(SteeringReport {
            status: SteeringStatus::Converged,
            message: "target is the ground state".into(),
            control: Some(Control::zeros(t, 1)),
            final_error: 0.0,
            iterations: 0,
            u_l2: 0.0,
            u1_l2: 0.0,
            u1_endpoint: 0.0,
            n_t: 0.0,
            cost_l2_bound,
            cost_h1_bound,
            cost_l2_ratio: 0.0,
            cost_h1_ratio: 0.0,
            trace: vec![],
        });
    }
    let proj_target = project_k(&target, k);
    let basis = match TangentBasis::new(ctx, 0.5 * t) {
        Ok(b) => b,
        Err(e) => return Ok(SteeringReport::failed(format!("tangent basis unavailable: {e}"), vec![], dist)),
    };
    let n_half = 2 * basis.plus.control.n();
    let rot = C64::from_polar(1.0, lambda(k) * 0.5 * t);
    let only_im = |c: C64| if k == 0 { C64::new(0.0, c.im) } else { c };
    let mut z = only_im(zk);
    let mut trace = Vec::new();
    let mut best_err = f64::INFINITY;
    let mut w_prev: Option<Control> = None;
    for _ in 0..ctx.opts.max_iterations {
        let v = match complex_motion(&basis, z * rot) {
            Ok(m) => m.control,
            Err(e) => return Ok(SteeringReport::failed(format!("complex motion failed: {e}"), trace, best_err)),
        };
        let mid = ctx.galerkin.final_state(&v, &ground)?;
        let w = match steer_projection_from(ctx, 0.5 * t, n_half, &StateVector::from_coeffs(mid.coeffs.clone()), &proj_target, w_prev.as_ref()) {
            Ok(r) => r.control,
            Err(e) => return Ok(SteeringReport::failed(format!("projection step failed: {e}"), trace, best_err)),
        };
        let u = concat(&v, &w);
        w_prev = Some(w);
        let psi = ctx.galerkin.final_state(&u, &ground)?;
        let achieved = psi.coeff(k) - if k == 0 { C64::new(1.0, 0.0) } else { ZERO };
        let residual = only_im(zk - achieved);
        let projection_error = project_k(&psi, k).distance(&proj_target);
        let state_error = psi.distance(&target);
        best_err = best_err.min(state_error);
        trace.push(IterationRecord { z, residual, projection_error, state_error });
        if !state_error.is_finite() || residual.norm() > 10.0 * zk.norm() {
            return Ok(SteeringReport::failed("fixed-point iteration diverged".into(), trace, best_err));
        }
        if residual.norm() <= ctx.opts.tolerance && projection_error <= ctx.opts.tolerance {
            let pu = primitive(&u);
            let (u_l2, u1_l2, u1_endpoint) = (u.l2_norm(), pu.l2_norm(), pu.endpoint().norm());
            return Ok(SteeringReport {
                status: SteeringStatus::Converged,
                message: "converged".into(),
                final_error: state_error,
                iterations: trace.len(),
                u_l2,
                u1_l2,
                u1_endpoint,
                n_t: u1_l2 + u1_endpoint,
                cost_l2_bound,
                cost_h1_bound,
                cost_l2_ratio: u_l2 / cost_l2_bound,
                cost_h1_ratio: u1_l2 / cost_h1_bound,
                trace,
                control: Some(u),
            });
        }
        z += residual * ctx.opts.theta;
    }
    Ok(SteeringReport::failed("iteration cap reached".into(), trace, best_err))
}

/// Balanced potential found on a family.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedPotential {
    pub potential: Potential,
    pub s: f64,
    pub a_k: f64,
    pub scale: f64,
    pub verdict: VerdictKind,
}

fn family_member(family: &BalancedFamily, k: usize, s: f64, j_max: usize) -> Potential {
    let n = family.a.len().max(family.b.len());
    let coeffs: Vec<f64> = (0..n).map(|r| family.a.get(r).copied().unwrap_or(0.0) + s * family.b.get(r).copied().unwrap_or(0.0)).collect();
    Potential::polynomial(&coeffs, j_max).project_out(k)
}

/// Root of s ↦ a_k(P_k(μ_A + sμ_B)) on the family's scan range, with the
/// classifier verdict of the result.
pub fn find_balanced_potential(k: usize, family: &BalancedFamily) -> Result<BalancedPotential> {
    let j = J_SERIES;
    let a_k = |s: f64| -> Result<(f64, f64)> {
        let m = interaction_coefficients(&family_member(family, k, s, j), k, j)?;
        Ok((m.a_k, m.a.abs() + 0.5 * lambda(k) * m.k0.abs() + TIE_FLOOR))
    };
    if family.b.iter().all(|&b| b == 0.0) {
        return Err(StlcError::NoBracket);
    }
    let [lo, hi] = family.s_range;
    let n = family.scan.max(2);
    let mut prev = (lo, a_k(lo)?.0);
    let mut bracket = None;
    for i in 1..=n {
        let s = lo + (hi - lo) * i as f64 / n as f64;
        let v = a_k(s)?.0;
        if v == 0.0 || v.signum() != prev.1.signum() {
            bracket = Some((prev.0, s));
            break;
        }
        prev = (s, v);
    }
    let (a, b) = bracket.ok_or(StlcError::NoBracket)?;
    let s = bisect(|s| a_k(s).map(|v| v.0).unwrap_or(f64::NAN), a, b);
    let potential = family_member(family, k, s, j);
    let (ak, scale) = a_k(s)?;
    let verdict = classify(&potential, k).kind;
    Ok(BalancedPotential { potential, s, a_k: ak, scale, verdict })
}
