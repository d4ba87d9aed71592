//! Piecewise-constant control signals on [0, T]: exact primitives, zero-mean
//! projection, exact Fourier transforms, fractional Sobolev norms and
//! concatenation.

use crate::error::{Result, StlcError};
use crate::numerics::{dd_exp2, gl8, hurwitz_zeta, phi1};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Maximum cell count produced by grid refinement in [`concat`].
pub const MAX_CELLS: usize = 1 << 22;

/// Piecewise-constant signal on the uniform grid [(n/N)T, ((n+1)/N)T).
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    /// Horizon T.
    pub t: f64,
    /// Cell values.
    pub values: Vec<C64>,
    /// Real-flagged signals carry zero imaginary parts.
    pub real: bool,
}

impl Control {
    /// Real control from samples.
    pub fn real(t: f64, values: &[f64]) -> Self {
        assert!(t > 0.0 && !values.is_empty(), "control needs T > 0 and N ≥ 1");
        Self { t, values: values.iter().map(|&v| C64::new(v, 0.0)).collect(), real: true }
    }

    /// Complex control from samples.
    pub fn complex(t: f64, values: Vec<C64>) -> Self {
        assert!(t > 0.0 && !values.is_empty(), "control needs T > 0 and N ≥ 1");
        Self { t, values, real: false }
    }

    /// Zero control with N cells.
    pub fn zeros(t: f64, n: usize) -> Self {
        Self::real(t, &vec![0.0; n])
    }

    /// Constant control.
    pub fn constant(t: f64, n: usize, v: f64) -> Self {
        Self::real(t, &vec![v; n])
    }

    /// Real control sampled at cell midpoints.
    pub fn from_fn<F: Fn(f64) -> f64>(t: f64, n: usize, f: F) -> Self {
        let h = t / n as f64;
        let v: Vec<f64> = (0..n).map(|i| f((i as f64 + 0.5) * h)).collect();
        Self::real(t, &v)
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        self.t / self.values.len() as f64
    }

    /// Left edge of cell n.
    pub fn t_n(&self, n: usize) -> f64 {
        self.t * n as f64 / self.values.len() as f64
    }

    /// Real parts of the cell values.
    pub fn real_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// ‖u‖_{L²(0,T)}.
    pub fn l2_norm(&self) -> f64 {
        (self.h() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Value at time t (right-continuous, zero outside [0,T)).
    pub fn eval(&self, t: f64) -> C64 {
        if !(0.0..self.t).contains(&t) {
            return C64::new(0.0, 0.0);
        }
        let n = ((t / self.h()) as usize).min(self.n() - 1);
        self.values[n]
    }

    /// s·u.
    pub fn scaled(&self, s: f64) -> Control {
        Control { t: self.t, values: self.values.iter().map(|v| v * s).collect(), real: self.real }
    }

    /// u + s·v on a common grid (same horizon and cell count).
    pub fn axpy(&self, s: f64, v: &Control) -> Result<Control> {
        check_horizon(self, v)?;
        if self.n() != v.n() {
            return Err(StlcError::Precondition("axpy requires equal cell counts".into()));
        }
        Ok(Control {
            t: self.t,
            values: self.values.iter().zip(&v.values).map(|(a, b)| a + b * s).collect(),
            real: self.real && v.real,
        })
    }

    /// Complex conjugate.
    pub fn conj(&self) -> Control {
        Control { t: self.t, values: self.values.iter().map(|v| v.conj()).collect(), real: self.real }
    }

    /// Σ|Δu| plus the end jumps: bound V with |û(ω)| ≤ V/|ω|.
    pub fn total_variation(&self) -> f64 {
        let v = &self.values;
        v[0].norm() + v[v.len() - 1].norm() + v.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>()
    }

    /// Refines every cell into `factor` equal cells.
    pub fn refined(&self, factor: usize) -> Control {
        let values = self.values.iter().flat_map(|v| std::iter::repeat(*v).take(factor)).collect();
        Control { t: self.t, values, real: self.real }
    }

    /// JSON form {"T":..., "values":[...]} (complex values as [re, im]).
    pub fn to_json(&self) -> serde_json::Value {
        let values: Vec<serde_json::Value> = if self.real {
            self.values.iter().map(|v| serde_json::json!(v.re)).collect()
        } else {
            self.values.iter().map(|v| serde_json::json!([v.re, v.im])).collect()
        };
        serde_json::json!({ "T": self.t, "values": values })
    }

    /// Parses the JSON form.
    pub fn from_json(v: &serde_json::Value) -> Result<Control> {
        let t = v["T"].as_f64().ok_or_else(|| StlcError::Config("control JSON needs T".into()))?;
        let arr = v["values"].as_array().ok_or_else(|| StlcError::Config("control JSON needs values".into()))?;
        let mut real = true;
        let mut vals = Vec::with_capacity(arr.len());
        for x in arr {
            if let Some(r) = x.as_f64() {
                vals.push(C64::new(r, 0.0));
            } else if let Some(p) = x.as_array() {
                let re = p.first().and_then(|a| a.as_f64()).unwrap_or(0.0);
                let im = p.get(1).and_then(|a| a.as_f64()).unwrap_or(0.0);
                real &= im == 0.0;
                vals.push(C64::new(re, im));
            } else {
                return Err(StlcError::Config("control values must be numbers or [re, im]".into()));
            }
        }
        if t <= 0.0 || vals.is_empty() {
            return Err(StlcError::Config("control needs T > 0 and at least one value".into()));
        }
        Ok(Control { t, values: vals, real })
    }

    /// CSV rows (t_start, value_re, value_im).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t_start", "value_re", "value_im"]).map_err(io_err)?;
        for (n, v) in self.values.iter().enumerate() {
            wr.write_record(&[format!("{:.17e}", self.t_n(n)), format!("{:.17e}", v.re), format!("{:.17e}", v.im)])
                .map_err(io_err)?;
        }
        wr.flush().map_err(|e| StlcError::Io(e.to_string()))
    }

    /// Reads the CSV form; the horizon is supplied by the caller.
    pub fn read_csv<R: std::io::Read>(r: R, t: f64) -> Result<Control> {
        let mut rd = csv::Reader::from_reader(r);
        let mut vals = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(io_err)?;
            let re: f64 = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| StlcError::Config("bad CSV row".into()))?;
            let im: f64 = rec.get(2).and_then(|s| s.trim().parse().ok()).unwrap_or(0.0);
            vals.push(C64::new(re, im));
        }
        let real = vals.iter().all(|v| v.im == 0.0);
        if vals.is_empty() {
            return Err(StlcError::Config("empty control CSV".into()));
        }
        Ok(Control { t, values: vals, real })
    }
}

fn io_err(e: csv::Error) -> StlcError {
    StlcError::Io(e.to_string())
}

/// Errors unless both controls live on the same horizon.
pub fn check_horizon(u: &Control, v: &Control) -> Result<()> {
    if (u.t - v.t).abs() > 1e-12 * u.t.max(v.t) {
        return Err(StlcError::HorizonMismatch(u.t, v.t));
    }
    Ok(())
}

/// Continuous piecewise-linear primitive u₁(t) = ∫₀ᵗ u.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub t: f64,
    /// u₁ at the grid nodes t_0 = 0, …, t_N = T.
    pub nodes: Vec<C64>,
}

impl Primitive {
    /// u₁(T).
    pub fn endpoint(&self) -> C64 {
        *self.nodes.last().unwrap()
    }

    fn h(&self) -> f64 {
        self.t / (self.nodes.len() - 1) as f64
    }

    /// u₁(t) by linear interpolation.
    pub fn eval(&self, t: f64) -> C64 {
        let n = self.nodes.len() - 1;
        let x = (t / self.h()).clamp(0.0, n as f64);
        let i = (x as usize).min(n - 1);
        let f = x - i as f64;
        self.nodes[i] * (1.0 - f) + self.nodes[i + 1] * f
    }

    /// ‖u₁‖²_{L²}, exact per cell.
    pub fn l2_norm_sq(&self) -> f64 {
        let h = self.h();
        self.nodes
            .windows(2)
            .map(|w| h * (w[0].norm_sqr() + w[1].norm_sqr() + (w[0] * w[1].conj()).re) / 3.0)
            .sum()
    }

    /// ‖u₁‖_{L²}.
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// ⟨u₁, v₁⟩_{L²} = ∫ u₁ v̄₁, exact per cell.
    pub fn inner(&self, other: &Primitive) -> C64 {
        let h = self.h();
        self.nodes
            .windows(2)
            .zip(other.nodes.windows(2))
            .map(|(a, b)| {
                (a[0] * b[0].conj() * 2.0 + a[1] * b[1].conj() * 2.0 + a[0] * b[1].conj() + a[1] * b[0].conj()) * (h / 6.0)
            })
            .sum()
    }

    /// Exact Fourier transform of the zero-extended primitive.
    pub fn fourier(&self, omega: f64) -> C64 {
        let h = self.h();
        let z = C64::new(0.0, -omega * h);
        let p1 = phi1(z);
        let p2 = dd_exp2(C64::new(0.0, 0.0), C64::new(0.0, 0.0), z);
        let (pa, pb) = horner_pair(&self.nodes, omega * h);
        (pa * p2 + pb * (p1 - p2)) * h
    }
}

/// Exact primitive of the piecewise-constant model.
pub fn primitive(u: &Control) -> Primitive {
    let h = u.h();
    let mut nodes = Vec::with_capacity(u.n() + 1);
    let mut acc = C64::new(0.0, 0.0);
    nodes.push(acc);
    for v in &u.values {
        acc += v * h;
        nodes.push(acc);
    }
    Primitive { t: u.t, nodes }
}

/// P_H u = u − u₁(T)/T.
pub fn project_zero_mean(u: &Control) -> Control {
    let mean = primitive(u).endpoint() / u.t;
    let mut out = Control {
        t: u.t,
        values: u.values.iter().map(|v| v - mean).collect(),
        real: u.real,
    };
    // Remove the residual rounding so that the endpoint is zero to machine precision.
    let resid = primitive(&out).endpoint() / u.t;
    for v in &mut out.values {
        *v -= resid;
    }
    out
}

/// Σ_n a_n e^{−iωnh} by Horner's rule.
fn horner(a: &[C64], wh: f64) -> C64 {
    let z = C64::new(wh.cos(), -wh.sin());
    a.iter().rev().fold(C64::new(0.0, 0.0), |acc, v| acc * z + v)
}

/// (Σ_{n<N} a_n z^n, Σ_{n<N} a_{n+1} z^n) for node values a_0..a_N.
fn horner_pair(a: &[C64], wh: f64) -> (C64, C64) {
    let n = a.len() - 1;
    (horner(&a[..n], wh), horner(&a[1..], wh))
}

/// Below this many terms trigonometric sums are evaluated directly.
const FAST_SUM_MIN: usize = 512;
/// Oversampling of the FFT table relative to the sum length.
const FAST_SUM_OVERSAMPLE: usize = 32;
/// Interpolation stencil width.
const FAST_SUM_STENCIL: usize = 16;

/// θ ↦ Σ_n a_n e^{−iθnh} at many points. Long sums are tabulated on an
/// oversampled uniform grid by one FFT; the centred sum (a band-limited
/// function of θ) is then interpolated barycentrically on a local stencil.
#[derive(Debug, Clone)]
pub struct TrigSum {
    h: f64,
    coeffs: Vec<C64>,
    table: Vec<C64>,
    delta: f64,
    center: f64,
    weights: Vec<f64>,
}

impl TrigSum {
    pub fn new(coeffs: &[C64], h: f64) -> Self {
        let mut ts = TrigSum { h, coeffs: coeffs.to_vec(), table: vec![], delta: 0.0, center: 0.0, weights: vec![] };
        if coeffs.len() >= FAST_SUM_MIN {
            let len = (coeffs.len() * FAST_SUM_OVERSAMPLE).next_power_of_two();
            let mut buf = vec![C64::new(0.0, 0.0); len];
            buf[..coeffs.len()].copy_from_slice(coeffs);
            FftPlanner::new().plan_fft_forward(len).process(&mut buf);
            ts.table = buf;
            ts.delta = 2.0 * PI / (len as f64 * h);
            ts.center = 0.5 * (coeffs.len() - 1) as f64 * h;
            // Barycentric weights of equispaced nodes: (−1)^j binom(m−1, j).
            let m = FAST_SUM_STENCIL;
            let mut w = vec![1.0; m];
            for j in 1..m {
                w[j] = -w[j - 1] * (m - j) as f64 / j as f64;
            }
            ts.weights = w;
        }
        ts
    }

    pub fn eval(&self, theta: f64) -> C64 {
        if self.table.is_empty() {
            return horner(&self.coeffs, theta * self.h);
        }
        let len = self.table.len() as i64;
        let m = FAST_SUM_STENCIL as i64;
        let x = theta / self.delta;
        let first = x.floor() as i64 - m / 2 + 1;
        let (mut num, mut den) = (C64::new(0.0, 0.0), 0.0);
        for j in 0..m {
            let idx = first + j;
            let d = x - idx as f64;
            let th = idx as f64 * self.delta;
            let centred = self.table[idx.rem_euclid(len) as usize] * C64::from_polar(1.0, th * self.center);
            if d.abs() < 1e-14 {
                return centred * C64::from_polar(1.0, -theta * self.center);
            }
            let c = self.weights[j as usize] / d;
            num += centred * c;
            den += c;
        }
        num / den * C64::from_polar(1.0, -theta * self.center)
    }
}

/// Fast repeated evaluation of û for a fixed control.
#[derive(Debug, Clone)]
pub struct ControlSpectrum {
    h: f64,
    sum: TrigSum,
}

impl ControlSpectrum {
    pub fn new(u: &Control) -> Self {
        Self { h: u.h(), sum: TrigSum::new(&u.values, u.h()) }
    }

    /// û(ω), as [`windowed_fourier`].
    pub fn eval(&self, omega: f64) -> C64 {
        phi1(C64::new(0.0, -omega * self.h)) * self.sum.eval(omega) * self.h
    }
}

/// Fast repeated evaluation of the transform of a primitive.
#[derive(Debug, Clone)]
pub struct PrimitiveSpectrum {
    h: f64,
    first: C64,
    last: C64,
    n: usize,
    sum: TrigSum,
}

impl PrimitiveSpectrum {
    pub fn new(p: &Primitive) -> Self {
        let h = p.h();
        Self { h, first: p.nodes[0], last: p.nodes[p.nodes.len() - 1], n: p.nodes.len() - 1, sum: TrigSum::new(&p.nodes, h) }
    }

    /// Transform of the primitive, as [`Primitive::fourier`].
    pub fn eval(&self, omega: f64) -> C64 {
        let h = self.h;
        let z = C64::new(0.0, -omega * h);
        let p1 = phi1(z);
        let p2 = dd_exp2(C64::new(0.0, 0.0), C64::new(0.0, 0.0), z);
        let full = self.sum.eval(omega);
        let zn = C64::from_polar(1.0, -omega * h * self.n as f64);
        let pa = full - self.last * zn;
        let pb = (full - self.first) * C64::from_polar(1.0, omega * h);
        (pa * p2 + pb * (p1 - p2)) * h
    }
}

/// û(ω) = ∫₀ᵀ u(t) e^{−iωt} dt, exact for the piecewise-constant model.
pub fn windowed_fourier(u: &Control, omega: f64) -> C64 {
    let h = u.h();
    phi1(C64::new(0.0, -omega * h)) * horner(&u.values, omega * h) * h
}

/// û at many frequencies (parallel).
pub fn windowed_fourier_many(u: &Control, omegas: &[f64]) -> Vec<C64> {
    omegas.par_iter().map(|&w| windowed_fourier(u, w)).collect()
}

/// Result of a Sobolev-norm evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevNorm {
    /// Norm (square root of `value_sq`).
    pub value: f64,
    /// Squared norm: exact-weight part up to Ω plus the analytic alias tail,
    /// or only the truncated part when the tail diverges.
    pub value_sq: f64,
    /// Bound on the error of `value_sq` due to the tail model (infinite when
    /// the tail diverges).
    pub tail_bound: f64,
    /// Set when the tail bound is not finite for this regularity class.
    pub tail_flag: bool,
    /// Frequency cutoff used.
    pub omega_max: f64,
    pub warning: Option<String>,
}

/// Frequency cutoff max(10⁴, 100·N/T).
pub fn default_omega_max(u: &Control) -> f64 {
    (1e4f64).max(100.0 * u.n() as f64 / u.t)
}

/// Folded frequency integral (1/2π)∫⟨ω⟩^{2ν}|F(ω)|² for transforms of the
/// form F(ω) = g₁(θ)/(iω) + g₂(θ)/(iω)², where θ is ω reduced modulo the
/// alias period 2π/h and g₁, g₂ are periodic. Aliases with |ω| ≤ Ω are summed
/// with the exact weight; the remaining aliases are summed analytically with
/// the weight |ω|^{2ν} through Hurwitz-zeta series. Near ω = 0 the transform
/// is evaluated directly by `near_zero` to avoid cancellation.
///
/// Returns (value, tail value, tail finite).
fn folded_integral<P, Z>(h: f64, t: f64, omega_max: f64, nu: f64, periodic: P, near_zero: Z) -> (f64, f64, bool)
where
    P: Fn(f64) -> (C64, C64) + Sync,
    Z: Fn(f64) -> C64 + Sync,
{
    let period = 2.0 * PI / h;
    let width = PI / (4.0 * t);
    let panels = (period / width).ceil() as usize;
    let pw = period / panels as f64;
    let kmax = (omega_max / period).floor() as i64 + 1;
    let rule = gl8();
    let parts: Vec<(f64, f64, bool)> = (0..panels)
        .into_par_iter()
        .map(|p| {
            let lo = -0.5 * period + p as f64 * pw;
            let mut acc = 0.0;
            let mut tail = 0.0;
            let mut finite = true;
            for (theta, w) in rule.mapped(lo, lo + pw) {
                let (g1, g2) = periodic(theta);
                for k in -kmax..=kmax {
                    let om = theta + k as f64 * period;
                    let f = if k == 0 && om.abs() * t < 1.0 {
                        near_zero(om)
                    } else {
                        let iw = C64::new(0.0, om);
                        g1 / iw + g2 / (iw * iw)
                    };
                    acc += w * (1.0 + om * om).powf(nu) * f.norm_sqr();
                }
                // Aliases k > kmax on both sides.
                let q = (kmax + 1) as f64;
                let side = |s: f64| -> (f64, f64) {
                    let ps = period.powf(-s);
                    (
                        ps * hurwitz_zeta(s, q + theta / period),
                        ps * hurwitz_zeta(s, q - theta / period),
                    )
                };
                let mut tl = 0.0;
                let a1 = g1.norm_sqr();
                if a1 > 0.0 {
                    if nu < 0.5 {
                        let (sp, sm) = side(2.0 - 2.0 * nu);
                        tl += a1 * (sp + sm);
                    } else {
                        finite = false;
                    }
                }
                let a2 = g2.norm_sqr();
                if a2 > 0.0 {
                    let (sp, sm) = side(4.0 - 2.0 * nu);
                    tl += a2 * (sp + sm);
                    if a1 > 0.0 && nu < 1.0 {
                        let (sp, sm) = side(3.0 - 2.0 * nu);
                        tl -= 2.0 * (g1 * g2.conj()).im * (sp - sm);
                    }
                }
                tail += w * tl;
            }
            (acc, tail, finite)
        })
        .collect();
    let value: f64 = parts.iter().map(|p| p.0).sum::<f64>() / (2.0 * PI);
    let tail: f64 = parts.iter().map(|p| p.1).sum::<f64>() / (2.0 * PI);
    let finite = parts.iter().all(|p| p.2);
    (value, tail, finite)
}

/// 1 − e^{−ix} without cancellation.
fn one_minus_expi(x: f64) -> C64 {
    C64::new(0.0, 2.0 * (0.5 * x).sin()) * C64::new((0.5 * x).cos(), -(0.5 * x).sin())
}

fn assemble_norm(value: f64, tail: f64, finite: bool, nu: f64, omega_max: f64, jump: bool) -> SobolevNorm {
    if finite {
        let total = value + tail;
        SobolevNorm {
            value: total.sqrt(),
            value_sq: total,
            // ⟨ω⟩^{2ν} replaced by |ω|^{2ν} beyond Ω: relative error ≤ |ν|/Ω².
            tail_bound: nu.abs() / (omega_max * omega_max) * tail.abs(),
            tail_flag: false,
            omega_max,
            warning: None,
        }
    } else {
        SobolevNorm {
            value: value.sqrt(),
            value_sq: value,
            tail_bound: f64::INFINITY,
            tail_flag: true,
            omega_max,
            warning: jump.then(|| "norm may be infinite for this regularity class".to_string()),
        }
    }
}

/// ‖u‖_{H̃^ν} of the zero extension, with the default cutoff.
pub fn sobolev_norm(u: &Control, nu: f64) -> SobolevNorm {
    sobolev_norm_with_cutoff(u, nu, default_omega_max(u))
}

/// ‖u‖_{H̃^ν} with explicit cutoff Ω_max. Frequencies beyond Ω_max enter
/// through the analytic alias tail (exact for the piecewise-constant model
/// up to the weight approximation reported in `tail_bound`); for ν ≥ 1/2 the
/// tail diverges and only the truncated value is returned, flagged.
pub fn sobolev_norm_with_cutoff(u: &Control, nu: f64, omega_max: f64) -> SobolevNorm {
    assert!(nu > -1.0 && nu < 1.0, "ν must lie in (−1, 1)");
    let h = u.h();
    let vals = &u.values;
    let sum = TrigSum::new(vals, h);
    let spec = ControlSpectrum::new(u);
    let (value, tail, finite) = folded_integral(
        h,
        u.t,
        omega_max,
        nu,
        |theta| (one_minus_expi(theta * h) * sum.eval(theta), C64::new(0.0, 0.0)),
        |om| spec.eval(om),
    );
    let jump = vals[0].norm() + vals[vals.len() - 1].norm() > 0.0;
    assemble_norm(value, tail, finite, nu, omega_max, jump)
}

/// ‖u₁‖_{H̃^ν} of the zero-extended primitive (continuous, piecewise linear).
pub fn primitive_sobolev_norm(u: &Control, nu: f64) -> SobolevNorm {
    assert!(nu > -1.0 && nu < 1.0, "ν must lie in (−1, 1)");
    let p = primitive(u);
    let h = u.h();
    let omega_max = default_omega_max(u);
    let end = p.endpoint();
    let sum = TrigSum::new(&u.values, h);
    let spec = PrimitiveSpectrum::new(&p);
    let (value, tail, finite) = folded_integral(
        h,
        u.t,
        omega_max,
        nu,
        |theta| {
            let g2 = one_minus_expi(theta * h) * sum.eval(theta);
            let g1 = -end * C64::new((theta * u.t).cos(), -(theta * u.t).sin());
            (g1, g2)
        },
        |om| spec.eval(om),
    );
    assemble_norm(value, tail, finite, nu, omega_max, end.norm() > 0.0)
}

/// Spectral (Dirichlet sine) Sobolev norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    pub value: f64,
    pub modes: usize,
    /// Estimate of the neglected squared tail.
    pub tail_estimate: f64,
}

/// (Σ_k ⟨β_k⟩^{2ν}|⟨u,e_k⟩|²)^{1/2}, e_k = √(2/T) sin(β_k t), β_k = kπ/T,
/// truncated at 8N modes.
pub fn spectral_sobolev_norm(u: &Control, nu: f64) -> SpectralNorm {
    spectral_sobolev_norm_modes(u, nu, 8 * u.n())
}

/// Spectral Sobolev norm with an explicit mode count.
pub fn spectral_sobolev_norm_modes(u: &Control, nu: f64, modes: usize) -> SpectralNorm {
    assert!(nu > -0.5 && nu < 0.5, "ν must lie in (−1/2, 1/2)");
    let n = u.n();
    let h = u.h();
    let norm = (2.0 / u.t).sqrt();
    let coeffs: Vec<f64> = (1..=modes)
        .into_par_iter()
        .map(|k| {
            let beta = k as f64 * PI / u.t;
            // cos(β t_n) by rotation, re-anchored periodically.
            let mut acc = C64::new(0.0, 0.0);
            let step = C64::new((beta * h).cos(), (beta * h).sin());
            let mut e = C64::new(1.0, 0.0);
            for i in 0..n {
                if i % 64 == 0 {
                    let a = beta * i as f64 * h;
                    e = C64::new(a.cos(), a.sin());
                }
                let e_next = e * step;
                acc += u.values[i] * (e.re - e_next.re);
                e = e_next;
            }
            (acc * (norm / beta)).norm_sqr()
        })
        .collect();
    let mut sum = 0.0;
    let mut plain = 0.0;
    for (i, c) in coeffs.iter().enumerate() {
        let beta = (i + 1) as f64 * PI / u.t;
        sum += (1.0 + beta * beta).powf(nu) * c;
        plain += c;
    }
    let rem = (u.l2_norm().powi(2) - plain).max(0.0);
    let beta_k = modes as f64 * PI / u.t;
    let w = (1.0 + beta_k * beta_k).powf(nu);
    let tail_estimate = if nu > 0.0 { w * rem / (1.0 - 2.0 * nu) } else { w * rem };
    SpectralNorm { value: sum.sqrt(), modes, tail_estimate }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest integers (p, q) with h_u/p = h_v/q (within 10⁻¹²), if any with
/// p, q ≤ cap.
fn common_refinement(hu: f64, hv: f64, cap: usize) -> Option<(usize, usize)> {
    // Continued-fraction convergents of hu/hv = p/q.
    let x = hu / hv;
    let (mut p0, mut q0, mut p1, mut q1) = (0usize, 1usize, 1usize, 0usize);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > cap as f64 {
            return None;
        }
        let a = a as usize;
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        if p2 > cap || q2 > cap {
            return None;
        }
        if ((p2 as f64) / (q2 as f64) - x).abs() <= 1e-12 * x {
            let g = gcd(p2, q2);
            return Some((p2 / g, q2 / g));
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = r - a as f64;
        if frac == 0.0 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

/// Time concatenation u ⋄ v on [0, T_u + T_v].
///
/// Grids are refined to a common cell width when the width ratio is rational
/// (within the cell cap); otherwise both are resampled by cell averaging onto
/// the finest grid allowed by the cap.
pub fn concat(u: &Control, v: &Control) -> Control {
    let (hu, hv) = (u.h(), v.h());
    let real = u.real && v.real;
    let (uu, vv) = if (hu - hv).abs() <= 1e-12 * hu.max(hv) {
        (u.clone(), v.clone())
    } else if let Some((p, q)) = common_refinement(hu, hv, MAX_CELLS)
        .filter(|&(p, q)| u.n() * p + v.n() * q <= MAX_CELLS)
    {
        (u.refined(p), v.refined(q))
    } else {
        let h = hu.min(hv);
        let total = (((u.t + v.t) / h).round() as usize).min(MAX_CELLS);
        let h = (u.t + v.t) / total as f64;
        let mut values = Vec::with_capacity(total);
        for i in 0..total {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            values.push(cell_average(u, v, a, b));
        }
        return Control { t: u.t + v.t, values, real };
    };
    let mut values = uu.values;
    values.extend(vv.values);
    Control { t: u.t + v.t, values, real }
}

/// Both controls on one grid: exact refinement when the cell widths are
/// rationally related (within the cell cap), otherwise an error.
pub fn on_common_grid(u: &Control, v: &Control) -> Result<(Control, Control)> {
    check_horizon(u, v)?;
    if u.n() == v.n() {
        return Ok((u.clone(), v.clone()));
    }
    match common_refinement(u.h(), v.h(), MAX_CELLS).filter(|&(p, q)| u.n() * p <= MAX_CELLS && v.n() * q <= MAX_CELLS) {
        Some((p, q)) => Ok((u.refined(p), v.refined(q))),
        None => Err(StlcError::Precondition("controls have no common grid within the cell cap".into())),
    }
}

fn cell_average(u: &Control, v: &Control, a: f64, b: f64) -> C64 {
    let pu = primitive(u);
    let pv = primitive(v);
    let f = |t: f64| -> C64 {
        if t <= u.t {
            pu.eval(t)
        } else {
            pu.endpoint() + pv.eval(t - u.t)
        }
    };
    (f(b) - f(a)) / (b - a)
}

/// Serialised through the JSON form of [`Control::to_json`].
impl Serialize for Control {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Control {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Control::from_json(&v).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_control(rng: &mut ChaCha8Rng, t: f64, n: usize) -> Control {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Control::real(t, &v)
    }

    #[test]
    fn primitive_of_constant_and_tent() {
        let p = primitive(&Control::constant(0.7, 10, 1.0));
        assert!((p.endpoint().re - 0.7).abs() < 1e-15);
        assert!((p.eval(0.35).re - 0.35).abs() < 1e-15);
        let t = 0.8;
        let mut v = vec![1.0; 50];
        v.extend(vec![-1.0; 50]);
        let p = primitive(&Control::real(t, &v));
        assert!(p.endpoint().norm() < 1e-15);
        assert!((p.l2_norm_sq() - t.powi(3) / 12.0).abs() < 1e-15);
    }

    #[test]
    fn zero_mean_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_control(&mut rng, 0.3, 257);
        let pu = project_zero_mean(&u);
        assert!(primitive(&pu).endpoint().norm() <= 1e-14 * u.l2_norm());
        let ppu = project_zero_mean(&pu);
        assert!(ppu.values.iter().zip(&pu.values).all(|(a, b)| (a - b).norm() < 1e-15));
        assert!(project_zero_mean(&Control::constant(1.0, 8, 1.0)).values.iter().all(|v| v.norm() < 1e-15));
        assert!(windowed_fourier(&pu, 0.0).norm() < 1e-15);
    }

    #[test]
    fn fourier_of_indicator() {
        let t = 0.9;
        let u = Control::constant(t, 33, 1.0);
        assert!((windowed_fourier(&u, 0.0) - C64::new(t, 0.0)).norm() < 1e-15);
        let small = windowed_fourier(&u, 1e-8);
        assert!((small - C64::new(t, -0.5e-8 * t * t)).norm() < 1e-15);
        for &w in &[0.3, 17.0, 1234.5] {
            let i = C64::new(0.0, 1.0);
            let e = (C64::new(1.0, 0.0) - (-i * w * t).exp()) / (i * w);
            assert!((windowed_fourier(&u, w) - e).norm() < 1e-13, "ω={w}");
        }
    }

    #[test]
    fn fourier_of_primitive_matches_integration_by_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = project_zero_mean(&random_control(&mut rng, 0.5, 200));
        let p = primitive(&u);
        for j in 1..30 {
            let w = crate::spectral::lambda(j);
            let lhs = windowed_fourier(&u, w);
            let rhs = C64::new(0.0, w) * p.fourier(w);
            assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1e-3), "j={j}");
        }
    }

    #[test]
    fn plancherel_at_nu_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_control(&mut rng, 0.4, 64);
        let s = sobolev_norm(&u, 0.0);
        let l2 = u.l2_norm();
        assert!((s.value - l2).abs() < 1e-8 * l2, "{} vs {l2}", s.value);
        assert!(!s.tail_flag);
    }

    #[test]
    fn spectral_norm_parseval_and_single_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_control(&mut rng, 0.6, 40);
        let s = spectral_sobolev_norm(&u, 0.0);
        assert!((s.value.powi(2) + s.tail_estimate - u.l2_norm().powi(2)).abs() < 1e-12);
        let t = 1.0;
        let e1 = Control::from_fn(t, 4096, |x| (2.0 / t).sqrt() * (PI * x / t).sin());
        let nu = -0.3;
        let s = spectral_sobolev_norm_modes(&e1, nu, 64);
        let expect = (1.0 + PI * PI).powf(nu / 2.0);
        assert!((s.value - expect).abs() < 1e-5, "{} vs {expect}", s.value);
    }

    #[test]
    fn primitive_norm_at_nu_zero_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_control(&mut rng, 0.3, 48);
        let s = primitive_sobolev_norm(&u, 0.0);
        let exact = primitive(&u).l2_norm_sq();
        assert!((s.value_sq - exact).abs() <= 1e-9 * exact, "{} vs {exact}", s.value_sq);
    }

    #[test]
    fn concat_primitive_and_norm_additivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = project_zero_mean(&random_control(&mut rng, 0.2, 40));
        let v = random_control(&mut rng, 0.3, 60);
        let w = concat(&u, &v);
        assert_eq!(w.n(), 100);
        let (pu, pv, pw) = (primitive(&u), primitive(&v), primitive(&w));
        assert!((pw.l2_norm_sq() - pu.l2_norm_sq() - pv.l2_norm_sq()).abs() < 1e-14);
        for i in 0..=60 {
            assert!((pw.nodes[40 + i] - pu.endpoint() - pv.nodes[i]).norm() < 1e-14);
        }
        let z = concat(&u, &Control::zeros(0.1, 7));
        assert!((z.t - 0.3).abs() < 1e-15);
        assert!((primitive(&z).endpoint()).norm() < 1e-14);
    }

    #[test]
    fn concat_rational_refinement() {
        let u = Control::constant(0.3, 3, 1.0);
        let v = Control::constant(0.2, 4, 2.0);
        let w = concat(&u, &v);
        assert!((w.h() - 0.05).abs() < 1e-15);
        assert!((primitive(&w).endpoint().re - (0.3 + 0.4)).abs() < 1e-14);
    }

    #[test]
    fn linearity_and_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_control(&mut rng, 0.5, 31);
        let v = random_control(&mut rng, 0.5, 31);
        let w = u.axpy(-2.5, &v).unwrap();
        for &om in &[0.0, 3.3, 900.0] {
            let d = windowed_fourier(&w, om) - windowed_fourier(&u, om) + windowed_fourier(&v, om) * 2.5;
            assert!(d.norm() < 1e-14);
        }
        let back = Control::from_json(&u.to_json()).unwrap();
        assert_eq!(back, u);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let back = Control::read_csv(&buf[..], 0.5).unwrap();
        assert!(back.values.iter().zip(&u.values).all(|(a, b)| (a - b).norm() < 1e-16));
    }

    #[test]
    fn indicator_negative_norm_scales_like_power_of_t() {
        // ‖1_{[0,T]}‖_{H̃^{−1/4}} / T^{3/4} stays bounded as T shrinks.
        let ratios: Vec<f64> = [0.1, 0.2, 0.4]
            .iter()
            .map(|&t| sobolev_norm(&Control::constant(t, 16, 1.0), -0.25).value / t.powf(0.75))
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 1.5, "{ratios:?}");
    }

    #[test]
    fn negative_norm_gains_power_of_t_and_is_a_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &t in &[0.05, 0.2, 1.0] {
            let u = random_control(&mut rng, t, 64);
            let v = random_control(&mut rng, t, 64);
            let nu = sobolev_norm(&u, -0.25).value;
            assert!(nu <= 1.5 * t.powf(0.25) * u.l2_norm(), "T={t}");
            let nv = sobolev_norm(&v, -0.25).value;
            let nsum = sobolev_norm(&u.axpy(1.0, &v).unwrap(), -0.25).value;
            assert!(nsum <= nu + nv + 1e-12);
            let n3 = sobolev_norm(&u.scaled(-3.0), -0.25).value;
            assert!((n3 - 3.0 * nu).abs() < 1e-10 * nu);
        }
    }

    #[test]
    fn positive_exponent_with_end_jumps_is_flagged() {
        let s = sobolev_norm(&Control::constant(0.3, 8, 1.0), 0.6);
        assert!(s.tail_flag && s.warning.is_some() && s.tail_bound.is_infinite());
        let s = sobolev_norm(&Control::constant(0.3, 8, 1.0), 0.3);
        assert!(!s.tail_flag && s.value.is_finite());
    }

    #[test]
    fn bessel_inequality_for_random_signals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &t in &[0.3, 1.0] {
            let vals: Vec<C64> = (0..256).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let g = Control::complex(t, vals);
            let s: f64 = (0..=200).map(|j| windowed_fourier(&g, -crate::spectral::lambda(j)).norm_sqr()).sum();
            assert!(s <= (1.0 + t) * g.l2_norm().powi(2));
        }
    }

    #[test]
    fn horizon_mismatch_is_reported() {
        let u = Control::zeros(0.5, 4);
        let v = Control::zeros(0.6, 4);
        assert!(matches!(u.axpy(1.0, &v), Err(StlcError::HorizonMismatch(..))));
    }

    #[test]
    fn fast_sums_match_direct_evaluation() {
        let n = 3000;
        let u = Control::from_fn(0.7, n, |t| (40.0 * t).sin() * (3.0 * t).exp() + 0.3);
        let fast = ControlSpectrum::new(&u);
        let p = primitive(&u);
        let pf = PrimitiveSpectrum::new(&p);
        for &w in &[0.0, 1.3, -17.0, 250.5, 4000.0, -9.1e4, 2.0e6] {
            let (a, b) = (windowed_fourier(&u, w), fast.eval(w));
            assert!((a - b).norm() < 1e-11 * (1.0 + a.norm()), "{w}: {a} {b}");
            let (a, b) = (p.fourier(w), pf.eval(w));
            assert!((a - b).norm() < 1e-11 * (1.0 + a.norm()), "{w}: {a} {b}");
        }
    }
}
