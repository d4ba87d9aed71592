//! Spectral Galerkin simulation of the bilinear system, its first- and
//! second-order expansions around the ground state, remainder diagnostics and
//! drift certificates.

use crate::error::{Result, StlcError};
use crate::numerics::{gl8, pairwise_sum};
use crate::quadform::{q_time_mod, ModSignal};
use crate::signals::{primitive, windowed_fourier, Control};
use crate::spectral::{higher_drift_coefficients, interaction_coefficients, lambda, KernelModel, Potential, ORTHOGONALITY_TOL};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default Galerkin truncation for time stepping.
pub const J_SIM: usize = 64;

/// Tolerance on ‖ψ0‖ − 1 accepted by [`evolve`].
pub const UNIT_TOL: f64 = 1e-10;

/// Exponent ν used in drift certificates.
pub const DRIFT_NU: f64 = 0.125;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Dense matrix M_{jm} = ⟨μφ_m, φ_j⟩ for j, m ≤ J.
#[derive(Debug, Clone, PartialEq)]
pub struct MuMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl MuMatrix {
    pub fn new(pot: &Potential, j_max: usize) -> Self {
        let dim = j_max + 1;
        let mut data = vec![0.0; dim * dim];
        for j in 0..dim {
            for m in j..dim {
                let v = pot.matrix_element(j, m);
                data[j * dim + m] = v;
                data[m * dim + j] = v;
            }
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, j: usize, m: usize) -> f64 {
        self.data[j * self.dim + m]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// M x for a complex vector.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        (0..self.dim)
            .map(|j| self.row(j).iter().zip(x).fold(ZERO, |acc, (&m, &v)| acc + v * m))
            .collect()
    }

    /// Largest absolute row sum (∞-norm).
    pub fn row_sum_bound(&self) -> f64 {
        (0..self.dim).map(|j| self.row(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }
}

/// Galerkin coefficients ψ_j, j = 0..=J, at time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub coeffs: Vec<C64>,
    pub time: f64,
}

impl StateVector {
    /// φ_j embedded in a J-mode space.
    pub fn basis(j: usize, j_max: usize) -> Self {
        let mut coeffs = vec![ZERO; j_max + 1];
        coeffs[j] = C64::new(1.0, 0.0);
        Self { coeffs, time: 0.0 }
    }

    /// Ground state φ₀.
    pub fn ground(j_max: usize) -> Self {
        Self::basis(0, j_max)
    }

    pub fn from_coeffs(coeffs: Vec<C64>) -> Self {
        Self { coeffs, time: 0.0 }
    }

    pub fn j_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn norm(&self) -> f64 {
        l2(&self.coeffs)
    }

    /// ⟨self, φ_j⟩ (zero beyond the stored range).
    pub fn coeff(&self, j: usize) -> C64 {
        self.coeffs.get(j).copied().unwrap_or(ZERO)
    }

    /// ⟨self, other⟩ = Σ self_j conj(other_j).
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum()
    }

    /// ‖self − other‖ over the common range, padding the shorter state with zeros.
    pub fn distance(&self, other: &StateVector) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        (0..n).map(|j| (self.coeff(j) - other.coeff(j)).norm_sqr()).sum::<f64>().sqrt()
    }
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Sampled solution of the Galerkin system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<StateVector>,
    pub final_state: StateVector,
}

impl Trajectory {
    /// CSV rows (t, j, Re ψ_j, Im ψ_j).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| StlcError::Io(e.to_string());
        wr.write_record(["t", "j", "re_psi", "im_psi"]).map_err(io)?;
        for s in &self.samples {
            for (j, c) in s.coeffs.iter().enumerate() {
                wr.write_record(&[format!("{:.17e}", s.time), j.to_string(), format!("{:.17e}", c.re), format!("{:.17e}", c.im)])
                    .map_err(io)?;
            }
        }
        wr.flush().map_err(|e| StlcError::Io(e.to_string()))
    }
}

/// J_k(x), k = 0..n, by Miller's backward recurrence normalised with
/// J₀ + 2ΣJ_{2k} = 1.
fn bessel_sequence(x: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let top = n.max(x.ceil() as usize) + 20 + (40.0 * x.max(1.0)).sqrt() as usize;
    let start = top + (top % 2);
    let (mut jp1, mut j) = (0.0f64, 1e-280f64);
    let mut norm = 0.0;
    for k in (0..=start).rev() {
        if k <= n {
            out[k] = j;
        }
        if k % 2 == 0 {
            norm += if k == 0 { j } else { 2.0 * j };
        }
        if k == 0 {
            break;
        }
        let jm1 = 2.0 * k as f64 / x * j - jp1;
        jp1 = j;
        j = jm1;
        if j.abs() > 1e250 {
            jp1 *= 1e-250;
            j *= 1e-250;
            norm *= 1e-250;
            for o in out.iter_mut() {
                *o *= 1e-250;
            }
        }
    }
    for o in out.iter_mut() {
        *o /= norm;
    }
    out
}

/// Number of Chebyshev terms for exp(−i r h H̃): first k > x with
/// (x/2)^k/k! below 10⁻¹⁷.
fn chebyshev_terms(x: f64) -> usize {
    let mut k = 0usize;
    let mut log_term = 0.0f64;
    let lx = (0.5 * x).max(1e-300).ln();
    loop {
        k += 1;
        log_term += lx - (k as f64).ln();
        if k as f64 > x && log_term < -39.0 {
            return k;
        }
    }
}

/// Galerkin propagator for iψ̇ = Λψ − u(t)Mψ with piecewise-constant u.
#[derive(Debug, Clone)]
pub struct Galerkin {
    pub lambda: Vec<f64>,
    pub mu: MuMatrix,
    row_abs: Vec<f64>,
    diag: Vec<f64>,
}

impl Galerkin {
    pub fn new(pot: &Potential, j_max: usize) -> Self {
        let mu = MuMatrix::new(pot, j_max);
        let row_abs = (0..=j_max).map(|j| mu.row(j).iter().enumerate().filter(|&(m, _)| m != j).map(|(_, x)| x.abs()).sum()).collect();
        let diag = (0..=j_max).map(|j| mu.get(j, j)).collect();
        Self { lambda: (0..=j_max).map(lambda).collect(), mu, row_abs, diag }
    }

    pub fn j_max(&self) -> usize {
        self.lambda.len() - 1
    }

    /// ψ ← exp(−ih(Λ − uM))ψ by a Chebyshev–Bessel expansion on the
    /// Gershgorin interval of the generator.
    pub fn step(&self, psi: &mut [C64], u: f64, h: f64) {
        let d = self.lambda.len();
        if u == 0.0 {
            for (p, &l) in psi.iter_mut().zip(&self.lambda) {
                *p *= C64::from_polar(1.0, -l * h);
            }
            return;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for j in 0..d {
            let c = self.lambda[j] - u * self.diag[j];
            let r = u.abs() * self.row_abs[j];
            lo = lo.min(c - r);
            hi = hi.max(c + r);
        }
        let center = 0.5 * (lo + hi);
        let radius = (0.5 * (hi - lo)).max(1e-300);
        let x = radius * h;
        let nterms = chebyshev_terms(x);
        let bess = bessel_sequence(x, nterms);
        // H̃ v = ((Λ − c)v − uMv)/r on split real/imaginary parts.
        let shifted: Vec<f64> = self.lambda.iter().map(|l| (l - center) / radius).collect();
        let ur = u / radius;
        let apply = |vr: &[f64], vi: &[f64], or: &mut [f64], oi: &mut [f64]| {
            for j in 0..d {
                let row = self.mu.row(j);
                let (mut sr, mut si) = (0.0, 0.0);
                for m in 0..d {
                    sr += row[m] * vr[m];
                    si += row[m] * vi[m];
                }
                or[j] = shifted[j] * vr[j] - ur * sr;
                oi[j] = shifted[j] * vi[j] - ur * si;
            }
        };
        let (mut pr, mut pi): (Vec<f64>, Vec<f64>) = (psi.iter().map(|z| z.re).collect(), psi.iter().map(|z| z.im).collect());
        let (mut cr, mut ci) = (vec![0.0; d], vec![0.0; d]);
        apply(&pr, &pi, &mut cr, &mut ci);
        // Accumulate Σ a_k T_k(H̃)ψ with a_0 = J_0, a_k = 2(−i)^k J_k.
        let mut acc: Vec<C64> = (0..d).map(|j| C64::new(pr[j], pi[j]) * bess[0]).collect();
        let coef = |k: usize| -> C64 {
            let b = 2.0 * bess[k];
            match k % 4 {
                0 => C64::new(b, 0.0),
                1 => C64::new(0.0, -b),
                2 => C64::new(-b, 0.0),
                _ => C64::new(0.0, b),
            }
        };
        let a1 = coef(1);
        for j in 0..d {
            acc[j] += C64::new(cr[j], ci[j]) * a1;
        }
        let (mut nr, mut ni) = (vec![0.0; d], vec![0.0; d]);
        for k in 2..=nterms {
            apply(&cr, &ci, &mut nr, &mut ni);
            for j in 0..d {
                nr[j] = 2.0 * nr[j] - pr[j];
                ni[j] = 2.0 * ni[j] - pi[j];
            }
            let a = coef(k);
            for j in 0..d {
                acc[j] += C64::new(nr[j], ni[j]) * a;
            }
            std::mem::swap(&mut pr, &mut cr);
            std::mem::swap(&mut pi, &mut ci);
            std::mem::swap(&mut cr, &mut nr);
            std::mem::swap(&mut ci, &mut ni);
        }
        let phase = C64::from_polar(1.0, -center * h);
        for (p, a) in psi.iter_mut().zip(acc) {
            *p = a * phase;
        }
    }

    /// Solution from ψ0 at time 0, sampled every `stride` cells (and at T).
    pub fn propagate(&self, u: &Control, psi0: &StateVector, stride: usize) -> Result<Trajectory> {
        let nrm = psi0.norm();
        if (nrm - 1.0).abs() > UNIT_TOL {
            return Err(StlcError::NonUnitState(nrm));
        }
        if psi0.coeffs.len() != self.lambda.len() {
            return Err(StlcError::Precondition(format!(
                "initial state has {} modes, propagator {}",
                psi0.coeffs.len(),
                self.lambda.len()
            )));
        }
        if !u.real {
            return Err(StlcError::Precondition("the bilinear system requires a real control".into()));
        }
        let h = u.h();
        let stride = stride.max(1);
        let mut psi = psi0.coeffs.clone();
        let mut samples = vec![StateVector { coeffs: psi.clone(), time: 0.0 }];
        for (n, v) in u.values.iter().enumerate() {
            self.step(&mut psi, v.re, h);
            if (n + 1) % stride == 0 || n + 1 == u.n() {
                samples.push(StateVector { coeffs: psi.clone(), time: u.t_n(n + 1) });
            }
        }
        if samples.last().map(|s| s.time) != Some(u.t) {
            samples.push(StateVector { coeffs: psi.clone(), time: u.t });
        }
        Ok(Trajectory { samples, final_state: StateVector { coeffs: psi, time: u.t } })
    }

    /// ψ(T) only.
    pub fn final_state(&self, u: &Control, psi0: &StateVector) -> Result<StateVector> {
        Ok(self.propagate(u, psi0, usize::MAX)?.final_state)
    }

    /// ψ₁(T)_j = i m_j ∫₀ᵀ u(s) e^{−iλ_j(T−s)} ds.
    pub fn linearized(&self, u: &Control) -> StateVector {
        let t = u.t;
        let coeffs = (0..self.lambda.len())
            .map(|j| {
                let m = self.mu.get(j, 0);
                if m == 0.0 {
                    return ZERO;
                }
                let l = self.lambda[j];
                C64::new(0.0, m) * C64::from_polar(1.0, -l * t) * windowed_fourier(u, -l)
            })
            .collect();
        StateVector { coeffs, time: t }
    }

    /// ⟨ψ₂(T), φ_l⟩ = −e^{−iλ_l T} Σ_j m_j M_{jl} ∫₀ᵀ u(t) e^{iλ_l t} ∫₀ᵗ e^{−iλ_j(t−s)} u(s) ds dt.
    pub fn second_order(&self, u: &Control, l: usize) -> C64 {
        let ll = self.lambda[l];
        let terms: Vec<C64> = (0..self.lambda.len())
            .into_par_iter()
            .map(|j| {
                let c = self.mu.get(j, 0) * self.mu.get(j, l);
                if c == 0.0 {
                    return ZERO;
                }
                crate::quadform::causal_integral(&u.values, &u.values, u.h(), self.lambda[j], ll) * c
            })
            .collect();
        -pairwise_sum(&terms) * C64::from_polar(1.0, -ll * u.t)
    }

    /// The full vector ψ₂(T).
    pub fn second_order_vector(&self, u: &Control) -> StateVector {
        let coeffs = (0..self.lambda.len()).map(|l| self.second_order(u, l)).collect();
        StateVector { coeffs, time: u.t }
    }
}

/// Solution of the Galerkin system with `j_max` modes from ψ0.
pub fn evolve(pot: &Potential, u: &Control, j_max: usize, psi0: &StateVector) -> Result<Trajectory> {
    let stride = (u.n() / 256).max(1);
    Galerkin::new(pot, j_max).propagate(u, psi0, stride)
}

/// ψ₁(T) on `j_max` modes.
pub fn linearized(pot: &Potential, u: &Control, j_max: usize) -> StateVector {
    Galerkin::new(pot, j_max).linearized(u)
}

/// ⟨ψ₂(T), φ_k⟩ with the mode sum truncated at `j_max`.
pub fn second_order(pot: &Potential, u: &Control, k: usize, j_max: usize) -> C64 {
    Galerkin::new(pot, j_max.max(k)).second_order(u, k)
}

/// ⟨ψ₂(T),φ_k⟩ beside its quadratic-form expression −½Q_k(uρ_k, uρ̄_k)e^{−iλ_kT}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderCheck {
    pub value: C64,
    pub from_quadratic_form: C64,
    pub discrepancy: f64,
}

/// Cross-check of the Duhamel double integral against Q_k; `model` must
/// describe the same potential and mode k.
pub fn second_order_check(galerkin: &Galerkin, model: &KernelModel, u: &Control) -> Result<SecondOrderCheck> {
    let k = model.k;
    let value = galerkin.second_order(u, k);
    let lk = model.lambda_k();
    let q = q_time_mod(model, ModSignal::new(u, 0.5 * lk), ModSignal::new(u, -0.5 * lk), true)?;
    let from_q = -0.5 * q * C64::from_polar(1.0, -lk * u.t);
    Ok(SecondOrderCheck { value, from_quadratic_form: from_q, discrepancy: (value - from_q).norm() })
}

/// Measured remainders of the expansion ψ ≈ φ₀ + ψ₁ + ψ₂ with their bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderRecord {
    pub t: f64,
    pub k: usize,
    pub u_l2: f64,
    pub u1_l2: f64,
    pub u1_endpoint: f64,
    /// ‖ψ(T) − φ₀ − ψ₁(T)‖.
    pub quadratic: f64,
    /// ‖u₁‖^{3/2}‖u‖^{1/2} + |u₁(T)|².
    pub quadratic_bound: f64,
    pub quadratic_ratio: f64,
    /// |⟨ψ(T) − φ₀ − ψ₁(T) − ψ₂(T), φ_k⟩|.
    pub cubic: f64,
    /// |u₁(T)|³ + ‖u₁‖^{2+1/8}‖u‖^{7/8}.
    pub cubic_bound: f64,
    pub cubic_ratio: f64,
    /// ‖ψ̃ − φ₀‖, ‖ψ̃ − φ₀ − ψ̃₁‖, ‖ψ̃ − φ₀ − ψ̃₁ − ψ̃₂‖ for the gauge-transformed state
    /// ψ̃ = e^{−iu₁(T)μ}ψ.
    pub gauge_remainders: [f64; 3],
    /// |‖ψ̃‖ − ‖ψ‖|: unitarity of the gauge factor.
    pub gauge_norm_defect: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// e^{−isM} applied to a vector through the eigen-decomposition of M.
fn gauge(mu: &MuMatrix, s: f64, x: &[C64]) -> Vec<C64> {
    if s == 0.0 {
        return x.to_vec();
    }
    let eig = SymmetricEigen::new(mu.to_dmatrix());
    let d = mu.dim();
    let v = &eig.eigenvectors;
    let proj: Vec<C64> = (0..d).map(|i| (0..d).fold(ZERO, |acc, j| acc + x[j] * v[(j, i)])).collect();
    let rot: Vec<C64> = proj.iter().zip(eig.eigenvalues.iter()).map(|(p, &e)| p * C64::from_polar(1.0, -s * e)).collect();
    (0..d).map(|j| (0..d).fold(ZERO, |acc, i| acc + rot[i] * v[(j, i)])).collect()
}

/// Remainder diagnostics at mode k for a real control with ‖u‖ ≤ 1, T ≤ 1.
pub fn remainder_norms(galerkin: &Galerkin, u: &Control, k: usize) -> Result<RemainderRecord> {
    let ul2 = u.l2_norm();
    if ul2 > 1.0 + 1e-12 || u.t > 1.0 {
        return Err(StlcError::Precondition("remainder bounds require ‖u‖ ≤ 1 and T ≤ 1".into()));
    }
    let j = galerkin.j_max();
    let psi = galerkin.final_state(u, &StateVector::ground(j))?;
    let psi1 = galerkin.linearized(u);
    let psi2 = galerkin.second_order_vector(u);
    let pu = primitive(u);
    let (u1, u1t_c) = (pu.l2_norm(), pu.endpoint());
    let u1t = u1t_c.norm();
    let mut r1: Vec<C64> = psi.coeffs.clone();
    r1[0] -= 1.0;
    let r2: Vec<C64> = r1.iter().zip(&psi1.coeffs).map(|(a, b)| a - b).collect();
    let r3k = r2[k] - psi2.coeffs[k];
    let quadratic = l2(&r2);
    let quadratic_bound = u1.powf(1.5) * ul2.sqrt() + u1t * u1t;
    let cubic = r3k.norm();
    let cubic_bound = u1t.powi(3) + u1.powf(2.125) * ul2.powf(0.875);

    // Gauge-transformed variables by exact recombination.
    let s = u1t_c.re;
    let tpsi = gauge(&galerkin.mu, s, &psi.coeffs);
    let e0 = StateVector::ground(j).coeffs;
    let me0 = galerkin.mu.apply(&e0);
    let mpsi1 = galerkin.mu.apply(&psi1.coeffs);
    let mme0 = galerkin.mu.apply(&me0);
    let i = C64::new(0.0, 1.0);
    let tpsi1: Vec<C64> = (0..=j).map(|n| psi1.coeffs[n] - i * s * me0[n]).collect();
    let tpsi2: Vec<C64> = (0..=j).map(|n| psi2.coeffs[n] - i * s * mpsi1[n] - 0.5 * s * s * mme0[n]).collect();
    let mut g1 = tpsi.clone();
    g1[0] -= 1.0;
    let g2: Vec<C64> = g1.iter().zip(&tpsi1).map(|(a, b)| a - b).collect();
    let g3: Vec<C64> = g2.iter().zip(&tpsi2).map(|(a, b)| a - b).collect();
    Ok(RemainderRecord {
        t: u.t,
        k,
        u_l2: ul2,
        u1_l2: u1,
        u1_endpoint: u1t,
        quadratic,
        quadratic_bound,
        quadratic_ratio: ratio(quadratic, quadratic_bound),
        cubic,
        cubic_bound,
        cubic_ratio: ratio(cubic, cubic_bound),
        gauge_remainders: [l2(&g1), l2(&g2), l2(&g3)],
        gauge_norm_defect: (l2(&tpsi) - psi.norm()).abs(),
    })
}

/// Left side, bound components and fitted constant of the drift estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCertificate {
    pub t: f64,
    pub k: usize,
    pub order: usize,
    pub nu: f64,
    /// a_k^p.
    pub drift_coefficient: f64,
    /// ⟨ψ(T) − φ₀, φ_k⟩.
    pub projection: C64,
    /// ‖u_p‖² (p-th primitive).
    pub up_sq: f64,
    /// |⟨ψ(T) − φ₀, φ_k⟩ + i a_k^p ‖u_p‖²|.
    pub lhs: f64,
    /// T^ν‖u₁‖² (order 1) or Γ_p(T,u)‖u_p‖² (order p > 1).
    pub rhs_small_time: f64,
    /// ‖ψ(T) − φ₀‖².
    pub rhs_state: f64,
    /// |u₁(T)|².
    pub rhs_endpoint: f64,
    /// lhs / (sum of the rhs components).
    pub ratio: f64,
    /// |u₁(T)|.
    pub closed_loop_lhs: f64,
    /// T^{1/2}‖u₁‖ + ‖ψ(T) − φ₀‖.
    pub closed_loop_rhs: f64,
    pub closed_loop_ratio: f64,
}

/// Reusable context for drift certificates over a control ensemble.
#[derive(Debug, Clone)]
pub struct DriftContext {
    pub galerkin: Galerkin,
    pub model: KernelModel,
    pub order: usize,
    pub drift_coefficient: f64,
}

impl DriftContext {
    /// Checks ⟨μ,φ_k⟩ ≈ 0 and, for order p > 1, zero boundary slopes.
    pub fn new(pot: &Potential, k: usize, j_sim: usize, order: usize) -> Result<Self> {
        let order = order.max(1);
        let mk = pot.m(k);
        if mk.abs() > ORTHOGONALITY_TOL * pot.norm().max(f64::MIN_POSITIVE) {
            return Err(StlcError::AssumptionViolated { k, value: mk.abs() });
        }
        if order > 1 && !pot.slope_free() {
            return Err(StlcError::Precondition("higher-order drift requires zero boundary slopes".into()));
        }
        let model = interaction_coefficients(pot, k, pot.j_max().max(j_sim))?;
        let drift_coefficient = if order == 1 { model.a_k } else { higher_drift_coefficients(&model, order)?[order - 1] };
        Ok(Self { galerkin: Galerkin::new(pot, j_sim.max(k)), model, order, drift_coefficient })
    }

    pub fn certify(&self, u: &Control) -> Result<DriftCertificate> {
        if u.l2_norm() > 1.0 + 1e-12 {
            return Err(StlcError::Precondition("drift certificate requires ‖u‖ ≤ 1".into()));
        }
        let k = self.model.k;
        let j = self.galerkin.j_max();
        let psi = self.galerkin.final_state(u, &StateVector::ground(j))?;
        let mut diff = psi.coeffs.clone();
        diff[0] -= 1.0;
        let dist = l2(&diff);
        let proj = diff[k];
        let pu = primitive(u);
        let (u1, u1t) = (pu.l2_norm(), pu.endpoint().norm());
        let t = u.t;
        let p = self.order;
        let up_sq = if p == 1 { u1 * u1 } else { iterated_primitive_sq(u, p) };
        let lhs = (proj + C64::new(0.0, self.drift_coefficient * up_sq)).norm();
        let rhs_small_time = if p == 1 {
            t.powf(DRIFT_NU) * u1 * u1
        } else {
            (t + finite_difference_norm(u, 2 * p - 3) + t.powi(2 - 2 * p as i32) * u1) * up_sq
        };
        let rhs_state = dist * dist;
        let rhs_endpoint = u1t * u1t;
        let closed_loop_rhs = t.sqrt() * u1 + dist;
        Ok(DriftCertificate {
            t,
            k,
            order: p,
            nu: DRIFT_NU,
            drift_coefficient: self.drift_coefficient,
            projection: proj,
            up_sq,
            lhs,
            rhs_small_time,
            rhs_state,
            rhs_endpoint,
            ratio: ratio(lhs, rhs_small_time + rhs_state + rhs_endpoint),
            closed_loop_lhs: u1t,
            closed_loop_rhs,
            closed_loop_ratio: ratio(u1t, closed_loop_rhs),
        })
    }
}

/// Drift certificate for a single control.
pub fn drift_certificate(pot: &Potential, k: usize, u: &Control, order: Option<usize>, j_sim: usize) -> Result<DriftCertificate> {
    DriftContext::new(pot, k, j_sim, order.unwrap_or(1))?.certify(u)
}

/// ‖u_p‖² for the p-th primitive u_p(t) = ∫₀ᵗ u_{p−1}, exact for piecewise-constant u.
pub fn iterated_primitive_sq(u: &Control, p: usize) -> f64 {
    let h = u.h();
    // Values u_q(t_n), q = 1..=p, at the current cell start.
    let mut node = vec![ZERO; p + 1];
    let rule = gl8();
    let mut acc = Vec::with_capacity(u.n());
    let mut fact = vec![1.0; p + 1];
    for r in 1..=p {
        fact[r] = fact[r - 1] * r as f64;
    }
    for v in &u.values {
        node[0] = *v;
        // u_q(t_n + τ) = Σ_{r=0}^{q} u_{q−r}(t_n) τ^r / r!, with u_0 ≡ v on the cell.
        let eval = |q: usize, tau: f64| -> C64 { (0..=q).fold(ZERO, |s, r| s + node[q - r] * (tau.powi(r as i32) / fact[r])) };
        acc.push(rule.integrate(0.0, h, |tau| eval(p, tau).norm_sqr()));
        let next: Vec<C64> = (0..=p).map(|q| if q == 0 { *v } else { eval(q, h) }).collect();
        node = next;
    }
    crate::numerics::pairwise_sum_real(&acc)
}

/// ‖D^m u‖ with D the forward difference quotient on the cell grid (m = 0: ‖u‖).
pub fn finite_difference_norm(u: &Control, m: usize) -> f64 {
    let h = u.h();
    let mut v: Vec<C64> = u.values.clone();
    for _ in 0..m {
        if v.len() < 2 {
            return 0.0;
        }
        v = v.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    }
    (h * v.iter().map(|x| x.norm_sqr()).sum::<f64>()).sqrt()
}
