//! Time kernels K, K_k and the frequency kernel Θ with its decomposition
//! ω²Θ(ω) = −a + Θ_pv(ω) + Θ_reg(ω).

use crate::error::{Result, StlcError};
use crate::numerics::{alternating_tail, hurwitz_zeta, pairwise_sum};
use crate::spectral::{lambda, KernelModel};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative distance to a pole below which Θ is not evaluated.
pub const POLE_TOL: f64 = 1e-9;

/// Number of moments kept in the far-mode expansion of Θ.
const MOMENTS: usize = 17;

/// K(σ) (or K_k(σ)) together with a bound on the truncated tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    pub value: C64,
    pub tail_bound: f64,
}

/// K(σ) = Σ c_j e^{−iλ_j|σ|}; with `modulated`, K_k(σ) = e^{iλ_k|σ|/2} K(σ).
pub fn kernel_value(model: &KernelModel, sigma: f64, modulated: bool) -> KernelValue {
    let s = sigma.abs();
    let shift = if modulated { 0.5 * model.lambda_k() } else { 0.0 };
    let terms: Vec<C64> = model
        .c
        .iter()
        .zip(&model.lambda)
        .map(|(&c, &l)| C64::from_polar(c, -(l - shift) * s))
        .collect();
    KernelValue { value: pairwise_sum(&terms), tail_bound: model.tail_abs_sum() }
}

/// Band index j_ω: the unique j with |ω| ∈ [π²(j²−j), π²(j²+j)); j_0 = 1.
pub fn j_omega(omega: f64) -> usize {
    let x = omega.abs() / (PI * PI);
    let j = ((0.25 + x).sqrt() + 0.5 + 1e-12).floor() as usize;
    j.max(1)
}

/// Θ(ω) with its three-part decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSplit {
    pub omega: f64,
    pub j_omega: usize,
    /// −a.
    pub inv_sq: f64,
    /// Θ_pv(ω) = ½ λ_{jω}² c_{jω} / (λ_{jω} − |ω|).
    pub pv_part: f64,
    /// Θ_reg(ω) = ω²Θ(ω) + a − Θ_pv(ω).
    pub reg_part: f64,
}

/// Precomputed evaluator for Θ, Θ_pv and Θ_reg. Modes far above |ω| enter
/// through an expansion in (ω/λ_j)² whose moments are stored as scaled
/// suffix sums, so each evaluation costs O(√|ω|) operations.
#[derive(Debug, Clone)]
pub struct FrequencyKernel {
    model: KernelModel,
    /// scaled[m][n] = Σ_{j>m} λ_j c_j (λ_{m+1}/λ_j)^{2n}, tail model included.
    scaled: Vec<[f64; MOMENTS]>,
}

impl FrequencyKernel {
    pub fn new(model: &KernelModel) -> Self {
        let jm = model.j_max();
        let mut scaled = vec![[0.0; MOMENTS]; jm + 1];
        scaled[jm] = tail_moments(model, jm);
        for m in (0..jm).rev() {
            let l1 = lambda(m + 1);
            let rho = (l1 / lambda(m + 2)).powi(2);
            let head = l1 * model.c[m + 1];
            let mut rp = 1.0;
            for n in 0..MOMENTS {
                scaled[m][n] = head + rp * scaled[m + 1][n];
                rp *= rho;
            }
        }
        Self { model: model.clone(), scaled }
    }

    pub fn model(&self) -> &KernelModel {
        &self.model
    }

    fn moments(&self, m: usize) -> [f64; MOMENTS] {
        if m <= self.model.j_max() {
            self.scaled[m]
        } else {
            tail_moments(&self.model, m)
        }
    }

    /// Explicit range 1..=m with λ_{m+1} ≥ 4|ω| and m ≥ j_ω.
    fn split_index(omega: f64) -> usize {
        let jw = j_omega(omega);
        let m = (2.0 * omega.abs().sqrt() / PI).ceil() as usize;
        m.max(jw)
    }

    fn check_pole(&self, omega: f64) -> Result<usize> {
        let jw = j_omega(omega);
        let lw = lambda(jw);
        if (omega.abs() - lw).abs() <= POLE_TOL * lw && self.model.c_at(jw) != 0.0 {
            return Err(StlcError::PoleProximity { omega, j: jw });
        }
        Ok(jw)
    }

    /// Θ(ω) = Σ_j λ_j c_j/(λ_j² − ω²).
    pub fn theta(&self, omega: f64) -> Result<f64> {
        self.check_pole(omega)?;
        let w2 = omega * omega;
        let m = Self::split_index(omega);
        let mut acc = 0.0;
        for j in 1..=m {
            let l = lambda(j);
            let c = self.model.c_at(j);
            if c != 0.0 {
                acc += l * c / ((l - omega.abs()) * (l + omega.abs()));
            }
        }
        let l1 = lambda(m + 1);
        let mom = self.moments(m);
        let r = w2 / (l1 * l1);
        let mut far = 0.0;
        let mut rp = 1.0;
        for n in 0..MOMENTS - 1 {
            far += rp * mom[n + 1];
            rp *= r;
        }
        Ok(acc + far / (l1 * l1))
    }

    /// Θ_pv(ω).
    pub fn theta_pv(&self, omega: f64) -> Result<f64> {
        let jw = self.check_pole(omega)?;
        let l = lambda(jw);
        let c = self.model.c_at(jw);
        Ok(if c == 0.0 { 0.0 } else { 0.5 * l * l * c / (l - omega.abs()) })
    }

    /// Θ_reg(ω), evaluated without cancellation near the band pole.
    pub fn theta_reg(&self, omega: f64) -> f64 {
        let w = omega.abs();
        let jw = j_omega(omega);
        let m = Self::split_index(omega);
        let mut acc = 0.0;
        for j in 1..=m {
            let l = lambda(j);
            let c = self.model.c_at(j);
            if c == 0.0 {
                continue;
            }
            acc += if j == jw { 0.5 * l * l * c / (l + w) } else { l * l * l * c / ((l - w) * (l + w)) };
        }
        let l1 = lambda(m + 1);
        let mom = self.moments(m);
        let r = w * w / (l1 * l1);
        let mut rp = 1.0;
        for x in mom.iter() {
            acc += rp * x;
            rp *= r;
        }
        acc
    }

    /// Three-part decomposition at ω.
    pub fn split(&self, omega: f64) -> Result<ThetaSplit> {
        Ok(ThetaSplit {
            omega,
            j_omega: j_omega(omega),
            inv_sq: -self.model.a,
            pv_part: self.theta_pv(omega)?,
            reg_part: self.theta_reg(omega),
        })
    }
}

/// Scaled tail moments Σ_{j>m} λ_j c_j (λ_{m+1}/λ_j)^{2n} with c_j from the
/// stored values up to J and the tail model beyond.
fn tail_moments(model: &KernelModel, m: usize) -> [f64; MOMENTS] {
    let mut out = [0.0; MOMENTS];
    if !model.has_tail() {
        // Only stored coefficients above m contribute.
        let l1 = lambda(m + 1);
        for j in m + 1..=model.j_max() {
            let l = lambda(j);
            let mut x = l * model.c[j];
            for o in out.iter_mut() {
                *o += x;
                x *= (l1 / l).powi(2);
            }
        }
        return out;
    }
    let jm = model.j_max();
    let start = m.max(jm);
    // Stored modes between m and J.
    let l1 = lambda(m + 1);
    for j in m + 1..=jm {
        let l = lambda(j);
        let mut x = l * model.c[j];
        for o in out.iter_mut() {
            *o += x;
            x *= (l1 / l).powi(2);
        }
    }
    // Tail model beyond max(m, J): π^{−2} Σ (P + (−1)^j Q) j^{−2−4n}, scaled by (m+1)^{4n}.
    let q = (m + 1) as f64;
    for (n, o) in out.iter_mut().enumerate() {
        let s = 2.0 + 4.0 * n as f64;
        let sum = model.tail_p * hurwitz_zeta(s, start as f64 + 1.0) + model.tail_q * alternating_tail(s, start);
        let v = sum * (4.0 * n as f64 * q.ln()).exp() / (PI * PI);
        if v.is_finite() {
            *o += v;
        }
    }
    out
}

/// Θ(ω) for a single frequency.
pub fn theta(model: &KernelModel, omega: f64) -> Result<f64> {
    FrequencyKernel::new(model).theta(omega)
}

/// Three-part decomposition for a single frequency.
pub fn theta_split(model: &KernelModel, omega: f64) -> Result<ThetaSplit> {
    FrequencyKernel::new(model).split(omega)
}

/// CSV table (σ, Re K, Im K) of the (optionally modulated) kernel.
pub fn write_kernel_csv<W: std::io::Write>(model: &KernelModel, sigmas: &[f64], modulated: bool, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sigma", "re_k", "im_k"]).map_err(io_err)?;
    for &s in sigmas {
        let v = kernel_value(model, s, modulated).value;
        wr.write_record(&[fmt(s), fmt(v.re), fmt(v.im)]).map_err(io_err)?;
    }
    wr.flush().map_err(|e| StlcError::Io(e.to_string()))
}

/// CSV table (ω, Θ, Θ_pv, Θ_reg); frequencies too close to a pole are skipped.
pub fn write_theta_csv<W: std::io::Write>(model: &KernelModel, omegas: &[f64], w: W) -> Result<()> {
    let fk = FrequencyKernel::new(model);
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["omega", "theta", "theta_pv", "theta_reg"]).map_err(io_err)?;
    for &om in omegas {
        let (Ok(t), Ok(sp)) = (fk.theta(om), fk.split(om)) else { continue };
        wr.write_record(&[fmt(om), fmt(t), fmt(sp.pv_part), fmt(sp.reg_part)]).map_err(io_err)?;
    }
    wr.flush().map_err(|e| StlcError::Io(e.to_string()))
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn io_err(e: csv::Error) -> StlcError {
    StlcError::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{interaction_coefficients, Potential, J_SERIES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_model(k: usize, j: usize) -> KernelModel {
        interaction_coefficients(&Potential::linear(j), k, j).unwrap()
    }

    #[test]
    fn kernel_at_zero_is_one_twelfth() {
        let m = linear_model(0, J_SERIES);
        let k = kernel_value(&m, 0.0, false);
        assert!((k.value.re - 1.0 / 12.0).abs() < 1e-12 && k.value.im == 0.0);
        assert!((kernel_value(&m, 0.0, true).value - k.value).norm() == 0.0);
        let z = interaction_coefficients(&Potential::zero(64), 0, 64).unwrap();
        assert_eq!(kernel_value(&z, 0.3, false).value, C64::new(0.0, 0.0));
    }

    #[test]
    fn kernel_is_bounded_by_absolute_sum() {
        let m = linear_model(0, 200);
        let bound: f64 = m.c.iter().map(|c| c.abs()).sum();
        for i in 0..50 {
            let s = 0.037 * i as f64;
            assert!(kernel_value(&m, s, false).value.norm() <= bound + 1e-15);
        }
    }

    #[test]
    fn modulated_derivative_jump_equals_two_i_a_k() {
        let pot = Potential::linear(60);
        let m = interaction_coefficients(&pot, 2, 60).unwrap().without_tail();
        let h = 1e-8;
        let k = |s: f64| kernel_value(&m, s, true).value;
        // Second-order one-sided difference quotients.
        let dplus = (k(0.0) * -3.0 + k(h) * 4.0 - k(2.0 * h)) / (2.0 * h);
        let dminus = (k(0.0) * 3.0 - k(-h) * 4.0 + k(-2.0 * h)) / (2.0 * h);
        let jump = dminus - dplus;
        let expect = C64::new(0.0, 2.0 * m.a_k);
        assert!((jump - expect).norm() < 1e-5 * expect.norm(), "{jump} vs {expect}");
    }

    #[test]
    fn band_index() {
        assert_eq!(j_omega(0.0), 1);
        assert_eq!(j_omega(2.0 * PI * PI), 2);
        assert_eq!(j_omega(6.0 * PI * PI), 3);
        assert_eq!(j_omega(-6.5 * PI * PI), 3);
        for j in 1..50usize {
            let lo = PI * PI * (j * j - j) as f64;
            let hi = PI * PI * (j * j + j) as f64;
            assert_eq!(j_omega(0.5 * (lo + hi)), j);
            assert_eq!(j_omega(hi * (1.0 - 1e-9)), j);
        }
    }

    #[test]
    fn theta_matches_direct_series() {
        let m = linear_model(0, 2000);
        let fk = FrequencyKernel::new(&m);
        for &om in &[0.0, 3.0, 50.0, 400.0, 5000.0, -5000.0, 30000.0] {
            let direct: f64 = (1..=2000).map(|j| m.lambda[j] * m.c[j] / (m.lambda[j].powi(2) - om * om)).sum::<f64>();
            // Analytic tail beyond J (odd modes of the linear potential, λ_j ≫ ω).
            let tail: f64 = (2001..400_000usize).map(|j| m.c_tail(j) / lambda(j)).sum::<f64>();
            let t = fk.theta(om).unwrap();
            assert!((t - direct - tail).abs() < 1e-12 * direct.abs().max(1e-12), "ω={om}: {t} vs {}", direct + tail);
        }
        // Θ(0) = Σ c_j/λ_j
        let t0 = fk.theta(0.0).unwrap();
        let s: f64 = (1..=2000).map(|j| m.c[j] / m.lambda[j]).sum();
        assert!((t0 - s).abs() < 1e-15);
    }

    #[test]
    fn theta_is_even_and_zero_for_zero_potential() {
        let m = linear_model(0, 500);
        let fk = FrequencyKernel::new(&m);
        for &om in &[1.0, 77.0, 1234.5] {
            assert_eq!(fk.theta(om).unwrap(), fk.theta(-om).unwrap());
        }
        let z = interaction_coefficients(&Potential::zero(64), 0, 64).unwrap();
        let s = theta_split(&z, 123.0).unwrap();
        assert_eq!((s.inv_sq, s.pv_part, s.reg_part), (0.0, 0.0, 0.0));
        assert_eq!(theta(&z, lambda(3)).unwrap(), 0.0);
    }

    #[test]
    fn pole_proximity_is_an_error() {
        let m = linear_model(0, 100);
        assert!(matches!(theta(&m, lambda(3)), Err(StlcError::PoleProximity { j: 3, .. })));
        // c_2 = 0: no singularity at λ_2.
        assert!(theta(&m, lambda(2)).is_ok());
    }

    #[test]
    fn split_reconstructs_theta() {
        let m = linear_model(0, J_SERIES);
        let fk = FrequencyKernel::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let om: f64 = rng.gen_range(-2e4..2e4);
            let Ok(t) = fk.theta(om) else { continue };
            let s = fk.split(om).unwrap();
            let lhs = om * om * t;
            let rhs = s.inv_sq + s.pv_part + s.reg_part;
            let scale = lhs.abs() + s.inv_sq.abs() + s.pv_part.abs() + s.reg_part.abs();
            worst = worst.max((lhs - rhs).abs() / scale);
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn pv_part_vanishes_in_even_bands_for_linear_potential() {
        let m = linear_model(0, 200);
        let s = theta_split(&m, 4.3 * PI * PI).unwrap();
        assert_eq!(s.j_omega, 2);
        assert_eq!(s.pv_part, 0.0);
    }

    #[test]
    fn pv_part_bounded_off_poles() {
        let m = linear_model(0, 400);
        let fk = FrequencyKernel::new(&m);
        let bound = (1..=400).map(|j| (m.lambda[j].powi(2) * m.c[j]).abs()).fold(0.0, f64::max);
        for i in 0..20000 {
            let om = 0.5 * i as f64;
            let jw = j_omega(om);
            if (om - lambda(jw)).abs() < 1.0 {
                continue;
            }
            assert!(fk.theta_pv(om).unwrap().abs() <= bound);
        }
    }
}
