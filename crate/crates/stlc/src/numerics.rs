//! Shared numerical kernels: Gauss–Legendre panels, Hurwitz-zeta tails,
//! stable exponential divided differences and pairwise summation.

use gauss_quad::GaussLegendre;
use num_complex::Complex64 as C64;
use std::sync::OnceLock;

/// Node/weight pairs of a Gauss–Legendre rule on [−1, 1].
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Builds an `n`-point Gauss–Legendre rule (`n ≥ 2`).
    pub fn new(n: usize) -> Self {
        let rule = GaussLegendre::new(n.max(2)).expect("Gauss-Legendre degree >= 2");
        let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Mapped nodes and weights on [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(move |(&x, &w)| (c + r * x, r * w))
    }

    /// ∫_a^b f for a real integrand.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// ∫_a^b f for a complex integrand.
    pub fn integrate_c<F: FnMut(f64) -> C64>(&self, a: f64, b: f64, mut f: F) -> C64 {
        self.mapped(a, b).map(|(x, w)| f(x) * w).sum()
    }
}

/// Shared 16-point rule.
pub fn gl16() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(16))
}

/// Shared 8-point rule.
pub fn gl8() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(8))
}

/// Composite Gauss–Legendre integral of `f` over [a, b] with `panels` equal panels.
pub fn composite<F: FnMut(f64) -> f64>(rule: &GaussRule, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        acc += rule.integrate(lo, lo + h, &mut f);
    }
    acc
}

const BERNOULLI_2K: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Hurwitz zeta ζ(s, q) = Σ_{n≥0} (n+q)^{−s} for s > 1, q > 0, by direct
/// summation up to a shifted argument followed by Euler–Maclaurin.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    assert!(s > 1.0 && q > 0.0, "hurwitz_zeta requires s > 1, q > 0");
    let shift = if q < 16.0 { (16.0 - q).ceil() as usize } else { 0 };
    let mut direct = 0.0;
    for n in 0..shift {
        direct += (q + n as f64).powf(-s);
    }
    let a = q + shift as f64;
    let mut em = a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    // Rising factorial s(s+1)...(s+2k−2) / (2k)! · a^{−s−2k+1}
    let mut rising = s;
    let mut fact = 2.0;
    let mut pow = a.powf(-s - 1.0);
    for (k, b) in BERNOULLI_2K.iter().enumerate() {
        let kk = (k + 1) as f64;
        em += b / fact * rising * pow;
        rising *= (s + 2.0 * kk - 1.0) * (s + 2.0 * kk);
        fact *= (2.0 * kk + 1.0) * (2.0 * kk + 2.0);
        pow /= a * a;
    }
    direct + em
}

/// Σ_{n>J} n^{−s}.
pub fn zeta_tail(s: f64, j: usize) -> f64 {
    hurwitz_zeta(s, j as f64 + 1.0)
}

/// Σ_{n>J} (−1)^n n^{−s}.
pub fn alternating_tail(s: f64, j: usize) -> f64 {
    2.0 * 2f64.powf(-s) * hurwitz_zeta(s, (j / 2) as f64 + 1.0) - hurwitz_zeta(s, j as f64 + 1.0)
}

/// φ₁(z) = (e^z − 1)/z with a series branch near 0.
pub fn phi1(z: C64) -> C64 {
    if z.norm() < 1e-3 {
        // 1 + z/2 + z²/6 + z³/24 + z⁴/120
        C64::new(1.0, 0.0) + z * (0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0)))
    } else {
        (z.exp() - 1.0) / z
    }
}

/// First divided difference exp[z0, z1].
pub fn dd_exp1(z0: C64, z1: C64) -> C64 {
    z0.exp() * phi1(z1 - z0)
}

/// Second divided difference exp[z0, z1, z2], stable for clustered nodes.
pub fn dd_exp2(z0: C64, z1: C64, z2: C64) -> C64 {
    let pts = [z0, z1, z2];
    let d01 = (z0 - z1).norm();
    let d02 = (z0 - z2).norm();
    let d12 = (z1 - z2).norm();
    let dmax = d01.max(d02).max(d12);
    if dmax >= 1.0 {
        // Widest pair in the denominator.
        let (a, m, b) = if d02 >= d01 && d02 >= d12 {
            (pts[0], pts[1], pts[2])
        } else if d01 >= d12 {
            (pts[0], pts[2], pts[1])
        } else {
            (pts[1], pts[0], pts[2])
        };
        return (dd_exp1(m, b) - dd_exp1(a, m)) / (b - a);
    }
    // e^{z0} Σ_n h_n(d1, d2)/(n+2)!, h_n complete homogeneous polynomial.
    let d1 = z1 - z0;
    let d2 = z2 - z0;
    let mut h = C64::new(1.0, 0.0);
    let mut d1n = C64::new(1.0, 0.0);
    let mut inv_fact = 0.5;
    let mut acc = h * inv_fact;
    for n in 1..40 {
        d1n *= d1;
        h = d2 * h + d1n;
        inv_fact /= (n + 2) as f64;
        let term = h * inv_fact;
        acc += term;
        if term.norm() < 1e-18 * acc.norm() {
            break;
        }
    }
    z0.exp() * acc
}

/// Pairwise (cascade) summation of complex values.
pub fn pairwise_sum(v: &[C64]) -> C64 {
    if v.len() <= 32 {
        return v.iter().copied().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Pairwise summation of real values.
pub fn pairwise_sum_real(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum_real(&v[..mid]) + pairwise_sum_real(&v[mid..])
}

/// Bisection on a sign change of `f` in [lo, hi] to full double precision.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        let r = GaussRule::new(8);
        let v = r.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn hurwitz_matches_known_values() {
        // ζ(2,1) = π²/6, ζ(4,1) = π⁴/90.
        assert!((hurwitz_zeta(2.0, 1.0) - PI * PI / 6.0).abs() < 1e-14);
        assert!((hurwitz_zeta(4.0, 1.0) - PI.powi(4) / 90.0).abs() < 1e-14);
        // Direct comparison at a large shift.
        let direct: f64 = (0..2_000_000).map(|n| (n as f64 + 1000.0).powi(-4)).sum::<f64>()
            + (2_001_000.0f64 - 0.5).powi(-3) / 3.0;
        let h = hurwitz_zeta(4.0, 1000.0);
        assert!((h - direct).abs() < 1e-10 * h);
    }

    #[test]
    fn alternating_tail_matches_direct_sum() {
        for &j in &[0usize, 1, 7, 10, 33] {
            let direct: f64 = (j + 1..200_000)
                .map(|n| if n % 2 == 0 { 1.0 } else { -1.0 } * (n as f64).powi(-4))
                .sum();
            assert!((alternating_tail(4.0, j) - direct).abs() < 1e-15, "j={j}");
        }
        // Σ_{n≥1} (−1)^n n^{−2} = −π²/12
        assert!((alternating_tail(2.0, 0) + PI * PI / 12.0).abs() < 1e-13);
    }

    #[test]
    fn divided_differences_agree_across_branches() {
        let z0 = C64::new(0.1, 0.3);
        for &scale in &[1e-6, 1e-2, 0.5, 0.99, 1.01, 3.0, 50.0] {
            let z1 = z0 + C64::new(0.0, 0.7 * scale);
            let z2 = z0 + C64::new(0.0, -0.4 * scale);
            // Reference via Hermite–Genocchi quadrature over the simplex.
            let r = GaussRule::new(60);
            let mut refv = C64::new(0.0, 0.0);
            for (x, wx) in r.mapped(0.0, 1.0) {
                for (y, wy) in r.mapped(0.0, x) {
                    refv += (z0 + (z1 - z0) * x + (z2 - z1) * y).exp() * (wx * wy);
                }
            }
            let v = dd_exp2(z0, z1, z2);
            assert!((v - refv).norm() < 1e-12 * (1.0 + refv.norm()), "scale {scale}: {v} vs {refv}");
        }
    }

    #[test]
    fn phi1_is_continuous_at_branch_switch() {
        let a = phi1(C64::new(0.0, 0.999e-3));
        let b = phi1(C64::new(0.0, 1.001e-3));
        assert!((a - b).norm() < 1e-6);
    }
}
