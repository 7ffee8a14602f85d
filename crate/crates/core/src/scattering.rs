//! Irreducible energies of semi-transparent delta plates on a line.
//!
//! A plate at `a_i` with coupling `λ_i` adds `λ_i δ(x - a_i)` to `-∂²`, which
//! enters the resolvent at imaginary frequency `ξ` through the matrix
//! `M_ij = δ_ij + (λ_i / 2ξ) e^{-ξ|a_i - a_j|}`. The energy of a stack is
//!
//! ```text
//! E = (1/2π) ∫_0^∞ dξ Σ_s (-1)^{K-|s|} ln det M_s(ξ).
//! ```
//!
//! Pulling `1 + λ_i/2ξ` out of every row leaves a matrix with unit diagonal
//! and off-diagonal `r_i e^{-ξ|a_i-a_j|}`, `r_i = λ_i/(λ_i + 2ξ)`. The row
//! factors cancel in the alternating sum, so the integrand is assembled from
//! the normalized determinants only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::integrate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatteringError {
    #[error("stacks hold 2 or 3 plates, got {0}")]
    PlateCount(usize),
    #[error("positions and couplings differ in length")]
    LengthMismatch,
    #[error("coupling {0} must be finite and nonnegative")]
    BadCoupling(f64),
    #[error("position {0} must be finite")]
    BadPosition(f64),
    #[error("frequency must be positive, got {0}")]
    BadFrequency(f64),
    #[error("subset mask {0:#b} out of range")]
    BadSubset(u32),
    #[error("integrand cancellation violated at xi = {0:e}")]
    Cancellation(f64),
    #[error("quadrature did not converge: tol and tol/2 differ by {0:e} relative")]
    NotConverged(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateStack {
    pub positions: Vec<f64>,
    pub couplings: Vec<f64>,
}

impl PlateStack {
    pub fn new(positions: Vec<f64>, couplings: Vec<f64>) -> Result<Self, ScatteringError> {
        if positions.len() != couplings.len() {
            return Err(ScatteringError::LengthMismatch);
        }
        if !(2..=3).contains(&positions.len()) {
            return Err(ScatteringError::PlateCount(positions.len()));
        }
        if let Some(&a) = positions.iter().find(|a| !a.is_finite()) {
            return Err(ScatteringError::BadPosition(a));
        }
        if let Some(&l) = couplings.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(ScatteringError::BadCoupling(l));
        }
        Ok(PlateStack { positions, couplings })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Plates reordered by position.
    fn sorted(&self) -> PlateStack {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.positions[a].total_cmp(&self.positions[b]));
        PlateStack {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            couplings: idx.iter().map(|&i| self.couplings[i]).collect(),
        }
    }
}

/// `ln det[δ_ij + (λ_i/2ξ) e^{-ξ|a_i - a_j|}]` over the plates in `subset`.
pub fn subset_logdet(stack: &PlateStack, subset: u32, xi: f64) -> Result<f64, ScatteringError> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(ScatteringError::BadFrequency(xi));
    }
    if subset >> stack.len() != 0 {
        return Err(ScatteringError::BadSubset(subset));
    }
    let members: Vec<usize> = (0..stack.len()).filter(|i| subset >> i & 1 == 1).collect();
    if members.is_empty() {
        return Ok(0.0);
    }
    let k = members.len();
    let m = nalgebra::DMatrix::from_fn(k, k, |r, c| {
        let (i, j) = (members[r], members[c]);
        let diag = if r == c { 1.0 } else { 0.0 };
        diag + stack.couplings[i] / (2.0 * xi) * (-xi * (stack.positions[i] - stack.positions[j]).abs()).exp()
    });
    Ok(m.determinant().ln())
}

/// Pair factor `1 - r_i r_j e^{-2ξ d}`, computed as
/// `-expm1(ln(1-ρ_i) + ln(1-ρ_j) - 2ξd)` with `ρ = 2ξ/(λ+2ξ)` so that it
/// keeps full precision near the Dirichlet limit.
fn pair_factor(rho_i: f64, rho_j: f64, xi: f64, gap: f64) -> f64 {
    -((-rho_i).ln_1p() + (-rho_j).ln_1p() - 2.0 * xi * gap).exp_m1()
}

/// Alternating sum of normalized log-determinants at frequency `xi`.
fn combined_integrand(stack: &PlateStack, xi: f64) -> f64 {
    let rho: Vec<f64> = stack.couplings.iter().map(|&l| 2.0 * xi / (l + 2.0 * xi)).collect();
    let a = &stack.positions;
    match stack.len() {
        2 => pair_factor(rho[0], rho[1], xi, (a[1] - a[0]).abs()).ln(),
        3 => {
            // Plates sorted, so e_13 = e_12 e_23 and
            // det N_123 = D_12 D_23 - r_1 r_3 e_13² (1 - r_2)².
            let d12 = pair_factor(rho[0], rho[1], xi, a[1] - a[0]);
            let d23 = pair_factor(rho[1], rho[2], xi, a[2] - a[1]);
            let d13 = pair_factor(rho[0], rho[2], xi, a[2] - a[0]);
            let r1r3e = ((-rho[0]).ln_1p() + (-rho[2]).ln_1p() - 2.0 * xi * (a[2] - a[0])).exp();
            let x = r1r3e * rho[1] * rho[1] / (d12 * d23);
            (-x).ln_1p() - d13.ln()
        }
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringConfig {
    /// Relative tolerance of the adaptive quadrature.
    pub tolerance: f64,
    pub max_panels: usize,
}

impl Default for ScatteringConfig {
    fn default() -> Self {
        ScatteringConfig { tolerance: 1e-10, max_panels: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringEnergy {
    pub value: f64,
    pub quadrature_error: f64,
}

fn integrate_stack(stack: &PlateStack, tolerance: f64, max_panels: usize) -> Result<(f64, f64), ScatteringError> {
    // Scale the frequency range to the smallest positive gap and the couplings.
    let gaps: Vec<f64> = stack
        .positions
        .windows(2)
        .map(|w| w[1] - w[0])
        .chain(std::iter::once(stack.positions[stack.len() - 1] - stack.positions[0]))
        .filter(|g| *g > 0.0)
        .collect();
    let mut scale: f64 = gaps.iter().map(|g| 1.0 / g).fold(0.0, f64::max);
    scale = scale.max(stack.couplings.iter().copied().fold(0.0, f64::max)).max(1e-300);
    let (u_lo, u_hi) = ((1e-16 * scale).ln(), (1e16 * scale).ln());
    let mut bad = None;
    let f = |u: f64| {
        let xi = u.exp();
        let v = combined_integrand(stack, xi);
        if !v.is_finite() {
            bad.get_or_insert(xi);
            return 0.0;
        }
        v * xi
    };
    let r = integrate(f, u_lo, u_hi, 0.0, tolerance, max_panels);
    if let Some(xi) = bad {
        return Err(ScatteringError::Cancellation(xi));
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI);
    Ok((r.value * norm, r.error * norm))
}

/// Irreducible energy of a 2- or 3-plate stack.
///
/// The integral is evaluated at `tolerance` and at half of it; the two must
/// agree to `1e-8` relative.
pub fn irreducible_energy_1d(
    stack: &PlateStack,
    config: &ScatteringConfig,
) -> Result<ScatteringEnergy, ScatteringError> {
    let stack = PlateStack::new(stack.positions.clone(), stack.couplings.clone())?.sorted();
    if stack.couplings.contains(&0.0) {
        return Ok(ScatteringEnergy { value: 0.0, quadrature_error: 0.0 });
    }
    let (coarse, e1) = integrate_stack(&stack, config.tolerance, config.max_panels)?;
    let (fine, e2) = integrate_stack(&stack, 0.5 * config.tolerance, 2 * config.max_panels)?;
    let diff = (fine - coarse).abs();
    let rel = if fine != 0.0 { diff / fine.abs() } else { diff };
    if rel >= 1e-8 {
        return Err(ScatteringError::NotConverged(rel));
    }
    Ok(ScatteringEnergy { value: fine, quadrature_error: diff.max(e1).max(e2) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub gap: f64,
    pub energy: f64,
    pub quadrature_error: f64,
}

/// Moves plate 2 to `a_1 + gap` for every gap and evaluates the energy.
pub fn coincidence_scan(
    stack: &PlateStack,
    gaps: &[f64],
    config: &ScatteringConfig,
) -> Result<Vec<ScanPoint>, ScatteringError> {
    if stack.len() != 3 {
        return Err(ScatteringError::PlateCount(stack.len()));
    }
    gaps.par_iter()
        .map(|&gap| {
            let mut s = stack.clone();
            s.positions[1] = s.positions[0] + gap;
            let e = irreducible_energy_1d(&s, config)?;
            Ok(ScanPoint { gap, energy: e.value, quadrature_error: e.quadrature_error })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn energy(pos: &[f64], lam: &[f64]) -> f64 {
        irreducible_energy_1d(&PlateStack::new(pos.to_vec(), lam.to_vec()).unwrap(), &ScatteringConfig::default())
            .unwrap()
            .value
    }

    #[test]
    fn single_plate_logdet() {
        let s = PlateStack::new(vec![0.0, 1.0], vec![3.0, 2.0]).unwrap();
        assert!((subset_logdet(&s, 0b01, 0.5).unwrap() - 4.0f64.ln()).abs() < 1e-14);
        assert_eq!(subset_logdet(&s, 0, 0.5).unwrap(), 0.0);
        assert!(subset_logdet(&s, 0b100, 0.5).is_err());
        assert!(subset_logdet(&s, 1, 0.0).is_err());
    }

    #[test]
    fn combined_integrand_matches_determinants() {
        let s = PlateStack::new(vec![0.0, 0.4, 1.0], vec![2.0, 3.0, 5.0]).unwrap();
        for xi in [0.01, 0.3, 2.0, 11.0] {
            let mut alt = 0.0;
            for m in 0..8u32 {
                let sign = if (3 - m.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
                alt += sign * subset_logdet(&s, m, xi).unwrap();
            }
            assert!((alt - combined_integrand(&s, xi)).abs() < 1e-11 * (1.0 + alt.abs()), "{xi}");
        }
    }

    #[test]
    fn pair_factors_invert_to_x_factors() {
        // X_ij = 1/(1 - r_i r_j e^{-2ξ|a_i-a_j|}) is the inverse of the 2×2
        // normalized determinant.
        let (l1, l2, xi, d): (f64, f64, f64, f64) = (1.5, 4.0, 0.7, 0.6);
        let (r1, r2) = (l1 / (l1 + 2.0 * xi), l2 / (l2 + 2.0 * xi));
        let n = nalgebra::Matrix2::new(1.0, r1 * (-xi * d).exp(), r2 * (-xi * d).exp(), 1.0);
        let x = 1.0 / pair_factor(1.0 - r1, 1.0 - r2, xi, d);
        assert!((x * n.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dirichlet_limit() {
        let e = energy(&[0.0, 1.0], &[1e6, 1e6]);
        assert!((e + PI / 24.0).abs() < 1e-3 * PI / 24.0, "{e}");
        assert!((e + 0.130_899_432_100_90).abs() < 1e-9);
        let wide = energy(&[0.0, 2.0], &[5e5, 5e5]);
        assert!((wide - e / 2.0).abs() < 1e-10);
    }

    #[test]
    fn reference_values() {
        let cases: [(&[f64], &[f64], f64); 4] = [
            (&[0.0, 1.0], &[1.0, 1.0], -0.050_406_312_664_151_7),
            (&[0.0, 0.5, 1.0], &[1.0, 1.0, 1.0], 0.042_096_985_935_930_8),
            (&[0.0, 0.4, 1.0], &[2.0, 3.0, 5.0], 0.075_348_243_824_164_3),
            (&[0.0, 0.0, 1.0], &[2.0, 3.0, 5.0], 0.074_557_455_431_150_5),
        ];
        for (p, l, want) in cases {
            let got = energy(p, l);
            assert!((got - want).abs() < 1e-9 * want.abs(), "{p:?} {l:?}: {got} vs {want}");
        }
    }

    #[test]
    fn transparent_plate_gives_zero() {
        assert_eq!(energy(&[0.0, 1.0], &[0.0, 4.0]), 0.0);
    }

    #[test]
    fn exchange_symmetry() {
        let base = energy(&[0.0, 0.4, 1.0], &[2.0, 3.0, 5.0]);
        for (p, l) in [([1.0, 0.0, 0.4], [5.0, 2.0, 3.0]), ([0.4, 1.0, 0.0], [3.0, 5.0, 2.0])] {
            assert!((energy(&p, &l) - base).abs() < 1e-12);
        }
        // Mirror image.
        assert!((energy(&[0.0, 0.6, 1.0], &[5.0, 3.0, 2.0]) - base).abs() < 1e-10);
    }

    #[test]
    fn scan_is_continuous_and_ends_finite() {
        let s = PlateStack::new(vec![0.0, 0.5, 1.0], vec![2.0, 3.0, 5.0]).unwrap();
        let gaps: Vec<f64> = (0..=8).map(|k| 0.4 * (1.0 - k as f64 / 8.0)).collect();
        let scan = coincidence_scan(&s, &gaps, &ScatteringConfig::default()).unwrap();
        for w in scan.windows(2) {
            assert!((w[1].energy - w[0].energy).abs() < 0.01);
        }
        let last = scan.last().unwrap();
        assert!(last.energy.is_finite() && last.energy > 0.0);
        assert!((last.energy - 0.074_557_455_431_150_5).abs() < 1e-9);
    }

    #[test]
    fn energy_vanishes_for_far_plates() {
        // Low frequencies see every plate as nearly perfect, so the decay is
        // a power of the gap rather than exponential.
        let near = energy(&[0.0, 20.0, 40.0], &[1.0, 1.0, 1.0]);
        let far = energy(&[0.0, 200.0, 400.0], &[1.0, 1.0, 1.0]);
        assert!(far > 0.0 && far < 0.2 * near, "{near} {far}");
    }

    #[test]
    fn rejects_bad_stacks() {
        assert_eq!(PlateStack::new(vec![0.0], vec![1.0]), Err(ScatteringError::PlateCount(1)));
        assert_eq!(PlateStack::new(vec![0.0, 1.0], vec![1.0]), Err(ScatteringError::LengthMismatch));
        assert_eq!(PlateStack::new(vec![0.0, 1.0], vec![-1.0, 1.0]), Err(ScatteringError::BadCoupling(-1.0)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn signs_follow_plate_count(
                l in proptest::collection::vec(0.1f64..20.0, 3),
                g1 in 0.05f64..2.0,
                g2 in 0.05f64..2.0,
            ) {
                let two = energy(&[0.0, g1], &l[..2]);
                let three = energy(&[0.0, g1, g1 + g2], &l);
                prop_assert!(two < 0.0);
                prop_assert!(three > 0.0);
            }

            #[test]
            fn magnitude_grows_with_coupling(l in 0.1f64..10.0, bump in 0.1f64..10.0) {
                let a = energy(&[0.0, 0.3, 1.0], &[l, 2.0, 3.0]);
                let b = energy(&[0.0, 0.3, 1.0], &[l + bump, 2.0, 3.0]);
                prop_assert!(b.abs() >= a.abs());
            }
        }
    }
}
