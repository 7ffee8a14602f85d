//! Closed-form reference energies for hyper-rectangles of Dirichlet planes.
//!
//! For `2d` planes bounding a box with sides `ℓ_1..ℓ_d` the irreducible
//! energy is
//!
//! ```text
//! E = -Γ((d+1)/2) / (4 π^{(d+1)/2}) · Σ_{n ≥ 1} V / L(n)^{d+1},
//! V = Π ℓ_j,  L(n)² = Σ n_j² ℓ_j².
//! ```
//!
//! The lattice sum is evaluated over the box `n_j ≤ K_j`. Because the
//! summand decreases in every index, the remaining tail lies between the
//! integrals of `L^{-(d+1)}` over the lattice cells shifted down and up by
//! one. Both integrals reduce to one-dimensional proper-time integrals of
//! products of `erfc`, which are evaluated adaptively.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::integrate;
use crate::special::{erfc, gamma, theta_tail};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("side length {0} must be positive and finite")]
    BadLength(f64),
    #[error("need at least one side")]
    NoSides,
    #[error("truncation must be at least 1 per axis")]
    BadTruncation,
    #[error("collapse check needs d >= 2 and an axis below d, got axis {axis} in d = {dim}")]
    BadCollapseAxis { axis: usize, dim: usize },
    #[error("lattice sum of {0} terms is too large")]
    TooManyTerms(u128),
}

/// Largest number of lattice terms summed directly.
pub const MAX_TERMS: u128 = 400_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleConfig {
    pub lengths: Vec<f64>,
    /// Truncation `K_j` per axis.
    pub n_max: Vec<usize>,
}

impl RectangleConfig {
    pub fn new(lengths: Vec<f64>, n_max: Vec<usize>) -> Result<Self, OracleError> {
        let c = RectangleConfig { lengths, n_max };
        c.validate()?;
        Ok(c)
    }

    /// Truncates every axis at the same length `cutoff`: `K_j = ⌈cutoff/ℓ_j⌉`.
    pub fn with_cutoff(lengths: Vec<f64>, cutoff: f64) -> Result<Self, OracleError> {
        let n_max = lengths.iter().map(|l| ((cutoff / l).ceil().max(1.0)) as usize).collect();
        Self::new(lengths, n_max)
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    fn validate(&self) -> Result<(), OracleError> {
        if self.lengths.is_empty() {
            return Err(OracleError::NoSides);
        }
        if let Some(&l) = self.lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(OracleError::BadLength(l));
        }
        if self.n_max.len() != self.lengths.len() || self.n_max.contains(&0) {
            return Err(OracleError::BadTruncation);
        }
        let terms: u128 = self.n_max.iter().map(|&k| k as u128).product();
        if terms > MAX_TERMS {
            return Err(OracleError::TooManyTerms(terms));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectangleEnergy {
    /// Partial sum plus the midpoint of the tail bracket.
    pub value: f64,
    /// Energy from the lattice terms inside the truncation box.
    pub partial_sum: f64,
    /// Midpoint of the tail bracket.
    pub tail_estimate: f64,
    /// `|value - exact| ≤ tail_bound`.
    pub tail_bound: f64,
}

/// `-Γ((d+1)/2) / (4 π^{(d+1)/2}) · V`.
fn prefactor(lengths: &[f64]) -> f64 {
    let d = lengths.len() as f64;
    let volume: f64 = lengths.iter().product();
    -gamma((d + 1.0) / 2.0) / (4.0 * std::f64::consts::PI.powf((d + 1.0) / 2.0)) * volume
}

/// `Σ_{1 ≤ n_j ≤ K_j} L(n)^{-(d+1)}`, with the last axis summed innermost.
fn lattice_sum(lengths: &[f64], n_max: &[usize]) -> f64 {
    let d = lengths.len();
    let p = (d as f64 + 1.0) / 2.0;
    let last = d - 1;
    let inner = |base: f64| -> f64 {
        let l2 = lengths[last] * lengths[last];
        // Smallest terms first.
        (1..=n_max[last]).rev().map(|n| (base + (n * n) as f64 * l2).powf(-p)).sum()
    };
    if d == 1 {
        return inner(0.0);
    }
    let outer: usize = n_max[..last].iter().product();
    (0..outer)
        .into_par_iter()
        .with_min_len(64)
        .map(|mut flat| {
            let mut base = 0.0;
            for j in (0..last).rev() {
                let n = flat % n_max[j] + 1;
                flat /= n_max[j];
                base += (n * n) as f64 * lengths[j] * lengths[j];
            }
            inner(base)
        })
        .collect::<Vec<f64>>()
        .iter()
        .rev()
        .sum()
}

/// `∫ L(x)^{-(d+1)} dx` over `{x_j ≥ lo_j ∀j} \ {x_j < hi_j ∀j}`.
///
/// With `L^{-(d+1)} = Γ((d+1)/2)^{-1} ∫ t^{(d-1)/2} e^{-t L²} dt` each axis
/// contributes `g_j(c) = √π/(2ℓ_j√t) · erfc(ℓ_j c √t)` and the region gives
/// `Π g_j(lo_j) - Π (g_j(lo_j) - g_j(hi_j))`, expanded telescopically so no
/// cancellation occurs.
fn shell_integral(lengths: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let d = lengths.len();
    let p = (d as f64 + 1.0) / 2.0;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let integrand = |u: f64| -> f64 {
        let t = u.exp();
        let st = t.sqrt();
        let g = |j: usize, c: f64| sqrt_pi / (2.0 * lengths[j] * st) * erfc(lengths[j] * c * st);
        let mut total = 0.0;
        for k in 0..d {
            let mut term = g(k, hi[k]);
            for i in 0..k {
                term *= g(i, lo[i]) - g(i, hi[i]);
            }
            for i in k + 1..d {
                term *= g(i, lo[i]);
            }
            total += term;
        }
        // dt = t du.
        t.powf(p) * total
    };
    let reach = (0..d).map(|j| lengths[j] * hi[j]).fold(f64::INFINITY, f64::min);
    let t_hi = 900.0 / (reach * reach);
    let t_lo = t_hi * 1e-32;
    let r = integrate(integrand, t_lo.ln(), t_hi.ln(), 0.0, 1e-13, 20_000);
    r.value / gamma(p)
}

/// Hyper-rectangle energy with a certified tail bound.
pub fn hrectangle_energy(config: &RectangleConfig) -> Result<RectangleEnergy, OracleError> {
    config.validate()?;
    let l = &config.lengths;
    let k: Vec<f64> = config.n_max.iter().map(|&k| k as f64).collect();
    let zeros = vec![0.0; l.len()];
    let ones = vec![1.0; l.len()];
    let k1: Vec<f64> = k.iter().map(|v| v + 1.0).collect();
    let upper = shell_integral(l, &zeros, &k);
    let lower = shell_integral(l, &ones, &k1);
    let pre = prefactor(l);
    let partial = lattice_sum(l, &config.n_max);
    let tail_estimate = pre * 0.5 * (upper + lower);
    let half_width = 0.5 * (upper - lower).abs() * pre.abs();
    let value = pre * partial + tail_estimate;
    let rounding = 1e-14 * value.abs();
    Ok(RectangleEnergy { value, partial_sum: pre * partial, tail_estimate, tail_bound: half_width + rounding })
}

/// Independent evaluation through the proper-time integral of a product of
/// Jacobi theta tails, `Σ_{n≥1} e^{-t n² ℓ²}`.
pub fn hrectangle_energy_theta(lengths: &[f64]) -> Result<f64, OracleError> {
    if lengths.is_empty() {
        return Err(OracleError::NoSides);
    }
    if let Some(&l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
        return Err(OracleError::BadLength(l));
    }
    let d = lengths.len() as f64;
    let p = (d + 1.0) / 2.0;
    let integrand = |u: f64| -> f64 {
        let t = u.exp();
        let prod: f64 = lengths.iter().map(|l| theta_tail(t * l * l)).product();
        t.powf(p) * prod
    };
    let lmin = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let lmax = lengths.iter().copied().fold(0.0, f64::max);
    let t_hi = 800.0 / (lmin * lmin);
    let t_lo = 1e-32 / (lmax * lmax);
    // The small-t region contributes like √t; split there so the decay is resolved.
    let split = 1.0 / (lmax * lmax);
    let a = integrate(integrand, t_lo.ln(), split.ln(), 0.0, 1e-14, 20_000);
    let b = integrate(integrand, split.ln(), t_hi.ln(), 0.0, 1e-14, 20_000);
    Ok(prefactor(lengths) * (a.value + b.value) / gamma(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseCheck {
    pub epsilons: Vec<f64>,
    pub energies: Vec<f64>,
    pub extrapolated: f64,
    /// Half the energy of the rectangle with the collapsed side removed.
    pub target: f64,
    pub relative_error: f64,
    pub passed: bool,
}

/// Shrinks side `axis` through `ε = 2^{-1} .. 2^{-6}` and checks that the
/// Richardson-extrapolated energy reaches half the `(d-1)`-dimensional value
/// within 1%.
///
/// Each point truncates at the common length `cutoff` (see
/// [`RectangleConfig::with_cutoff`]).
pub fn collapse_limit_check(lengths: &[f64], axis: usize, cutoff: f64) -> Result<CollapseCheck, OracleError> {
    let dim = lengths.len();
    if dim < 2 || axis >= dim {
        return Err(OracleError::BadCollapseAxis { axis, dim });
    }
    let epsilons: Vec<f64> = (1..=6).map(|k| 0.5f64.powi(k)).collect();
    let energies = epsilons
        .iter()
        .map(|&eps| {
            let mut l = lengths.to_vec();
            l[axis] = eps;
            hrectangle_energy(&RectangleConfig::with_cutoff(l, cutoff)?).map(|e| e.value)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let extrapolated = richardson(&epsilons, &energies);
    let mut reduced = lengths.to_vec();
    reduced.remove(axis);
    let target = 0.5 * hrectangle_energy(&RectangleConfig::with_cutoff(reduced, cutoff)?)?.value;
    let relative_error = ((extrapolated - target) / target).abs();
    Ok(CollapseCheck { epsilons, energies, extrapolated, target, relative_error, passed: relative_error < 0.01 })
}

/// Neville extrapolation to `ε = 0` for a sequence halving in `ε`, assuming
/// an expansion in integer powers of `ε`.
pub fn richardson(eps: &[f64], values: &[f64]) -> f64 {
    let mut table = values.to_vec();
    let n = table.len();
    for level in 1..n {
        for i in (level..n).rev() {
            let (e0, e1) = (eps[i - level], eps[i]);
            table[i] = (e0 * table[i] - e1 * table[i - 1]) / (e0 - e1);
        }
    }
    table[n - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SQUARE_2D: f64 = -0.042_030_772_051_581_43;

    #[test]
    fn one_dimension_is_zeta_two() {
        for (l, expected) in [(1.0, -PI / 24.0), (2.0, -PI / 48.0)] {
            let e = hrectangle_energy(&RectangleConfig::new(vec![l], vec![100_000]).unwrap()).unwrap();
            assert!((e.value - expected).abs() <= e.tail_bound, "{e:?}");
            assert!(e.tail_bound < 1e-9);
            assert!((e.partial_sum - expected).abs() > e.tail_bound, "tail matters");
        }
    }

    #[test]
    fn unit_square_is_certified() {
        let e = hrectangle_energy(&RectangleConfig::new(vec![1.0, 1.0], vec![4000, 4000]).unwrap()).unwrap();
        assert!(e.tail_bound < 1e-8, "{e:?}");
        assert!((e.value - SQUARE_2D).abs() <= e.tail_bound, "{e:?}");
        let theta = hrectangle_energy_theta(&[1.0, 1.0]).unwrap();
        assert!((theta - SQUARE_2D).abs() < 1e-12, "{theta}");
    }

    #[test]
    fn doubling_truncation_stays_inside_the_bound() {
        let l = vec![1.0, 0.7];
        let a = hrectangle_energy(&RectangleConfig::new(l.clone(), vec![50, 70]).unwrap()).unwrap();
        let b = hrectangle_energy(&RectangleConfig::new(l.clone(), vec![100, 140]).unwrap()).unwrap();
        assert!((a.value - b.value).abs() < a.tail_bound);
        let exact = hrectangle_energy_theta(&l).unwrap();
        assert!((a.value - exact).abs() <= a.tail_bound);
        assert!((b.value - exact).abs() <= b.tail_bound);
    }

    #[test]
    fn three_dimensions_agree_with_theta_route() {
        let l = [1.0, 1.3, 0.8];
        let e = hrectangle_energy(&RectangleConfig::with_cutoff(l.to_vec(), 60.0).unwrap()).unwrap();
        let exact = hrectangle_energy_theta(&l).unwrap();
        assert!((e.value - exact).abs() <= e.tail_bound, "{e:?} {exact}");
    }

    #[test]
    fn negative_and_monotone() {
        let mut prev = f64::NEG_INFINITY;
        let mut at_ten = 0.0;
        for l2 in [0.3, 0.6, 1.0, 2.0, 5.0, 10.0, 20.0, 100.0] {
            let e = hrectangle_energy_theta(&[1.0, l2]).unwrap();
            assert!(e < 0.0 && e > prev, "{l2}: {e}");
            prev = e;
            if l2 == 10.0 {
                at_ten = e;
            }
        }
        // The energy falls off like 1/ℓ for a long side.
        assert!(prev.abs() < 0.2 * at_ten.abs(), "{prev} {at_ten}");
    }

    #[test]
    fn square_collapses_to_half_the_interval() {
        let c = collapse_limit_check(&[1.0, 1.0], 1, 40.0).unwrap();
        assert!(c.passed, "{c:?}");
        assert!((c.target + PI / 48.0).abs() < 1e-4);
    }

    #[test]
    fn cube_collapses_to_half_the_square() {
        let c = collapse_limit_check(&[1.0, 1.0, 1.0], 2, 12.0).unwrap();
        assert!(c.passed, "{c:?}");
        assert!((c.target - 0.5 * SQUARE_2D).abs() < 1e-3 * SQUARE_2D.abs());
    }

    #[test]
    fn richardson_removes_polynomial_terms() {
        let eps = [0.5, 0.25, 0.125, 0.0625];
        let v: Vec<f64> = eps.iter().map(|e| 3.0 + 2.0 * e - 5.0 * e * e + e * e * e).collect();
        assert!((richardson(&eps, &v) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        assert_eq!(RectangleConfig::new(vec![], vec![]), Err(OracleError::NoSides));
        assert_eq!(RectangleConfig::new(vec![-1.0], vec![3]), Err(OracleError::BadLength(-1.0)));
        assert_eq!(RectangleConfig::new(vec![1.0], vec![0]), Err(OracleError::BadTruncation));
        assert!(collapse_limit_check(&[1.0], 0, 10.0).is_err());
    }
}
