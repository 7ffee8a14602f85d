//! Small-β heat-kernel fits and the exponential-suppression check.

use serde::{Deserialize, Serialize};

use super::{spectral_function, GridConfig, LabError, Spectrum, SubsetSpectra};
use crate::geometry::{verify_empty_common_intersection, Scene};

/// Two-term small-β fit `φ(β) ≈ c₀ (2πβ)^{-d/2} + c₁ (2πβ)^{(1-d)/2}`.
///
/// `volume` estimates the domain volume and `boundary` the boundary term.
/// The fit window is accepted when a third term `c₂ (2πβ)^{(2-d)/2}`, fitted
/// over the same nodes, stays below 10% of `φ` everywhere in the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelFit {
    pub volume: f64,
    pub boundary: f64,
    pub window: (f64, f64),
    /// Relative residuals `(fit - φ)/φ` at each node.
    pub residuals: Vec<f64>,
    /// Largest relative size of the next-order term in the window.
    pub next_order: f64,
    pub window_ok: bool,
}

fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let k = rows[0].len();
    let a = nalgebra::DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).ok().map(|x| x.iter().copied().collect())
}

pub fn fit_heat_kernel(spectrum: &Spectrum, dim: usize, betas: &[f64]) -> Result<HeatKernelFit, LabError> {
    if betas.len() < 3 {
        return Err(LabError::TooFewBetas { needed: 3, got: betas.len() });
    }
    let basis = |beta: f64, terms: usize| -> Vec<f64> {
        (0..terms).map(|j| (2.0 * std::f64::consts::PI * beta).powf((j as f64 - dim as f64) / 2.0)).collect()
    };
    let phi: Vec<f64> = betas.iter().map(|&b| spectral_function(spectrum, b)).collect();
    // Weight rows by 1/φ so residuals are relative.
    let weighted = |terms: usize| -> Vec<Vec<f64>> {
        betas.iter().zip(&phi).map(|(&b, &p)| basis(b, terms).iter().map(|v| v / p).collect()).collect()
    };
    let ones = vec![1.0; betas.len()];
    let two = least_squares(&weighted(2), &ones).ok_or(LabError::TooFewBetas { needed: 3, got: betas.len() })?;
    let three = least_squares(&weighted(3), &ones).ok_or(LabError::TooFewBetas { needed: 3, got: betas.len() })?;
    let residuals = betas
        .iter()
        .zip(&phi)
        .map(|(&b, &p)| {
            let f: f64 = basis(b, 2).iter().zip(&two).map(|(x, c)| x * c).sum();
            (f - p) / p
        })
        .collect();
    let next_order = betas.iter().zip(&phi).map(|(&b, &p)| (three[2] * basis(b, 3)[2] / p).abs()).fold(0.0, f64::max);
    let lo = betas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = betas.iter().copied().fold(0.0, f64::max);
    Ok(HeatKernelFit {
        volume: two[0],
        boundary: two[1],
        window: (lo, hi),
        residuals,
        next_order,
        window_ok: next_order < 0.1,
    })
}

/// Result of fitting `ln|φ̃(β)|` against `1/β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `ln|φ̃|` against `1/β`; `-ℓ_min²/2` for disjoint objects.
    pub slope: f64,
    pub intercept: f64,
    pub r2_exponential: f64,
    /// Exponent `p` of the competing fit `|φ̃| ≈ C β^p`.
    pub power_exponent: f64,
    pub r2_power: f64,
    /// Nodes used, with their `φ̃` values.
    pub betas: Vec<f64>,
    pub values: Vec<f64>,
    /// Nodes dropped because `|φ̃|` sat at round-off level.
    pub dropped: Vec<f64>,
    pub common_intersection: bool,
    /// Set when the data look like a surviving power series rather than
    /// exponential suppression.
    pub power_series: bool,
}

impl DecayFit {
    pub fn verdict(&self) -> &'static str {
        if self.power_series {
            "nonvanishing power series"
        } else {
            "exponentially suppressed"
        }
    }
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Fits the small-β decay of the irreducible spectral function.
pub fn decay_check(scene: &Scene, grid: &GridConfig, betas: &[f64]) -> Result<DecayFit, LabError> {
    if scene.len() == 1 {
        return Err(LabError::NoSuppression("no common-intersection suppression for N=1 point object".into()));
    }
    if betas.len() < 4 {
        return Err(LabError::TooFewBetas { needed: 4, got: betas.len() });
    }
    let spectra = SubsetSpectra::compute(scene, grid)?;
    let n = spectra.object_count();
    let mut kept = Vec::new();
    let mut values = Vec::new();
    let mut dropped = Vec::new();
    for &beta in betas {
        let v = spectra.irreducible(beta);
        let scale: f64 = (0..1u32 << n).map(|s| spectra.phi(s, beta).abs()).sum();
        if v.abs() > 1e-11 * scale {
            kept.push(beta);
            values.push(v);
        } else {
            dropped.push(beta);
        }
    }
    if kept.len() < 3 {
        return Err(LabError::TooFewBetas { needed: 3, got: kept.len() });
    }
    let logs: Vec<f64> = values.iter().map(|v| v.abs().ln()).collect();
    let inv: Vec<f64> = kept.iter().map(|b| 1.0 / b).collect();
    let lnb: Vec<f64> = kept.iter().map(|b| b.ln()).collect();
    let (slope, intercept, r2_exponential) = linear_fit(&inv, &logs);
    let (power_exponent, _, r2_power) = linear_fit(&lnb, &logs);
    let common_intersection = !verify_empty_common_intersection(scene).unwrap_or(false);
    let power_series = common_intersection || slope >= 0.0 || r2_power > r2_exponential;
    Ok(DecayFit {
        slope,
        intercept,
        r2_exponential,
        power_exponent,
        r2_power,
        betas: kept,
        values,
        dropped,
        common_intersection,
        power_series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Object, Profile, Shape};
    use crate::lab::build_spectrum;

    fn interval(len: f64, objects: Vec<Object>) -> Scene {
        Scene::new(1, objects, Some(Aabb::new(vec![0.0], vec![len]).unwrap())).unwrap()
    }

    #[test]
    fn leading_coefficient_is_the_volume() {
        let scene = interval(2.0, vec![Object::dirichlet(Shape::point(1.0))]);
        let s = build_spectrum(&scene, 0, &GridConfig { spacing: 0.002 }).unwrap();
        let fit = fit_heat_kernel(&s, 1, &[0.004, 0.006, 0.01, 0.015, 0.02]).unwrap();
        assert!((fit.volume - 2.0).abs() < 0.04, "{fit:?}");
        // Each Dirichlet wall removes a quarter of a state.
        assert!((fit.boundary + 0.5).abs() < 0.02, "{fit:?}");
        assert!(fit.window_ok);
    }

    #[test]
    fn two_points_decay_with_the_loop_length() {
        let a = 0.3;
        let scene =
            interval(1.0, vec![Object::dirichlet(Shape::point(0.35)), Object::dirichlet(Shape::point(0.35 + a))]);
        let betas = [0.01, 0.013, 0.016, 0.02];
        let fit = decay_check(&scene, &GridConfig { spacing: 0.001 }, &betas).unwrap();
        let expected = -2.0 * a * a;
        assert!(((fit.slope - expected) / expected).abs() < 0.2, "{fit:?}");
        assert!(!fit.power_series);
        assert!(fit.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn overlap_is_flagged() {
        let scene = interval(
            1.0,
            vec![
                Object::dirichlet(Shape::point(0.5)),
                Object::potential(Shape::point(0.5), 20.0, Profile::Slab { width: 0.2 }),
            ],
        );
        let fit = decay_check(&scene, &GridConfig { spacing: 0.002 }, &[0.001, 0.002, 0.004, 0.008]).unwrap();
        assert!(fit.power_series);
        assert_eq!(fit.verdict(), "nonvanishing power series");
    }

    #[test]
    fn single_object_is_rejected() {
        let scene = interval(1.0, vec![Object::dirichlet(Shape::point(0.5))]);
        let err = decay_check(&scene, &GridConfig { spacing: 0.01 }, &[0.01, 0.02, 0.03, 0.04]).unwrap_err();
        assert!(err.to_string().contains("no common-intersection suppression for N=1 point object"));
    }
}
