//! Proper-time integral of the irreducible spectral function.
//!
//! `Ẽ = -(8π)^{-1/2} ∫ φ̃(β) β^{-3/2} dβ` is evaluated as a trapezoid sum in
//! `u = ln β`, where the integrand `φ̃ e^{-u/2}` vanishes like
//! `exp(-ℓ_min²/2β)` at the lower end and like a power of β at the upper end.

use serde::{Deserialize, Serialize};

use super::sweep::{self, BlockSums, Prepared, SweepSpec};
use super::{
    check_dims, extrapolate, intersection_warning, jackknife, resolution_ratio, spectral_prefactor, summarize,
    with_pool, EngineError, LminEstimate, SamplerConfig, SpectralEstimate,
};
use crate::geometry::{verify_empty_common_intersection, Scene};
use crate::loops::{LoopEnsemble, Scheme};

/// Proper-time grid controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub nodes_per_decade: usize,
    /// Overrides the lower end derived from `ℓ_min`.
    pub beta_min: Option<f64>,
    /// Overrides the initial upper end.
    pub beta_max: Option<f64>,
    /// Fixes the node count between `beta_min` and `beta_max` and disables
    /// the adaptive extension.
    pub beta_nodes: Option<usize>,
    /// The grid is extended until its last decade carries less than this
    /// fraction of the integral.
    pub tail_fraction: f64,
    /// Largest admissible `β_max / ℓ_min²`.
    pub max_extent: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            nodes_per_decade: 8,
            beta_min: None,
            beta_max: None,
            beta_nodes: None,
            tail_fraction: 0.005,
            max_extent: 1e11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaNode {
    pub beta: f64,
    /// Weight `w` in `Σ w φ̃ β^{-3/2}`.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    /// Contribution beyond the last node to `∫ φ̃ β^{-3/2} dβ`.
    pub value: f64,
    /// Fitted power `φ̃ ∝ β^q` over the last nodes.
    pub exponent: f64,
    /// Difference between 4- and 8-node fits.
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub loops: usize,
    pub points: usize,
    pub scheme: Scheme,
    pub loop_seed: u64,
    pub sampler: SamplerConfig,
    pub quadrature: QuadratureConfig,
    pub refined: bool,
    pub exact_volumes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyResult {
    /// Irreducible energy in units of `ħc/length`.
    pub value: f64,
    pub stat_error: f64,
    pub quadrature_error: f64,
    /// `|Ẽ(M) - Ẽ(2M)|`, zero without a refinement pair.
    pub discretization_error: f64,
    pub value_fine: f64,
    pub value_coarse: Option<f64>,
    pub beta_grid: Vec<BetaNode>,
    pub spectral: Vec<SpectralEstimate>,
    pub tail: TailEstimate,
    pub lmin: LminEstimate,
    pub warnings: Vec<String>,
    pub metadata: RunMetadata,
}

impl EnergyResult {
    pub fn total_error(&self) -> f64 {
        self.stat_error + self.quadrature_error + self.discretization_error
    }
}

const INV_SQRT_8PI: f64 = 0.199_471_140_200_716_35;

/// Least-squares slope of `ln|φ|` against `ln β`, `None` if the points are
/// not all of one sign.
fn power_fit(betas: &[f64], phis: &[f64]) -> Option<f64> {
    if phis.iter().any(|p| *p == 0.0 || !p.is_finite()) {
        return None;
    }
    if !(phis.iter().all(|p| *p > 0.0) || phis.iter().all(|p| *p < 0.0)) {
        return None;
    }
    let n = betas.len() as f64;
    let xs: Vec<f64> = betas.iter().map(|b| b.ln()).collect();
    let ys: Vec<f64> = phis.iter().map(|p| p.abs().ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// `∫_{β_last}^∞ φ̃ β^{-3/2} dβ` under a power law fitted to the last `k` nodes.
fn tail_from_fit(betas: &[f64], phis: &[f64], k: usize) -> Option<(f64, f64)> {
    let n = betas.len();
    if n < k {
        return None;
    }
    let q = power_fit(&betas[n - k..], &phis[n - k..])?;
    let last = phis[n - 1] * betas[n - 1].powf(-0.5);
    Some((last / (0.5 - q).max(1e-3), q))
}

struct Functional<'a> {
    betas: &'a [f64],
    prefactors: Vec<f64>,
    h: f64,
}

impl Functional<'_> {
    fn integrand(&self, means: &[f64]) -> Vec<f64> {
        means.iter().zip(&self.prefactors).zip(self.betas).map(|((m, p), b)| m * p * b.powf(-0.5)).collect()
    }

    fn trapezoid(&self, g: &[f64]) -> f64 {
        let n = g.len();
        self.h * (g.iter().sum::<f64>() - 0.5 * (g[0] + g[n - 1]))
    }

    fn phis(&self, means: &[f64]) -> Vec<f64> {
        means.iter().zip(&self.prefactors).map(|(m, p)| m * p).collect()
    }

    /// Energy for per-node kill-volume means.
    fn energy(&self, means: &[f64]) -> f64 {
        let g = self.integrand(means);
        let tail = tail_from_fit(self.betas, &self.phis(means), 4).map_or(0.0, |t| t.0);
        -INV_SQRT_8PI * (self.trapezoid(&g) + tail)
    }
}

fn log_grid(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let n = ((hi / lo).ln() / h).ceil().max(1.0) as usize;
    (0..=n).map(|k| lo * (k as f64 * h).exp()).collect()
}

/// Irreducible N-body energy from the worldline ensemble.
pub fn integrate_energy(
    scene: &Scene,
    ensemble: &LoopEnsemble,
    sampler: &SamplerConfig,
    quadrature: &QuadratureConfig,
) -> Result<EnergyResult, EngineError> {
    check_dims(scene, ensemble)?;
    let mut warnings = Vec::new();
    match verify_empty_common_intersection(scene) {
        Ok(true) => {}
        Ok(false) => return Err(EngineError::CommonIntersection),
        Err(_) => warnings.extend(intersection_warning(scene)),
    }
    let lmin = super::estimate_lmin(scene);
    if lmin.value <= 0.0 {
        return Err(EngineError::CommonIntersection);
    }
    if !lmin.exact {
        warnings.push(format!("approximate shortest tour {:.6} from numerical search", lmin.value));
    }
    // A searched tour only bounds ℓ_min from above; start lower to be safe.
    let ell = if lmin.exact { lmin.value } else { 0.8 * lmin.value };
    let npd = quadrature.nodes_per_decade.max(2);
    let mut h = std::f64::consts::LN_10 / npd as f64;
    let beta_min = quadrature.beta_min.unwrap_or(ell * ell / (2.0 * 1e8_f64.ln()));
    let mut beta_max = quadrature.beta_max.unwrap_or(ell * ell * 1e3);
    if !(beta_min > 0.0 && beta_max > beta_min) {
        return Err(EngineError::InvalidParameter(format!("need 0 < beta_min < beta_max, got {beta_min}, {beta_max}")));
    }
    let mut betas = match quadrature.beta_nodes {
        Some(n) if n >= 2 => {
            h = (beta_max / beta_min).ln() / (n - 1) as f64;
            (0..n).map(|k| beta_min * (k as f64 * h).exp()).collect()
        }
        Some(n) => return Err(EngineError::InvalidParameter(format!("need at least 2 beta nodes, got {n}"))),
        None => log_grid(beta_min, beta_max, h),
    };
    let adaptive = quadrature.beta_nodes.is_none();
    let prep = Prepared::new(scene);
    let spec = SweepSpec {
        seed: sampler.seed,
        x_samples: sampler.x_samples.max(1),
        blocks: sampler.blocks,
        refine: sampler.refine,
    };
    let mut result = with_pool(sampler.workers, || sweep::sweep(&prep, ensemble, &betas, spec))??;
    let ratio = resolution_ratio(prep.has_dirichlet());
    let refined = result.refined;
    let n_loops = ensemble.count() as f64;

    let node_means = |blocks: &[BlockSums], level: usize| -> Vec<f64> {
        let nodes = blocks[0].fine.len();
        (0..nodes)
            .map(|j| blocks.iter().map(|b| if level == 0 { b.fine[j] } else { b.coarse[j] }).sum::<f64>() / n_loops)
            .collect()
    };
    let ext_means = |blocks: &[BlockSums]| -> Vec<f64> {
        let f = node_means(blocks, 0);
        if refined {
            f.iter().zip(node_means(blocks, 1)).map(|(f, c)| extrapolate(*f, c, ratio)).collect()
        } else {
            f
        }
    };

    if adaptive {
        loop {
            let functional = Functional {
                betas: &betas,
                prefactors: betas.iter().map(|b| spectral_prefactor(scene, *b)).collect(),
                h,
            };
            let g = functional.integrand(&ext_means(&result.blocks));
            let total = functional.trapezoid(&g);
            let last: Vec<f64> = g[g.len() - npd - 1..].to_vec();
            let last_decade = h * (last.iter().sum::<f64>() - 0.5 * (last[0] + last[last.len() - 1]));
            if last_decade.abs() <= quadrature.tail_fraction * total.abs() || total == 0.0 {
                break;
            }
            if beta_max * 100.0 > quadrature.max_extent * ell * ell {
                return Err(EngineError::TailNotConverged(format!(
                    "last decade still carries {:.2}% of the integral at beta_max = {beta_max:.3e}",
                    100.0 * (last_decade / total).abs()
                )));
            }
            let start = *betas.last().unwrap();
            let new: Vec<f64> = (1..=2 * npd).map(|k| start * (k as f64 * h).exp()).collect();
            beta_max = *new.last().unwrap();
            let more = with_pool(sampler.workers, || sweep::sweep(&prep, ensemble, &new, spec))??;
            for (b, m) in result.blocks.iter_mut().zip(more.blocks) {
                b.fine.extend(m.fine);
                b.coarse.extend(m.coarse);
                b.box_volume.extend(m.box_volume);
                b.hull.extend(m.hull);
            }
            result.x_evaluations += more.x_evaluations;
            betas.extend(new);
        }
    }

    let functional =
        Functional { betas: &betas, prefactors: betas.iter().map(|b| spectral_prefactor(scene, *b)).collect(), h };
    let means = ext_means(&result.blocks);
    let phis = functional.phis(&means);
    let g = functional.integrand(&means);
    let (tail4, exponent) = tail_from_fit(&betas, &phis, 4).unwrap_or((0.0, f64::NAN));
    if exponent.is_finite() && 0.5 - exponent <= 0.1 {
        return Err(EngineError::TailNotConverged(format!(
            "spectral function decays like beta^{exponent:.3}, too slowly for the energy integral"
        )));
    }
    let tail8 = tail_from_fit(&betas, &phis, 8).map_or(tail4, |t| t.0);
    let tail_uncertainty = if exponent.is_finite() {
        (tail4 - tail8).abs()
    } else {
        // No usable fit: bound the remainder by a β^{-1/2} decay of the last node.
        2.0 * g[g.len() - 1].abs()
    };
    let value = functional.energy(&means);

    // Trapezoid on every other node, aligned at the upper end.
    let n = g.len();
    let coarse_idx: Vec<usize> = (0..n).rev().step_by(2).collect::<Vec<_>>().into_iter().rev().collect();
    let g2: Vec<f64> = coarse_idx.iter().map(|&i| g[i]).collect();
    let t2 = if g2.len() >= 2 {
        2.0 * h * (g2.iter().sum::<f64>() - 0.5 * (g2[0] + g2[g2.len() - 1]))
    } else {
        functional.trapezoid(&g)
    };
    let richardson = (functional.trapezoid(&g) - t2).abs() / 3.0;
    let low_end = g[0].abs() * 2.0 * betas[0] / (ell * ell);
    let quadrature_error = INV_SQRT_8PI * (richardson + low_end + tail_uncertainty);

    let width = betas.len();
    let blocks: Vec<(usize, Vec<f64>)> = result
        .blocks
        .iter()
        .map(|b| {
            let mut v = b.fine.clone();
            v.extend_from_slice(&b.coarse);
            (b.loops, v)
        })
        .collect();
    let (_, stat_error) = jackknife(&blocks, |m| {
        let means: Vec<f64> = if refined {
            (0..width).map(|j| extrapolate(m[j], m[width + j], ratio)).collect()
        } else {
            m[..width].to_vec()
        };
        functional.energy(&means)
    });
    let value_fine = functional.energy(&node_means(&result.blocks, 0));
    let value_coarse = refined.then(|| functional.energy(&node_means(&result.blocks, 1)));
    let discretization_error = value_coarse.map_or(0.0, |c| (value_fine - c).abs());

    let beta_grid = betas
        .iter()
        .enumerate()
        .map(|(j, b)| BetaNode { beta: *b, weight: if j == 0 || j == width - 1 { 0.5 * h * b } else { h * b } })
        .collect();
    let spectral = summarize(scene, &prep, &betas, &result);
    Ok(EnergyResult {
        value,
        stat_error,
        quadrature_error,
        discretization_error,
        value_fine,
        value_coarse,
        beta_grid,
        spectral,
        tail: TailEstimate { value: tail4, exponent, uncertainty: tail_uncertainty },
        lmin,
        warnings,
        metadata: RunMetadata {
            loops: ensemble.count(),
            points: ensemble.points(),
            scheme: ensemble.scheme(),
            loop_seed: ensemble.seed(),
            sampler: *sampler,
            quadrature: *quadrature,
            refined,
            exact_volumes: prep.exact(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Object, Shape};

    fn two_points(a: f64) -> Scene {
        Scene::new(1, vec![Object::dirichlet(Shape::point(0.0)), Object::dirichlet(Shape::point(a))], None).unwrap()
    }

    #[test]
    fn power_fit_recovers_exponent() {
        let betas: Vec<f64> = (0..6).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
        let phis: Vec<f64> = betas.iter().map(|b| -3.0 * b.powf(-0.75)).collect();
        assert!((power_fit(&betas, &phis).unwrap() + 0.75).abs() < 1e-12);
        assert!(power_fit(&betas, &[1.0, -1.0, 1.0, 1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn two_points_casimir_energy() {
        let e = LoopEnsemble::lazy(4000, 512, 1, 21, Scheme::Bisection).unwrap();
        let r =
            integrate_energy(&two_points(1.0), &e, &SamplerConfig::default(), &QuadratureConfig::default()).unwrap();
        let exact = -std::f64::consts::PI / 24.0;
        assert!(r.value < 0.0);
        assert!((r.value - exact).abs() < 3.0 * r.total_error(), "{} ± {} vs {exact}", r.value, r.total_error());
        // Energy scales as 1/a.
        let r2 =
            integrate_energy(&two_points(2.0), &e, &SamplerConfig::default(), &QuadratureConfig::default()).unwrap();
        assert!((r2.value - 0.5 * r.value).abs() < 3.0 * (r2.total_error() + 0.5 * r.total_error()));
    }

    #[test]
    fn single_object_is_refused() {
        let scene = Scene::new(1, vec![Object::dirichlet(Shape::point(0.0))], None).unwrap();
        let e = LoopEnsemble::lazy(10, 16, 1, 1, Scheme::Bisection).unwrap();
        assert!(matches!(
            integrate_energy(&scene, &e, &SamplerConfig::default(), &QuadratureConfig::default()),
            Err(EngineError::CommonIntersection)
        ));
    }

    #[test]
    fn fixed_grid_is_respected() {
        let e = LoopEnsemble::lazy(200, 64, 1, 2, Scheme::Bisection).unwrap();
        let q = QuadratureConfig {
            beta_min: Some(0.05),
            beta_max: Some(500.0),
            beta_nodes: Some(33),
            ..Default::default()
        };
        let r = integrate_energy(&two_points(1.0), &e, &SamplerConfig::default(), &q).unwrap();
        assert_eq!(r.beta_grid.len(), 33);
        assert!((r.beta_grid[32].beta - 500.0).abs() < 1e-9);
    }
}
