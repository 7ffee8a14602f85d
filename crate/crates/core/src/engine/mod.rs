//! Monte Carlo estimation of the irreducible spectral function and energy.
//!
//! The per-loop estimator of `φ̃(β)` integrates the kill probability over base
//! points, see [`sweep`](self) for the layout. Errors come from a jackknife
//! over contiguous blocks of loops; each block is accumulated sequentially in
//! loop order, so results do not depend on the number of worker threads.

mod energy;
mod lmin;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{verify_empty_common_intersection, Aabb, GeometryError, Scene};
use crate::loops::LoopEnsemble;

pub use energy::{integrate_energy, EnergyResult, QuadratureConfig, RunMetadata, TailEstimate};
pub use lmin::{estimate_lmin, estimate_lmin_with, LminEstimate};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("sampling box unbounded: the objects do not confine the kill region in every direction")]
    UnboundedSamplingBox,
    #[error("the objects share a common point; the irreducible energy diverges")]
    CommonIntersection,
    #[error("tail not converged: {0}")]
    TailNotConverged(String),
    #[error("ensemble dimension {ensemble} differs from scene dimension {scene}")]
    DimensionMismatch { ensemble: usize, scene: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Sampling parameters shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Seed for the base-point streams (the loops carry their own seed).
    pub seed: u64,
    /// Base points per loop and proper time, when the kill volume is not
    /// available in closed form.
    pub x_samples: usize,
    /// Jackknife blocks.
    pub blocks: usize,
    /// Extrapolate from the half-resolution view of each loop when the
    /// ensemble was built by bisection.
    pub refine: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { seed: 1, x_samples: 16, blocks: 64, refine: true, workers: None }
    }
}

/// Monte Carlo estimate of `φ̃(β)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub beta: f64,
    /// Resolution-extrapolated value (equal to `value_fine` without refinement).
    pub value: f64,
    pub stderr: f64,
    pub value_fine: f64,
    pub value_coarse: Option<f64>,
    pub n_loops: usize,
    /// Base-point evaluations; zero when the kill volume was exact.
    pub n_basepoints: usize,
    /// Mean volume of the per-loop sampling boxes.
    pub box_volume: f64,
    /// Union of the per-loop sampling boxes.
    pub sampling_box: Option<Aabb>,
}

/// Kill probability at a fixed base point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub mean_fine: f64,
    pub mean_coarse: Option<f64>,
}

/// Exponent `p` of the leading resolution error `M^{-p}`: crossing
/// detection between samples misses excursions of size `√(β/M)`, while
/// smooth potentials only carry the `1/M` trapezoid error.
pub(crate) fn resolution_ratio(has_dirichlet: bool) -> f64 {
    if has_dirichlet {
        std::f64::consts::SQRT_2
    } else {
        2.0
    }
}

pub(crate) fn extrapolate(fine: f64, coarse: f64, ratio: f64) -> f64 {
    (ratio * fine - coarse) / (ratio - 1.0)
}

pub(crate) fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, EngineError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| EngineError::Pool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn check_dims(scene: &Scene, ensemble: &LoopEnsemble) -> Result<(), EngineError> {
    if scene.dimension() != ensemble.dim() {
        return Err(EngineError::DimensionMismatch { ensemble: ensemble.dim(), scene: scene.dimension() });
    }
    Ok(())
}

/// Leave-one-block-out jackknife of `f` applied to block-pooled means.
///
/// `blocks[b]` is `(count, sums)`; `f` receives the pooled means.
pub(crate) fn jackknife<F: Fn(&[f64]) -> f64>(blocks: &[(usize, Vec<f64>)], f: F) -> (f64, f64) {
    let width = blocks[0].1.len();
    let total_n: usize = blocks.iter().map(|b| b.0).sum();
    let mut total = vec![0.0; width];
    for (_, s) in blocks {
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    let mean: Vec<f64> = total.iter().map(|t| t / total_n as f64).collect();
    let full = f(&mean);
    let nb = blocks.len();
    if nb < 2 {
        return (full, f64::NAN);
    }
    let mut reps = Vec::with_capacity(nb);
    let mut buf = vec![0.0; width];
    for (n, s) in blocks {
        let rest = (total_n - n) as f64;
        for ((b, t), v) in buf.iter_mut().zip(&total).zip(s) {
            *b = (t - v) / rest;
        }
        reps.push(f(&buf));
    }
    let rep_mean = reps.iter().sum::<f64>() / nb as f64;
    let var = reps.iter().map(|r| (r - rep_mean).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
    (full, var.sqrt())
}

/// Warning text when the finiteness condition cannot be certified.
pub(crate) fn intersection_warning(scene: &Scene) -> Option<String> {
    match verify_empty_common_intersection(scene) {
        Ok(true) => None,
        Ok(false) => Some("objects share a common point".into()),
        Err(e) => Some(e.to_string()),
    }
}

/// Mean kill probability of the ensemble's loops based at `x`.
pub fn estimate_kill_probability(
    scene: &Scene,
    ensemble: &LoopEnsemble,
    x: &[f64],
    beta: f64,
    config: &SamplerConfig,
) -> Result<KillEstimate, EngineError> {
    check_dims(scene, ensemble)?;
    if x.len() != scene.dimension() {
        return Err(EngineError::InvalidParameter("base point dimension".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(EngineError::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let prep = sweep::Prepared::new(scene);
    let (fine, coarse) = with_pool(config.workers, || sweep::kill_at_point(&prep, ensemble, x, beta, config.refine))?;
    let n = fine.len() as f64;
    let mean_fine = fine.iter().sum::<f64>() / n;
    let ratio = resolution_ratio(prep.has_dirichlet());
    let per_loop: Vec<f64> = match &coarse {
        Some(c) => fine.iter().zip(c).map(|(f, c)| extrapolate(*f, *c, ratio)).collect(),
        None => fine.clone(),
    };
    let mean = per_loop.iter().sum::<f64>() / n;
    let var = per_loop.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(KillEstimate {
        mean,
        stderr: (var / n).sqrt(),
        mean_fine,
        mean_coarse: coarse.map(|c| c.iter().sum::<f64>() / n),
    })
}

/// `(-1)^N (2πβ)^{-d/2}`.
pub(crate) fn spectral_prefactor(scene: &Scene, beta: f64) -> f64 {
    let sign = if scene.len() % 2 == 0 { 1.0 } else { -1.0 };
    sign * (2.0 * std::f64::consts::PI * beta).powf(-0.5 * scene.dimension() as f64)
}

/// Spectral estimates at several proper times from one pass over the loops.
pub fn estimate_spectral_many(
    scene: &Scene,
    ensemble: &LoopEnsemble,
    betas: &[f64],
    config: &SamplerConfig,
) -> Result<Vec<SpectralEstimate>, EngineError> {
    check_dims(scene, ensemble)?;
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(EngineError::InvalidParameter(format!("beta must be positive, got {b}")));
    }
    let prep = sweep::Prepared::new(scene);
    let spec = sweep::SweepSpec {
        seed: config.seed,
        x_samples: config.x_samples.max(1),
        blocks: config.blocks,
        refine: config.refine,
    };
    let result = with_pool(config.workers, || sweep::sweep(&prep, ensemble, betas, spec))??;
    Ok(summarize(scene, &prep, betas, &result))
}

fn summarize(
    scene: &Scene,
    prep: &sweep::Prepared<'_>,
    betas: &[f64],
    result: &sweep::SweepResult,
) -> Vec<SpectralEstimate> {
    let ratio = resolution_ratio(prep.has_dirichlet());
    let n_loops: usize = result.blocks.iter().map(|b| b.loops).sum();
    betas
        .iter()
        .enumerate()
        .map(|(j, &beta)| {
            let pre = spectral_prefactor(scene, beta);
            let blocks: Vec<(usize, Vec<f64>)> =
                result.blocks.iter().map(|b| (b.loops, vec![b.fine[j], b.coarse[j]])).collect();
            let refined = result.refined;
            let (value, stderr) =
                jackknife(&blocks, |m| pre * if refined { extrapolate(m[0], m[1], ratio) } else { m[0] });
            let fine: f64 = result.blocks.iter().map(|b| b.fine[j]).sum::<f64>() / n_loops as f64;
            let coarse: f64 = result.blocks.iter().map(|b| b.coarse[j]).sum::<f64>() / n_loops as f64;
            let hull = result.blocks.iter().filter_map(|b| b.hull[j].clone()).reduce(|a, b| Aabb {
                lo: a.lo.iter().zip(&b.lo).map(|(x, y)| x.min(*y)).collect(),
                hi: a.hi.iter().zip(&b.hi).map(|(x, y)| x.max(*y)).collect(),
            });
            SpectralEstimate {
                beta,
                value,
                stderr,
                value_fine: pre * fine,
                value_coarse: refined.then_some(pre * coarse),
                n_loops,
                n_basepoints: result.x_evaluations / betas.len().max(1),
                box_volume: result.blocks.iter().map(|b| b.box_volume[j]).sum::<f64>() / n_loops as f64,
                sampling_box: hull,
            }
        })
        .collect()
}

/// Monte Carlo estimate of `φ̃(β) = (-1)^N ∫ dx (2πβ)^{-d/2} P̃[x; β]`.
pub fn estimate_spectral(
    scene: &Scene,
    ensemble: &LoopEnsemble,
    beta: f64,
    config: &SamplerConfig,
) -> Result<SpectralEstimate, EngineError> {
    Ok(estimate_spectral_many(scene, ensemble, &[beta], config)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Object, Profile, Shape};
    use crate::loops::Scheme;

    fn points(xs: &[f64]) -> Scene {
        Scene::new(1, xs.iter().map(|x| Object::dirichlet(Shape::point(*x))).collect(), None).unwrap()
    }

    #[test]
    fn far_object_is_never_reached() {
        let scene = points(&[1000.0]);
        let e = LoopEnsemble::generate(200, 64, 1, 3, Scheme::Bisection).unwrap();
        let k = estimate_kill_probability(&scene, &e, &[0.0], 1.0, &SamplerConfig::default()).unwrap();
        assert_eq!((k.mean, k.mean_fine), (0.0, 0.0));
    }

    #[test]
    fn single_point_reflection_formula() {
        // P(max of a bridge over duration β exceeds a) = exp(-2a²/β).
        let scene = points(&[0.6]);
        let e = LoopEnsemble::lazy(40_000, 256, 1, 17, Scheme::Bisection).unwrap();
        let k = estimate_kill_probability(&scene, &e, &[0.0], 1.0, &SamplerConfig::default()).unwrap();
        let exact = (-2.0 * 0.36_f64).exp();
        assert!((k.mean - exact).abs() < 2.5 * k.stderr, "{} ± {} vs {exact}", k.mean, k.stderr);
        // Finer paths detect more crossings.
        assert!(k.mean_fine > k.mean_coarse.unwrap());
        // Upper bound from the shortest touching tour.
        assert!(k.mean_fine <= (-(1.2_f64).powi(2) / 2.0).exp() + 3.0 * k.stderr);
    }

    #[test]
    fn single_point_spectral_is_minus_one_half() {
        let scene = points(&[0.0]);
        let e = LoopEnsemble::lazy(20_000, 256, 1, 5, Scheme::Bisection).unwrap();
        for beta in [0.1, 1.0, 7.0] {
            let s = estimate_spectral(&scene, &e, beta, &SamplerConfig::default()).unwrap();
            assert!((s.value + 0.5).abs() < 2.5 * s.stderr, "β={beta}: {} ± {}", s.value, s.stderr);
            assert_eq!(s.n_basepoints, 0);
        }
    }

    #[test]
    fn sign_is_fixed_by_object_count() {
        let e = LoopEnsemble::lazy(400, 64, 1, 5, Scheme::Bisection).unwrap();
        for n in 1..=4 {
            let xs: Vec<f64> = (0..n).map(|i| 0.3 * i as f64).collect();
            let s = estimate_spectral(&points(&xs), &e, 0.5, &SamplerConfig { refine: false, ..Default::default() })
                .unwrap();
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert!(s.value * sign > 0.0);
        }
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let scene = Scene::new(
            1,
            vec![
                Object::dirichlet(Shape::point(0.0)),
                Object::potential(Shape::point(0.5), 3.0, Profile::Slab { width: 0.1 }),
            ],
            None,
        )
        .unwrap();
        let e = LoopEnsemble::lazy(300, 64, 1, 9, Scheme::Bisection).unwrap();
        let one =
            estimate_spectral(&scene, &e, 0.4, &SamplerConfig { workers: Some(1), ..Default::default() }).unwrap();
        let three =
            estimate_spectral(&scene, &e, 0.4, &SamplerConfig { workers: Some(3), ..Default::default() }).unwrap();
        assert_eq!(one, three);
    }

    #[test]
    fn unbounded_region_is_reported() {
        let scene =
            Scene::new(2, vec![Object::dirichlet(Shape::plane_through(&[0.0, 0.0], &[1.0, 0.0]))], None).unwrap();
        let e = LoopEnsemble::lazy(10, 16, 2, 1, Scheme::Bisection).unwrap();
        assert!(matches!(
            estimate_spectral(&scene, &e, 1.0, &SamplerConfig::default()),
            Err(EngineError::UnboundedSamplingBox)
        ));
    }

    #[test]
    fn walls_enter_the_resolution_extrapolation() {
        // The coarse view of a loop stays inside the box for more base points
        // than the fine one; missing those hides the wall bias.
        let b = Aabb::new(vec![0.0], vec![2.0]).unwrap();
        let scene =
            Scene::new(1, vec![Object::potential(Shape::point(1.2), 8.0, Profile::Slab { width: 0.2 })], Some(b))
                .unwrap();
        let exact =
            crate::lab::irreducible_spectral_exact(&scene, &crate::lab::GridConfig { spacing: 0.0025 }, 0.8).unwrap();
        let e = LoopEnsemble::lazy(6000, 256, 1, 5, Scheme::Bisection).unwrap();
        let est = estimate_spectral(&scene, &e, 0.8, &SamplerConfig::default()).unwrap();
        assert!((est.value - exact).abs() < 4.0 * est.stderr + 1e-3, "{} ± {} vs {exact}", est.value, est.stderr);
        assert!((est.value_fine - exact).abs() > 0.005);
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let values: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64).collect();
        let blocks: Vec<(usize, Vec<f64>)> = values.iter().map(|v| (1, vec![*v])).collect();
        let (m, se) = jackknife(&blocks, |x| x[0]);
        let mean = values.iter().sum::<f64>() / 100.0;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!((m - mean).abs() < 1e-12);
        assert!((se - sd / 10.0).abs() < 1e-12);
    }
}
