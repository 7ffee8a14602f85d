//! One pass over the loop bank evaluating per-loop kill volumes at a set of
//! proper times.
//!
//! For a fixed unit loop `u` and proper time β the kill probability is a
//! function of the base point only, and it vanishes outside the polytope of
//! base points from which the scaled loop can reach every object (and stays in
//! the domain box). That polytope's bounding box is the per-loop sampling box.
//! When every object is a Dirichlet hyperplane and `d <= 2`, the kill set *is*
//! the polytope and its volume is computed exactly; otherwise the box is
//! sampled with a Latin hypercube.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{
    self, sheet_step_survival, slab_polytope_bounds, Aabb, DiscretizedLoop, GeometryError, Interaction, Object,
    Profile, Scene, Shape, SlabConstraint,
};
use crate::loops::{LoopEnsemble, Scheme};

use super::EngineError;

/// Same-side sheet steps with `y0·y1 > SHEET_GAP·dt` survive with probability 1.
const SHEET_GAP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlaneKind {
    Dirichlet,
    Sheet { rate: f64 },
    Slab { rate: f64, half: f64 },
    Gaussian,
}

#[derive(Debug, Clone)]
struct PlaneObject {
    index: usize,
    normal: Vec<f64>,
    offset: f64,
    kind: PlaneKind,
    reach: f64,
}

/// Scene data laid out for the inner loop.
#[derive(Debug)]
pub(crate) struct Prepared<'s> {
    scene: &'s Scene,
    dim: usize,
    planes: Vec<PlaneObject>,
    others: Vec<usize>,
    exact: bool,
}

impl<'s> Prepared<'s> {
    pub(crate) fn new(scene: &'s Scene) -> Self {
        let mut planes = Vec::new();
        let mut others = Vec::new();
        for (index, o) in scene.objects().iter().enumerate() {
            match (&o.shape, o.interaction) {
                (Shape::Hyperplane { normal, offset }, interaction) => {
                    let kind = match interaction {
                        Interaction::Dirichlet => PlaneKind::Dirichlet,
                        Interaction::Potential { strength, profile: Profile::Sheet } => {
                            PlaneKind::Sheet { rate: 0.5 * strength }
                        }
                        Interaction::Potential { strength, profile: Profile::Slab { width } } => {
                            PlaneKind::Slab { rate: 0.5 * strength / width, half: 0.5 * width }
                        }
                        Interaction::Potential { profile: Profile::Gaussian { .. }, .. } => PlaneKind::Gaussian,
                    };
                    planes.push(PlaneObject { index, normal: normal.clone(), offset: *offset, kind, reach: o.reach() });
                }
                _ => others.push(index),
            }
        }
        // Cheapest rejections first.
        planes.sort_by_key(|p| match p.kind {
            PlaneKind::Dirichlet => 0,
            PlaneKind::Slab { .. } => 1,
            PlaneKind::Sheet { .. } => 2,
            PlaneKind::Gaussian => 3,
        });
        let exact =
            others.is_empty() && scene.dimension() <= 2 && planes.iter().all(|p| p.kind == PlaneKind::Dirichlet);
        Prepared { scene, dim: scene.dimension(), planes, others, exact }
    }

    /// Whether the kill volume is computed in closed form.
    pub(crate) fn exact(&self) -> bool {
        self.exact
    }

    pub(crate) fn has_dirichlet(&self) -> bool {
        self.scene.bounding().is_some() || self.scene.objects().iter().any(Object::is_dirichlet)
    }
}

/// β-independent summaries of one unit loop at one resolution.
#[derive(Debug, Default)]
struct LevelStats {
    stride: usize,
    points: usize,
    axis_min: Vec<f64>,
    axis_max: Vec<f64>,
    plane_min: Vec<f64>,
    plane_max: Vec<f64>,
    /// Sorted projections `n·u_k`, `k < M`, for slab planes (empty otherwise).
    plane_sorted: Vec<Vec<f64>>,
}

#[derive(Debug, Default)]
struct LoopData {
    unit: Vec<f64>,
    /// Projections `n·u_k` on every plane, at the finest resolution.
    proj: Vec<Vec<f64>>,
    levels: Vec<LevelStats>,
}

impl LoopData {
    fn load(&mut self, prep: &Prepared<'_>, ensemble: &LoopEnsemble, index: usize, strides: &[usize]) {
        ensemble.unit_loop_into(index, &mut self.unit).expect("index in range");
        let d = prep.dim;
        let m = ensemble.points();
        self.proj.resize_with(prep.planes.len(), Vec::new);
        for (p, proj) in prep.planes.iter().zip(self.proj.iter_mut()) {
            proj.clear();
            proj.extend(self.unit.chunks_exact(d).map(|u| geometry::dot(&p.normal, u)));
        }
        self.levels.resize_with(strides.len(), LevelStats::default);
        for (level, &stride) in self.levels.iter_mut().zip(strides) {
            level.stride = stride;
            level.points = m / stride;
            level.axis_min.clear();
            level.axis_max.clear();
            level.axis_min.resize(d, f64::INFINITY);
            level.axis_max.resize(d, f64::NEG_INFINITY);
            for k in (0..m).step_by(stride) {
                for c in 0..d {
                    let v = self.unit[k * d + c];
                    level.axis_min[c] = level.axis_min[c].min(v);
                    level.axis_max[c] = level.axis_max[c].max(v);
                }
            }
            level.plane_min.clear();
            level.plane_max.clear();
            level.plane_sorted.resize_with(prep.planes.len(), Vec::new);
            for (j, p) in prep.planes.iter().enumerate() {
                let proj = &self.proj[j];
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for k in (0..m).step_by(stride) {
                    lo = lo.min(proj[k]);
                    hi = hi.max(proj[k]);
                }
                level.plane_min.push(lo);
                level.plane_max.push(hi);
                let sorted = &mut level.plane_sorted[j];
                sorted.clear();
                if matches!(p.kind, PlaneKind::Slab { .. }) {
                    sorted.extend((0..m).step_by(stride).map(|k| proj[k]));
                    sorted.sort_by(f64::total_cmp);
                }
            }
        }
    }
}

/// Half-width of the band around a sheet outside which a loop is unaffected.
fn sheet_margin(beta: f64, points: usize) -> f64 {
    (SHEET_GAP * beta / points as f64).sqrt() * (1.0 + 1e-9)
}

/// Constraints on the base point `x` for the loop to possibly be killed.
///
/// The stay-inside constraints of the domain box use `inside`, which may be a
/// coarser view than `stats`: a coarse view stays inside for more base points.
fn reach_constraints(
    prep: &Prepared<'_>,
    stats: &LevelStats,
    inside: &LevelStats,
    coarse_points: usize,
    s: f64,
    beta: f64,
    out: &mut Vec<SlabConstraint>,
) {
    out.clear();
    let d = prep.dim;
    for (j, p) in prep.planes.iter().enumerate() {
        let margin = match p.kind {
            PlaneKind::Sheet { .. } => sheet_margin(beta, coarse_points),
            _ => p.reach,
        };
        out.push(SlabConstraint {
            normal: p.normal.clone(),
            lo: p.offset - margin - s * stats.plane_max[j],
            hi: p.offset + margin - s * stats.plane_min[j],
        });
    }
    for &i in &prep.others {
        let o = &prep.scene.objects()[i];
        let b = o.shape.bounds(o.reach()).expect("bounded shape");
        for c in 0..d {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            out.push(SlabConstraint {
                normal: e,
                lo: b.lo[c] - s * stats.axis_max[c],
                hi: b.hi[c] - s * stats.axis_min[c],
            });
        }
    }
    if let Some(b) = prep.scene.bounding() {
        for c in 0..d {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            out.push(SlabConstraint {
                normal: e,
                lo: b.lo[c] - s * inside.axis_min[c],
                hi: b.hi[c] - s * inside.axis_max[c],
            });
        }
    }
}

/// Area or length of a polytope given by slab constraints, `d <= 2`.
pub(crate) fn polytope_volume(slabs: &[SlabConstraint], d: usize) -> Result<f64, GeometryError> {
    let Some(b) = slab_polytope_bounds(slabs, d)? else { return Ok(0.0) };
    if d == 1 {
        return Ok((b.hi[0] - b.lo[0]).max(0.0));
    }
    assert_eq!(d, 2, "closed-form volumes are implemented for d <= 2");
    let mut poly = vec![[b.lo[0], b.lo[1]], [b.hi[0], b.lo[1]], [b.hi[0], b.hi[1]], [b.lo[0], b.hi[1]]];
    let mut next = Vec::with_capacity(8);
    for s in slabs {
        if s.normal[0] == 0.0 || s.normal[1] == 0.0 {
            // Axis-aligned constraints are already the bounding box.
            continue;
        }
        for (sign, bound) in [(1.0, s.hi), (-1.0, -s.lo)] {
            // keep sign·n·x <= bound
            let f = |p: &[f64; 2]| sign * (s.normal[0] * p[0] + s.normal[1] * p[1]) - bound;
            next.clear();
            for i in 0..poly.len() {
                let a = poly[i];
                let c = poly[(i + 1) % poly.len()];
                let (fa, fc) = (f(&a), f(&c));
                if fa <= 0.0 {
                    next.push(a);
                }
                if (fa < 0.0 && fc > 0.0) || (fa > 0.0 && fc < 0.0) {
                    let t = fa / (fa - fc);
                    next.push([a[0] + t * (c[0] - a[0]), a[1] + t * (c[1] - a[1])]);
                }
            }
            std::mem::swap(&mut poly, &mut next);
            if poly.len() < 3 {
                return Ok(0.0);
            }
        }
    }
    let mut area = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let c = poly[(i + 1) % poly.len()];
        area += a[0] * c[1] - a[1] * c[0];
    }
    Ok(0.5 * area.abs())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for the base points of loop `index` at proper time `beta`.
fn point_rng(seed: u64, index: usize, beta: f64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index as u64 ^ splitmix(beta.to_bits()))))
}

struct KillContext<'a, 'p> {
    prep: &'a Prepared<'p>,
    data: &'a LoopData,
    level: usize,
    s: f64,
    beta: f64,
}

impl KillContext<'_, '_> {
    fn kill(&self, x: &[f64]) -> f64 {
        let prep = self.prep;
        let stats = &self.data.levels[self.level];
        let s = self.s;
        let d = prep.dim;
        if let Some(b) = prep.scene.bounding() {
            for c in 0..d {
                if x[c] + s * stats.axis_min[c] < b.lo[c] || x[c] + s * stats.axis_max[c] > b.hi[c] {
                    return 0.0;
                }
            }
        }
        let stride = stats.stride;
        let dt = self.beta / stats.points as f64;
        let mut kill = 1.0;
        for (j, p) in prep.planes.iter().enumerate() {
            let centre = geometry::dot(&p.normal, x) - p.offset;
            let lo = centre + s * stats.plane_min[j];
            let hi = centre + s * stats.plane_max[j];
            match p.kind {
                PlaneKind::Dirichlet => {
                    if lo > 0.0 || hi < 0.0 {
                        return 0.0;
                    }
                }
                PlaneKind::Slab { rate, half } => {
                    let sorted = &stats.plane_sorted[j];
                    let a = (-half - centre) / s;
                    let b = (half - centre) / s;
                    let count = sorted.partition_point(|v| *v <= b) - sorted.partition_point(|v| *v < a);
                    if count == 0 {
                        return 0.0;
                    }
                    kill *= -(-rate * dt * count as f64).exp_m1();
                }
                PlaneKind::Sheet { rate } => {
                    let margin = sheet_margin(self.beta, stats.points);
                    if lo > margin || hi < -margin {
                        return 0.0;
                    }
                    let proj = &self.data.proj[j];
                    let mut survive = 1.0;
                    let mut prev = centre + s * proj[0];
                    let mut k = stride;
                    while k < proj.len() {
                        let next = centre + s * proj[k];
                        survive *= sheet_step_survival(rate, dt, prev, next);
                        prev = next;
                        k += stride;
                    }
                    kill *= 1.0 - survive;
                }
                PlaneKind::Gaussian => {
                    if lo > p.reach || hi < -p.reach {
                        return 0.0;
                    }
                    let object = &prep.scene.objects()[p.index];
                    let proj = &self.data.proj[j];
                    let Interaction::Potential { strength, profile } = object.interaction else { unreachable!() };
                    let mut sum = 0.0;
                    let mut k = 0;
                    while k + stride < proj.len() {
                        sum += geometry::profile_value(profile, (centre + s * proj[k]).abs());
                        k += stride;
                    }
                    kill *= -(-0.5 * strength * sum * dt).exp_m1();
                }
            }
            if kill == 0.0 {
                return 0.0;
            }
        }
        if !prep.others.is_empty() {
            let path = DiscretizedLoop::new(x.to_vec(), self.beta, std::borrow::Cow::Borrowed(&self.data.unit), stride);
            for &i in &prep.others {
                let o = &prep.scene.objects()[i];
                let b = o.shape.bounds(o.reach()).expect("bounded shape");
                let reachable =
                    (0..d).all(|c| x[c] + s * stats.axis_max[c] >= b.lo[c] && x[c] + s * stats.axis_min[c] <= b.hi[c]);
                if !reachable {
                    return 0.0;
                }
                kill *= 1.0 - geometry::survival(o, &path);
                if kill == 0.0 {
                    return 0.0;
                }
            }
        }
        kill
    }
}

/// Sweep parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SweepSpec {
    pub seed: u64,
    pub x_samples: usize,
    pub blocks: usize,
    pub refine: bool,
}

/// Per-block sums of the per-loop kill volumes.
#[derive(Debug, Clone)]
pub(crate) struct BlockSums {
    pub loops: usize,
    /// `[node]` sums at the fine resolution.
    pub fine: Vec<f64>,
    /// `[node]` sums at half the resolution (all zero without refinement).
    pub coarse: Vec<f64>,
    pub box_volume: Vec<f64>,
    pub hull: Vec<Option<Aabb>>,
}

#[derive(Debug, Clone)]
pub(crate) struct SweepResult {
    pub blocks: Vec<BlockSums>,
    pub x_evaluations: usize,
    pub refined: bool,
}

/// Whether the ensemble supports a coarse half-resolution view.
pub(crate) fn can_refine(ensemble: &LoopEnsemble) -> bool {
    ensemble.scheme() == Scheme::Bisection && ensemble.points() >= 4
}

pub(crate) fn sweep(
    prep: &Prepared<'_>,
    ensemble: &LoopEnsemble,
    betas: &[f64],
    spec: SweepSpec,
) -> Result<SweepResult, EngineError> {
    let refined = spec.refine && can_refine(ensemble);
    let strides: Vec<usize> = if refined { vec![1, 2] } else { vec![1] };
    let coarse_points = ensemble.points() / strides.last().unwrap();
    let n_loops = ensemble.count();
    let n_blocks = spec.blocks.clamp(1, n_loops);
    let nodes = betas.len();
    let blocks: Result<Vec<BlockSums>, EngineError> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * n_loops / n_blocks;
            let end = (b + 1) * n_loops / n_blocks;
            let mut sums = BlockSums {
                loops: end - start,
                fine: vec![0.0; nodes],
                coarse: vec![0.0; nodes],
                box_volume: vec![0.0; nodes],
                hull: vec![None; nodes],
            };
            let mut data = LoopData::default();
            let mut slabs = Vec::new();
            let mut exact_slabs = Vec::new();
            let mut x = vec![0.0; prep.dim];
            let mut strata: Vec<Vec<usize>> = vec![(0..spec.x_samples).collect(); prep.dim];
            for i in start..end {
                data.load(prep, ensemble, i, &strides);
                for (node, &beta) in betas.iter().enumerate() {
                    let s = beta.sqrt();
                    reach_constraints(
                        prep,
                        &data.levels[0],
                        data.levels.last().unwrap(),
                        coarse_points,
                        s,
                        beta,
                        &mut slabs,
                    );
                    let bounds = match slab_polytope_bounds(&slabs, prep.dim) {
                        Ok(Some(b)) => b,
                        Ok(None) => continue,
                        Err(_) => return Err(EngineError::UnboundedSamplingBox),
                    };
                    let volume = bounds.volume();
                    sums.box_volume[node] += volume;
                    let hull = &mut sums.hull[node];
                    *hull = Some(match hull.take() {
                        None => bounds.clone(),
                        Some(h) => Aabb {
                            lo: h.lo.iter().zip(&bounds.lo).map(|(a, b)| a.min(*b)).collect(),
                            hi: h.hi.iter().zip(&bounds.hi).map(|(a, b)| a.max(*b)).collect(),
                        },
                    });
                    if prep.exact {
                        for (level, stats) in data.levels.iter().enumerate() {
                            reach_constraints(prep, stats, stats, coarse_points, s, beta, &mut exact_slabs);
                            let v = polytope_volume(&exact_slabs, prep.dim)
                                .map_err(|_| EngineError::UnboundedSamplingBox)?;
                            if level == 0 {
                                sums.fine[node] += v;
                            } else {
                                sums.coarse[node] += v;
                            }
                        }
                        continue;
                    }
                    if volume == 0.0 {
                        continue;
                    }
                    let mut rng = point_rng(spec.seed, i, beta);
                    for st in strata.iter_mut() {
                        for (k, v) in st.iter_mut().enumerate() {
                            *v = k;
                        }
                        st.shuffle(&mut rng);
                    }
                    let mut acc = vec![0.0; data.levels.len()];
                    for n in 0..spec.x_samples {
                        for c in 0..prep.dim {
                            let u: f64 = rng.random();
                            let t = (strata[c][n] as f64 + u) / spec.x_samples as f64;
                            x[c] = bounds.lo[c] + t * (bounds.hi[c] - bounds.lo[c]);
                        }
                        for (level, a) in acc.iter_mut().enumerate() {
                            *a += KillContext { prep, data: &data, level, s, beta }.kill(&x);
                        }
                    }
                    sums.fine[node] += volume * acc[0] / spec.x_samples as f64;
                    if refined {
                        sums.coarse[node] += volume * acc[1] / spec.x_samples as f64;
                    }
                }
            }
            Ok(sums)
        })
        .collect();
    let x_evaluations = if prep.exact { 0 } else { n_loops * spec.x_samples * nodes };
    Ok(SweepResult { blocks: blocks?, x_evaluations, refined })
}

/// Kill probability of every loop at a fixed base point, both resolutions.
pub(crate) fn kill_at_point(
    prep: &Prepared<'_>,
    ensemble: &LoopEnsemble,
    x: &[f64],
    beta: f64,
    refine: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let refined = refine && can_refine(ensemble);
    let strides: Vec<usize> = if refined { vec![1, 2] } else { vec![1] };
    let s = beta.sqrt();
    let per_loop: Vec<(f64, f64)> = (0..ensemble.count())
        .into_par_iter()
        .map_init(LoopData::default, |data, i| {
            data.load(prep, ensemble, i, &strides);
            let fine = KillContext { prep, data, level: 0, s, beta }.kill(x);
            let coarse = if refined { KillContext { prep, data, level: 1, s, beta }.kill(x) } else { 0.0 };
            (fine, coarse)
        })
        .collect();
    let fine = per_loop.iter().map(|p| p.0).collect();
    let coarse = refined.then(|| per_loop.iter().map(|p| p.1).collect());
    (fine, coarse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_clipping_area() {
        // Unit square cut by x + y <= 1: triangle of area 1/2.
        let r = 0.5f64.sqrt();
        let slabs = vec![
            SlabConstraint { normal: vec![1.0, 0.0], lo: 0.0, hi: 1.0 },
            SlabConstraint { normal: vec![0.0, 1.0], lo: 0.0, hi: 1.0 },
            SlabConstraint { normal: vec![r, r], lo: -10.0, hi: r },
        ];
        assert!((polytope_volume(&slabs, 2).unwrap() - 0.5).abs() < 1e-12);
        let interval = vec![
            SlabConstraint { normal: vec![1.0], lo: 0.0, hi: 2.0 },
            SlabConstraint { normal: vec![-1.0], lo: -1.5, hi: 0.5 },
        ];
        assert!((polytope_volume(&interval, 1).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn hexagon_area() {
        // Three slabs |n_i·x| <= 1 at 60 degrees form a regular hexagon with
        // inradius 1, area 2√3.
        let slabs: Vec<SlabConstraint> = (0..3)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 3.0 + 0.1;
                SlabConstraint { normal: vec![a.cos(), a.sin()], lo: -1.0, hi: 1.0 }
            })
            .collect();
        assert!((polytope_volume(&slabs, 2).unwrap() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
    }
}
