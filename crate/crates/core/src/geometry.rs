//! Scenes, objects and the per-path predicates the Monte Carlo engine needs.
//!
//! Objects are convex: hyperplanes, 2D segments, solid balls and solid
//! axis-aligned boxes. Each carries either a Dirichlet condition (a path that
//! touches it is killed) or a nonnegative potential that kills paths
//! stochastically through the Feynman–Kac weight `exp(-∫ V dt)`.
//!
//! Potential normalization: a potential of `strength` σ (inverse length) adds
//! `σ·f(g)` to the operator `-Δ`, where `g` is the distance to the shape and
//! `f` is a unit-area profile across the surface. The corresponding
//! Feynman–Kac rate is `V = σ f / 2`. A zero-width sheet is the σ·δ plate.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::erfcx;

/// Gaussian profiles are cut off beyond this many widths.
pub const GAUSSIAN_CUTOFF_WIDTHS: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("a scene needs at least one object")]
    NoObjects,
    #[error("object {index}: {reason}")]
    InvalidObject { index: usize, reason: String },
    #[error("{shape} requires dimension {required}, scene has {dimension}")]
    DimensionMismatch { shape: &'static str, required: usize, dimension: usize },
    #[error("object {0} does not lie inside the bounding box")]
    OutsideBoundingBox(usize),
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("empty common intersection undecidable at grid resolution {resolution:.3e}")]
    Undecidable { resolution: f64 },
    #[error("region is unbounded")]
    Unbounded,
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(GeometryError::InvalidBox("corner dimensions differ".into()));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite corner".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(GeometryError::InvalidBox("lo must be strictly below hi on every axis".into()));
        }
        Ok(Aabb { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let gap = (l - v).max(v - h).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    fn closest(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.lo.iter().zip(&self.hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect()
    }

    fn translated(&self, shift: &[f64]) -> Aabb {
        Aabb {
            lo: self.lo.iter().zip(shift).map(|(a, s)| a + s).collect(),
            hi: self.hi.iter().zip(shift).map(|(a, s)| a + s).collect(),
        }
    }

    /// Whether the closed segment `[p, q]` meets the box.
    fn hits_segment(&self, p: &[f64], q: &[f64]) -> bool {
        let mut t0 = 0.0_f64;
        let mut t1 = 1.0_f64;
        for c in 0..p.len() {
            let d = q[c] - p[c];
            if d == 0.0 {
                if p[c] < self.lo[c] || p[c] > self.hi[c] {
                    return false;
                }
            } else {
                let a = (self.lo[c] - p[c]) / d;
                let b = (self.hi[c] - p[c]) / d;
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// Geometric shape of an object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// `{x : normal·x = offset}`, a point in 1D, a line in 2D, a plane in 3D.
    Hyperplane { normal: Vec<f64>, offset: f64 },
    /// Closed 2D segment.
    Segment { a: [f64; 2], b: [f64; 2] },
    /// Solid ball.
    Sphere { center: Vec<f64>, radius: f64 },
    /// Solid axis-aligned box.
    Box(Aabb),
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Hyperplane { .. } => "plane",
            Shape::Segment { .. } => "segment",
            Shape::Sphere { .. } => "sphere",
            Shape::Box(_) => "box",
        }
    }

    /// Hyperplane through `point` with the given (not necessarily unit) normal.
    pub fn plane_through(point: &[f64], normal: &[f64]) -> Shape {
        let len = norm(normal);
        let n: Vec<f64> = normal.iter().map(|v| v / len).collect();
        let offset = dot(&n, point);
        Shape::Hyperplane { normal: n, offset }
    }

    /// 1D point at `x`.
    pub fn point(x: f64) -> Shape {
        Shape::Hyperplane { normal: vec![1.0], offset: x }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Shape::Hyperplane { .. })
    }

    /// Euclidean distance from `x` to the set (zero inside solids).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Hyperplane { normal, offset } => (dot(normal, x) - offset).abs(),
            Shape::Segment { a, b } => point_segment_distance(x, a, b),
            Shape::Sphere { center, radius } => (dist(x, center) - radius).max(0.0),
            Shape::Box(b) => b.distance(x),
        }
    }

    /// Closest point of the set to `x`.
    pub fn closest_point(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Shape::Hyperplane { normal, offset } => {
                let s = dot(normal, x) - offset;
                x.iter().zip(normal).map(|(v, n)| v - s * n).collect()
            }
            Shape::Segment { a, b } => {
                let t = segment_parameter(x, a, b);
                vec![a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            }
            Shape::Sphere { center, radius } => {
                let r = dist(x, center);
                if r <= *radius {
                    x.to_vec()
                } else {
                    center.iter().zip(x).map(|(c, v)| c + (v - c) * radius / r).collect()
                }
            }
            Shape::Box(b) => b.closest(x),
        }
    }

    /// Bounding box of the set inflated by `pad`, `None` for hyperplanes.
    pub fn bounds(&self, pad: f64) -> Option<Aabb> {
        let (lo, hi) = match self {
            Shape::Hyperplane { .. } => return None,
            Shape::Segment { a, b } => {
                (vec![a[0].min(b[0]) - pad, a[1].min(b[1]) - pad], vec![a[0].max(b[0]) + pad, a[1].max(b[1]) + pad])
            }
            Shape::Sphere { center, radius } => {
                (center.iter().map(|c| c - radius - pad).collect(), center.iter().map(|c| c + radius + pad).collect())
            }
            Shape::Box(b) => (b.lo.iter().map(|v| v - pad).collect(), b.hi.iter().map(|v| v + pad).collect()),
        };
        Some(Aabb { lo, hi })
    }

    /// Whether the closed segment `[p, q]` meets the set.
    pub fn hits_segment(&self, p: &[f64], q: &[f64]) -> bool {
        match self {
            Shape::Hyperplane { normal, offset } => {
                let sp = dot(normal, p) - offset;
                let sq = dot(normal, q) - offset;
                sp == 0.0 || sq == 0.0 || (sp < 0.0) != (sq < 0.0)
            }
            Shape::Segment { a, b } => segments_intersect([p[0], p[1]], [q[0], q[1]], *a, *b),
            Shape::Sphere { center, radius } => point_segment_distance(center, p, q) <= *radius,
            Shape::Box(b) => b.hits_segment(p, q),
        }
    }

    /// Projections of the set onto `axis`-direction `dir`: `(min, max)` of `dir·x`.
    fn projection_range(&self, dir: &[f64]) -> (f64, f64) {
        match self {
            Shape::Hyperplane { normal, offset } => {
                let along = dot(normal, dir);
                let residual = dot(dir, dir) - along * along;
                if residual.abs() < 1e-12 {
                    let v = along * offset;
                    (v, v)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                }
            }
            Shape::Segment { a, b } => {
                let pa = dot(dir, a);
                let pb = dot(dir, b);
                (pa.min(pb), pa.max(pb))
            }
            Shape::Sphere { center, radius } => {
                let c = dot(dir, center);
                let r = radius * norm(dir);
                (c - r, c + r)
            }
            Shape::Box(b) => {
                let mut lo = 0.0;
                let mut hi = 0.0;
                for c in 0..dir.len() {
                    let (x, y) = (dir[c] * b.lo[c], dir[c] * b.hi[c]);
                    lo += x.min(y);
                    hi += x.max(y);
                }
                (lo, hi)
            }
        }
    }

    fn translated(&self, shift: &[f64]) -> Shape {
        match self {
            Shape::Hyperplane { normal, offset } => {
                Shape::Hyperplane { normal: normal.clone(), offset: offset + dot(normal, shift) }
            }
            Shape::Segment { a, b } => {
                Shape::Segment { a: [a[0] + shift[0], a[1] + shift[1]], b: [b[0] + shift[0], b[1] + shift[1]] }
            }
            Shape::Sphere { center, radius } => {
                Shape::Sphere { center: center.iter().zip(shift).map(|(c, s)| c + s).collect(), radius: *radius }
            }
            Shape::Box(b) => Shape::Box(b.translated(shift)),
        }
    }

    fn check(&self, dimension: usize) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Shape::Hyperplane { normal, offset } => {
                if normal.len() != dimension {
                    return Err(format!("plane normal has {} components, expected {dimension}", normal.len()));
                }
                if !finite(normal) || !offset.is_finite() {
                    return Err("non-finite plane parameters".into());
                }
                if (norm(normal) - 1.0).abs() > 1e-9 {
                    return Err("plane normal must be a unit vector".into());
                }
            }
            Shape::Segment { a, b } => {
                if dimension != 2 {
                    return Err(format!("segments exist only in 2D, scene has dimension {dimension}"));
                }
                if !finite(a) || !finite(b) {
                    return Err("non-finite segment endpoint".into());
                }
                if dist(a, b) == 0.0 {
                    return Err("segment endpoints coincide".into());
                }
            }
            Shape::Sphere { center, radius } => {
                if center.len() != dimension {
                    return Err(format!("sphere center has {} components, expected {dimension}", center.len()));
                }
                if !finite(center) || !(radius.is_finite() && *radius > 0.0) {
                    return Err("sphere needs a finite center and positive radius".into());
                }
            }
            Shape::Box(b) => {
                if b.dim() != dimension {
                    return Err(format!("box has {} axes, expected {dimension}", b.dim()));
                }
            }
        }
        Ok(())
    }
}

/// Transverse shape of a potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Profile {
    /// Zero-width σ·δ sheet on a hyperplane.
    Sheet,
    /// Uniform `σ/w` within distance `w/2` of the shape.
    Slab { width: f64 },
    /// `σ exp(-g²/2w²) / (√(2π) w)` in the distance `g`.
    Gaussian { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Interaction {
    Dirichlet,
    Potential { strength: f64, profile: Profile },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub interaction: Interaction,
}

impl Object {
    pub fn dirichlet(shape: Shape) -> Self {
        Object { shape, interaction: Interaction::Dirichlet }
    }

    pub fn potential(shape: Shape, strength: f64, profile: Profile) -> Self {
        Object { shape, interaction: Interaction::Potential { strength, profile } }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self.interaction, Interaction::Dirichlet)
    }

    /// Distance from the shape beyond which the object has no effect.
    pub fn reach(&self) -> f64 {
        match self.interaction {
            Interaction::Dirichlet => 0.0,
            Interaction::Potential { profile, .. } => match profile {
                Profile::Sheet => 0.0,
                Profile::Slab { width } => 0.5 * width,
                Profile::Gaussian { width } => GAUSSIAN_CUTOFF_WIDTHS * width,
            },
        }
    }

    /// Feynman–Kac rate `V(x)`; zero for Dirichlet objects and sheets.
    pub fn potential_at(&self, x: &[f64]) -> f64 {
        match self.interaction {
            Interaction::Dirichlet => 0.0,
            Interaction::Potential { strength, profile } => {
                0.5 * strength * profile_value(profile, self.shape.distance(x))
            }
        }
    }

    fn check(&self, dimension: usize) -> Result<(), String> {
        self.shape.check(dimension)?;
        if let Interaction::Potential { strength, profile } = self.interaction {
            if !(strength.is_finite() && strength >= 0.0) {
                return Err(format!("potential strength {strength} must be finite and nonnegative"));
            }
            match profile {
                Profile::Sheet => {
                    if !matches!(self.shape, Shape::Hyperplane { .. }) {
                        return Err("zero-width potentials are only supported on planes".into());
                    }
                }
                Profile::Slab { width } | Profile::Gaussian { width } => {
                    if !(width.is_finite() && width > 0.0) {
                        return Err(format!("potential width {width} must be positive"));
                    }
                }
            }
        }
        Ok(())
    }

    fn translated(&self, shift: &[f64]) -> Object {
        Object { shape: self.shape.translated(shift), interaction: self.interaction }
    }
}

/// Unit-area transverse profile evaluated at distance `g` from the shape.
pub fn profile_value(profile: Profile, g: f64) -> f64 {
    match profile {
        Profile::Sheet => 0.0,
        Profile::Slab { width } => {
            if g <= 0.5 * width {
                1.0 / width
            } else {
                0.0
            }
        }
        Profile::Gaussian { width } => {
            if g > GAUSSIAN_CUTOFF_WIDTHS * width {
                0.0
            } else {
                (-0.5 * (g / width).powi(2)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * width)
            }
        }
    }
}

/// The domain with its embedded objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    dimension: usize,
    objects: Vec<Object>,
    bounding: Option<Aabb>,
}

impl Scene {
    pub fn new(dimension: usize, objects: Vec<Object>, bounding: Option<Aabb>) -> Result<Self, GeometryError> {
        if dimension == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        if objects.is_empty() {
            return Err(GeometryError::NoObjects);
        }
        if objects.len() > crate::combinatorics::MAX_OBJECTS as usize {
            return Err(GeometryError::InvalidObject { index: objects.len() - 1, reason: "too many objects".into() });
        }
        for (index, o) in objects.iter().enumerate() {
            o.check(dimension).map_err(|reason| GeometryError::InvalidObject { index, reason })?;
        }
        if let Some(b) = &bounding {
            if b.dim() != dimension {
                return Err(GeometryError::InvalidBox(format!("box has {} axes, scene has {dimension}", b.dim())));
            }
            for (index, o) in objects.iter().enumerate() {
                let inside = match &o.shape {
                    Shape::Hyperplane { normal, offset } => {
                        let (lo, hi) = Shape::Box(b.clone()).projection_range(normal);
                        lo < *offset && *offset < hi
                    }
                    other => {
                        let ob = other.bounds(0.0).expect("bounded shape");
                        ob.lo.iter().zip(&b.lo).all(|(o, l)| o >= l) && ob.hi.iter().zip(&b.hi).all(|(o, h)| o <= h)
                    }
                };
                if !inside {
                    return Err(GeometryError::OutsideBoundingBox(index));
                }
            }
        }
        Ok(Scene { dimension, objects, bounding })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn objects(&self) -> &[Object] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn bounding(&self) -> Option<&Aabb> {
        self.bounding.as_ref()
    }

    /// Scene restricted to the objects whose labels are set in `mask`.
    pub fn subset(&self, mask: u32) -> Vec<&Object> {
        self.objects.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, o)| o).collect()
    }

    /// Rigid translation of every object and of the bounding box.
    pub fn translated(&self, shift: &[f64]) -> Scene {
        Scene {
            dimension: self.dimension,
            objects: self.objects.iter().map(|o| o.translated(shift)).collect(),
            bounding: self.bounding.as_ref().map(|b| b.translated(shift)),
        }
    }
}

/// A loop `x + √β·u_k`, `k = 0..=M`, built from a unit Brownian bridge.
///
/// The unit samples may be a strided view into a finer bridge, which is how
/// the coarse member of a refinement pair is read without copying.
#[derive(Debug, Clone)]
pub struct DiscretizedLoop<'a> {
    base: Vec<f64>,
    scale: f64,
    unit: Cow<'a, [f64]>,
    dim: usize,
    stride: usize,
    points: usize,
}

impl<'a> DiscretizedLoop<'a> {
    /// `unit` holds `(points·stride + 1)·dim` values; sample `k` of this loop
    /// is unit sample `k·stride`.
    pub fn new(base: Vec<f64>, beta: f64, unit: Cow<'a, [f64]>, stride: usize) -> Self {
        let dim = base.len();
        assert!(dim > 0 && stride > 0 && beta >= 0.0);
        let total = unit.len() / dim;
        assert_eq!(total * dim, unit.len(), "unit samples not a multiple of the dimension");
        let points = (total - 1) / stride;
        assert!(points >= 2 && points * stride == total - 1, "stride must divide the sample count");
        DiscretizedLoop { base, scale: beta.sqrt(), unit, dim, stride, points }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps `M`.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// `√β`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn beta(&self) -> f64 {
        self.scale * self.scale
    }

    /// Dimensionless unit-bridge sample `k`.
    pub fn unit_sample(&self, k: usize) -> &[f64] {
        let i = k * self.stride * self.dim;
        &self.unit[i..i + self.dim]
    }

    /// Physical sample `k`, written into `out`.
    pub fn point_into(&self, k: usize, out: &mut [f64]) {
        let u = self.unit_sample(k);
        for c in 0..self.dim {
            out[c] = self.base[c] + self.scale * u[c];
        }
    }

    pub fn point(&self, k: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        self.point_into(k, &mut p);
        p
    }

    /// Largest distance of any sample from the base point.
    pub fn radius(&self) -> f64 {
        (0..=self.points).map(|k| self.scale * norm(self.unit_sample(k))).fold(0.0, f64::max)
    }

    /// Whether every sample and connecting segment stays inside `b`.
    pub fn stays_inside(&self, b: &Aabb) -> bool {
        let mut p = vec![0.0; self.dim];
        (0..self.points).all(|k| {
            self.point_into(k, &mut p);
            b.contains(&p)
        })
    }

    /// Moves the loop to a new base point without touching its samples.
    pub fn set_base(&mut self, x: &[f64]) {
        self.base.copy_from_slice(x);
    }

    pub fn translated(&self, shift: &[f64]) -> DiscretizedLoop<'a> {
        let mut out = self.clone();
        for (b, s) in out.base.iter_mut().zip(shift) {
            *b += s;
        }
        out
    }
}

/// Whether the polygonal loop meets the object's shape: some sample lies on
/// or inside it, or some step between consecutive samples crosses it.
pub fn touches(object: &Object, path: &DiscretizedLoop<'_>) -> bool {
    shape_touches(&object.shape, path)
}

pub(crate) fn shape_touches(shape: &Shape, path: &DiscretizedLoop<'_>) -> bool {
    if let Shape::Hyperplane { normal, offset } = shape {
        let centre = dot(normal, &path.base) - offset;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..path.points {
            let s = centre + path.scale * dot(normal, path.unit_sample(k));
            lo = lo.min(s);
            hi = hi.max(s);
        }
        return lo <= 0.0 && 0.0 <= hi;
    }
    let mut p = vec![0.0; path.dim];
    let mut q = vec![0.0; path.dim];
    path.point_into(0, &mut p);
    for k in 1..=path.points {
        path.point_into(k, &mut q);
        if shape.hits_segment(&p, &q) {
            return true;
        }
        std::mem::swap(&mut p, &mut q);
    }
    false
}

/// `∫_0^β V(x_t) dt` along the loop.
///
/// Profiles of finite width use the closed-loop trapezoid rule. For a zero-width
/// sheet the integral is a local time; the returned value is the effective
/// exponent `-ln E[exp(-∫V) | samples]` of the Brownian bridge pinned at the
/// samples, so that [`survival`] stays exact between samples.
pub fn potential_integral(object: &Object, path: &DiscretizedLoop<'_>) -> f64 {
    match object.interaction {
        Interaction::Dirichlet => 0.0,
        Interaction::Potential { strength, profile: Profile::Sheet } => {
            let s = sheet_survival(&object.shape, strength, path);
            if s > 0.0 {
                -s.ln()
            } else {
                f64::INFINITY
            }
        }
        Interaction::Potential { .. } => {
            let mut p = vec![0.0; path.dim];
            let mut sum = 0.0;
            for k in 0..path.points {
                path.point_into(k, &mut p);
                sum += object.potential_at(&p);
            }
            sum * path.beta() / path.points as f64
        }
    }
}

/// Probability that the loop survives the object alone.
pub fn survival(object: &Object, path: &DiscretizedLoop<'_>) -> f64 {
    match object.interaction {
        Interaction::Dirichlet => {
            if touches(object, path) {
                0.0
            } else {
                1.0
            }
        }
        Interaction::Potential { strength, profile: Profile::Sheet } => sheet_survival(&object.shape, strength, path),
        Interaction::Potential { .. } => (-potential_integral(object, path)).exp(),
    }
}

fn sheet_survival(shape: &Shape, strength: f64, path: &DiscretizedLoop<'_>) -> f64 {
    let Shape::Hyperplane { normal, offset } = shape else {
        unreachable!("sheet potentials are validated to live on planes")
    };
    let rate = 0.5 * strength;
    let dt = path.beta() / path.points as f64;
    let centre = dot(normal, &path.base) - offset;
    let mut prev = centre + path.scale * dot(normal, path.unit_sample(0));
    let mut s = 1.0;
    for k in 1..=path.points {
        let next = centre + path.scale * dot(normal, path.unit_sample(k));
        s *= sheet_step_survival(rate, dt, prev, next);
        prev = next;
    }
    s
}

/// `E[exp(-c L)]` for a 1D Brownian bridge from signed distance `y0` to `y1`
/// in time `dt`, with `L` its local time at zero (occupation density).
///
/// From the heat kernel of `-½∂² + c δ`:
/// `1 - c √(π dt/2) exp((Δ² - u²)/2dt) erfcx((u + c dt)/√(2dt))`,
/// `u = |y0| + |y1|`, `Δ = y1 - y0`.
#[inline]
pub fn sheet_step_survival(c: f64, dt: f64, y0: f64, y1: f64) -> f64 {
    if c == 0.0 {
        return 1.0;
    }
    let u = y0.abs() + y1.abs();
    let delta = y1 - y0;
    // u² - Δ² = 4|y0||y1| on the same side, zero across.
    let gap = 2.0 * (y0 * y1).max(0.0) / dt;
    if gap > 40.0 {
        return 1.0;
    }
    let _ = delta;
    let z = (u + c * dt) / (2.0 * dt).sqrt();
    let f = 1.0 - c * (0.5 * std::f64::consts::PI * dt).sqrt() * (-gap).exp() * erfcx(z);
    f.clamp(0.0, 1.0)
}

/// Certifies that the objects (their potential supports, for potentials)
/// share no common point.
///
/// Pairs and all-hyperplane configurations are decided exactly. Otherwise a
/// grid over the candidate region is scanned: if no cell centre lies within
/// the half-diagonal `δ` of every object, the intersection is empty. If some
/// centre is within `δ` but not inside all objects the answer is
/// [`GeometryError::Undecidable`].
pub fn verify_empty_common_intersection(scene: &Scene) -> Result<bool, GeometryError> {
    let objects = scene.objects();
    let n = objects.len();
    if n == 1 {
        return Ok(false);
    }
    for i in 0..n {
        for j in i + 1..n {
            let gap = set_distance(&objects[i].shape, &objects[j].shape, scene.dimension);
            if gap > objects[i].reach() + objects[j].reach() {
                return Ok(true);
            }
        }
    }
    if n == 2 {
        return Ok(false);
    }
    let planes: Vec<(&[f64], f64)> = objects
        .iter()
        .filter_map(|o| match &o.shape {
            Shape::Hyperplane { normal, offset } if o.reach() == 0.0 => Some((normal.as_slice(), *offset)),
            _ => None,
        })
        .collect();
    if planes.len() == n {
        return Ok(!affine_system_consistent(&planes, scene.dimension));
    }
    grid_falsification(scene)
}

fn grid_falsification(scene: &Scene) -> Result<bool, GeometryError> {
    let d = scene.dimension;
    let objects = scene.objects();
    // Candidate region: intersection of the bounded supports' boxes, else the
    // polytope cut out by the plane slabs.
    let mut region: Option<Aabb> = None;
    for o in objects {
        if let Some(b) = o.shape.bounds(o.reach()) {
            region = Some(match region {
                None => b,
                Some(r) => Aabb {
                    lo: r.lo.iter().zip(&b.lo).map(|(a, b)| a.max(*b)).collect(),
                    hi: r.hi.iter().zip(&b.hi).map(|(a, b)| a.min(*b)).collect(),
                },
            });
        }
    }
    let region = match region {
        Some(r) => r,
        None => {
            let slabs: Vec<SlabConstraint> = objects
                .iter()
                .map(|o| match &o.shape {
                    Shape::Hyperplane { normal, offset } => {
                        SlabConstraint { normal: normal.clone(), lo: offset - o.reach(), hi: offset + o.reach() }
                    }
                    _ => unreachable!(),
                })
                .collect();
            match slab_polytope_bounds(&slabs, d) {
                Ok(Some(b)) => b,
                Ok(None) => return Ok(true),
                Err(_) => return Err(GeometryError::Undecidable { resolution: f64::INFINITY }),
            }
        }
    };
    if region.lo.iter().zip(&region.hi).any(|(l, h)| l > h) {
        return Ok(true);
    }
    let per_axis: usize = match d {
        1 => 4096,
        2 => 256,
        3 => 48,
        _ => 12,
    };
    let h: Vec<f64> = region.lo.iter().zip(&region.hi).map(|(l, h)| ((h - l) / per_axis as f64).max(1e-300)).collect();
    let delta = 0.5 * h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut near_miss = false;
    loop {
        for c in 0..d {
            x[c] = region.lo[c] + (idx[c] as f64 + 0.5) * h[c];
        }
        let mut within_delta = true;
        let mut inside = true;
        for o in objects {
            let g = o.shape.distance(&x) - o.reach();
            if g > delta {
                within_delta = false;
                break;
            }
            if g > 1e-12 {
                inside = false;
            }
        }
        if within_delta {
            if inside {
                return Ok(false);
            }
            near_miss = true;
        }
        let mut c = 0;
        loop {
            if c == d {
                return if near_miss { Err(GeometryError::Undecidable { resolution: delta }) } else { Ok(true) };
            }
            idx[c] += 1;
            if idx[c] < per_axis {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
    }
}

/// Distance between two convex shapes (zero when they meet).
pub fn set_distance(a: &Shape, b: &Shape, dimension: usize) -> f64 {
    use Shape::*;
    match (a, b) {
        (Hyperplane { normal: n1, offset: o1 }, Hyperplane { normal: n2, offset: o2 }) => {
            let c = dot(n1, n2);
            // In 1D every pair of unit normals is parallel.
            if (c.abs() - 1.0).abs() < 1e-12 || dimension == 1 {
                (o1 - c.signum() * o2).abs()
            } else {
                0.0
            }
        }
        (Hyperplane { normal, offset }, other) | (other, Hyperplane { normal, offset }) => {
            let (lo, hi) = other.projection_range(normal);
            (lo - offset).max(offset - hi).max(0.0)
        }
        (Sphere { center, radius }, other) | (other, Sphere { center, radius }) => {
            (convex_point_distance(other, center) - radius).max(0.0)
        }
        (Box(x), Box(y)) => {
            x.lo.iter()
                .zip(&x.hi)
                .zip(y.lo.iter().zip(&y.hi))
                .map(|((xl, xh), (yl, yh))| {
                    let g = (yl - xh).max(xl - yh).max(0.0);
                    g * g
                })
                .sum::<f64>()
                .sqrt()
        }
        (Segment { a: p, b: q }, Segment { a: r, b: s }) => {
            if segments_intersect(*p, *q, *r, *s) {
                0.0
            } else {
                point_segment_distance(p, r, s)
                    .min(point_segment_distance(q, r, s))
                    .min(point_segment_distance(r, p, q))
                    .min(point_segment_distance(s, p, q))
            }
        }
        (Segment { a: p, b: q }, Box(bx)) | (Box(bx), Segment { a: p, b: q }) => {
            if bx.hits_segment(p, q) {
                0.0
            } else {
                let corners = [[bx.lo[0], bx.lo[1]], [bx.lo[0], bx.hi[1]], [bx.hi[0], bx.lo[1]], [bx.hi[0], bx.hi[1]]];
                let mut best = bx.distance(p).min(bx.distance(q));
                for c in &corners {
                    best = best.min(point_segment_distance(c, p, q));
                }
                best
            }
        }
    }
}

fn convex_point_distance(shape: &Shape, x: &[f64]) -> f64 {
    shape.distance(x)
}

/// Whether `{x : n_i·x = o_i}` has a solution, by Gaussian elimination on the
/// augmented system.
fn affine_system_consistent(planes: &[(&[f64], f64)], d: usize) -> bool {
    let mut rows: Vec<Vec<f64>> = planes
        .iter()
        .map(|(n, o)| {
            let mut r = n.to_vec();
            r.push(*o);
            r
        })
        .collect();
    let scale = rows.iter().flat_map(|r| r.iter()).fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * scale;
    let mut pivot_row = 0;
    for col in 0..d {
        let best = (pivot_row..rows.len()).max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs()));
        let Some(best) = best else { break };
        if rows[best][col].abs() <= tol {
            continue;
        }
        rows.swap(pivot_row, best);
        for r in 0..rows.len() {
            if r != pivot_row {
                let f = rows[r][col] / rows[pivot_row][col];
                if f != 0.0 {
                    for c in col..=d {
                        rows[r][c] -= f * rows[pivot_row][c];
                    }
                }
            }
        }
        pivot_row += 1;
    }
    rows[pivot_row..].iter().all(|r| r[d].abs() <= tol)
}

/// `lo <= normal·x <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabConstraint {
    pub normal: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// Bounding box of the polytope `∩ {lo_i <= n_i·x <= hi_i}`.
///
/// `Ok(None)` when the polytope is empty, `Err(Unbounded)` when the normals
/// do not span space.
pub fn slab_polytope_bounds(slabs: &[SlabConstraint], d: usize) -> Result<Option<Aabb>, GeometryError> {
    if slabs.iter().any(|s| s.lo > s.hi) {
        return Ok(None);
    }
    // Axis-aligned constraints reduce to interval intersection.
    let axis_of = |n: &[f64]| -> Option<(usize, f64)> {
        let mut found = None;
        for (c, v) in n.iter().enumerate() {
            if *v != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some((c, *v));
            }
        }
        found
    };
    if slabs.iter().all(|s| axis_of(&s.normal).is_some()) {
        let mut lo = vec![f64::NEG_INFINITY; d];
        let mut hi = vec![f64::INFINITY; d];
        for s in slabs {
            let (c, v) = axis_of(&s.normal).unwrap();
            let (a, b) = if v > 0.0 { (s.lo / v, s.hi / v) } else { (s.hi / v, s.lo / v) };
            lo[c] = lo[c].max(a);
            hi[c] = hi[c].min(b);
        }
        if lo.iter().chain(&hi).any(|v| v.is_infinite()) {
            return Err(GeometryError::Unbounded);
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Ok(None);
        }
        return Ok(Some(Aabb { lo, hi }));
    }
    // General case: enumerate vertices as intersections of d boundary planes.
    let faces: Vec<(&[f64], f64)> =
        slabs.iter().flat_map(|s| [(s.normal.as_slice(), s.lo), (s.normal.as_slice(), s.hi)]).collect();
    let normals: Vec<&[f64]> = slabs.iter().map(|s| s.normal.as_slice()).collect();
    if rank(&normals, d) < d {
        return Err(GeometryError::Unbounded);
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut any = false;
    let mut combo: Vec<usize> = (0..d).collect();
    let m = faces.len();
    loop {
        if let Some(x) = solve_square(&combo.iter().map(|&i| faces[i]).collect::<Vec<_>>(), d) {
            let feasible = slabs.iter().all(|s| {
                let v = dot(&s.normal, &x);
                let tol = 1e-9 * (1.0 + s.lo.abs().max(s.hi.abs()));
                v >= s.lo - tol && v <= s.hi + tol
            });
            if feasible {
                any = true;
                for c in 0..d {
                    lo[c] = lo[c].min(x[c]);
                    hi[c] = hi[c].max(x[c]);
                }
            }
        }
        // next combination
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(if any { Some(Aabb { lo, hi }) } else { None });
            }
            i -= 1;
            if combo[i] < m - d + i {
                combo[i] += 1;
                for j in i + 1..d {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn rank(vectors: &[&[f64]], d: usize) -> usize {
    let mut rows: Vec<Vec<f64>> = vectors.iter().map(|v| v.to_vec()).collect();
    let mut r = 0;
    for col in 0..d {
        let Some(best) = (r..rows.len()).max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs())) else {
            break;
        };
        if rows[best][col].abs() < 1e-12 {
            continue;
        }
        rows.swap(r, best);
        for i in 0..rows.len() {
            if i != r {
                let f = rows[i][col] / rows[r][col];
                for c in col..d {
                    rows[i][c] -= f * rows[r][c];
                }
            }
        }
        r += 1;
    }
    r
}

fn solve_square(faces: &[(&[f64], f64)], d: usize) -> Option<Vec<f64>> {
    let mut a: Vec<Vec<f64>> = faces
        .iter()
        .map(|(n, o)| {
            let mut r = n.to_vec();
            r.push(*o);
            r
        })
        .collect();
    for col in 0..d {
        let best = (col..d).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[best][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, best);
        for r in 0..d {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=d {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..d).map(|i| a[i][d] / a[i][i]).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn segment_parameter(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(p, q)| q - p).collect();
    let len2 = dot(&ab, &ab);
    if len2 == 0.0 {
        return 0.0;
    }
    let ax: Vec<f64> = a.iter().zip(x).map(|(p, q)| q - p).collect();
    (dot(&ax, &ab) / len2).clamp(0.0, 1.0)
}

fn point_segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let t = segment_parameter(x, a, b);
    x.iter().zip(a.iter().zip(b)).map(|(v, (p, q))| (v - (p + t * (q - p))).powi(2)).sum::<f64>().sqrt()
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test in 2D, including touching and collinear overlap.
pub fn segments_intersect(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let d1 = orient(r, s, p);
    let d2 = orient(r, s, q);
    let d3 = orient(p, q, r);
    let d4 = orient(p, q, s);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(r, s, p))
        || (d2 == 0.0 && on_segment(r, s, q))
        || (d3 == 0.0 && on_segment(p, q, r))
        || (d4 == 0.0 && on_segment(p, q, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_line(values: &[f64]) -> Vec<f64> {
        values.to_vec()
    }

    fn loop_1d(base: f64, beta: f64, u: &[f64]) -> DiscretizedLoop<'static> {
        DiscretizedLoop::new(vec![base], beta, Cow::Owned(unit_line(u)), 1)
    }

    #[test]
    fn point_on_base_is_touched() {
        let o = Object::dirichlet(Shape::point(0.0));
        let l = loop_1d(0.0, 1.0, &[0.0, 0.3, -0.2, 0.0]);
        assert!(touches(&o, &l));
        assert_eq!(survival(&o, &l), 0.0);
    }

    #[test]
    fn far_point_is_not_touched() {
        let o = Object::dirichlet(Shape::point(10.0));
        let l = loop_1d(0.0, 1.0, &[0.0, 1.0, -1.0, 0.5, 0.0]);
        assert!(!touches(&o, &l));
        assert_eq!(survival(&o, &l), 1.0);
    }

    #[test]
    fn segment_crossed_between_samples() {
        let seg = Object::dirichlet(Shape::Segment { a: [0.5, -1.0], b: [0.5, 1.0] });
        // Samples 1 and 2 straddle x = 0.5 while both sit off the segment.
        let u = vec![0.0, 0.0, 0.2, 0.1, 0.8, 0.1, 0.0, 0.0];
        let l = DiscretizedLoop::new(vec![0.0, 0.0], 1.0, Cow::Owned(u.clone()), 1);
        assert!(touches(&seg, &l));
        // Dense re-sampling of the same polygon agrees.
        let mut dense = Vec::new();
        let pts: Vec<[f64; 2]> = u.chunks(2).map(|c| [c[0], c[1]]).collect();
        for w in pts.windows(2) {
            for j in 0..100 {
                let t = j as f64 / 100.0;
                dense.push(w[0][0] + t * (w[1][0] - w[0][0]));
                dense.push(w[0][1] + t * (w[1][1] - w[0][1]));
            }
        }
        dense.extend_from_slice(&[0.0, 0.0]);
        let fine = DiscretizedLoop::new(vec![0.0, 0.0], 1.0, Cow::Owned(dense.clone()), 1);
        let crossed = dense.chunks(2).any(|c| (c[0] - 0.5).abs() < 0.01 && c[1].abs() <= 1.0);
        assert!(crossed);
        assert!(touches(&seg, &fine));
    }

    #[test]
    fn constant_potential_integrates_to_v_beta() {
        // A slab far wider than the loop behaves as a constant potential.
        let width = 1000.0;
        let v0 = 0.7;
        let o = Object::potential(Shape::point(0.0), 2.0 * v0 * width, Profile::Slab { width });
        let l = loop_1d(0.1, 2.5, &[0.0, 0.4, -0.3, 0.2, 0.0]);
        assert!((potential_integral(&o, &l) - v0 * 2.5).abs() < 1e-12);
        let far = loop_1d(900.0, 2.5, &[0.0, 0.4, -0.3, 0.2, 0.0]);
        assert_eq!(potential_integral(&o, &far), 0.0);
    }

    #[test]
    fn survival_is_exponential_of_integral() {
        let o = Object::potential(Shape::point(0.0), 2.0 * 1000.0, Profile::Slab { width: 1000.0 });
        // V = 1 everywhere nearby, β = ln 2 gives survival 1/2.
        let l = loop_1d(0.0, std::f64::consts::LN_2, &[0.0, 0.1, 0.0]);
        assert!((survival(&o, &l) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_trapezoid_converges_under_refinement() {
        // Smooth closed loop u(t) = 0.8 sin(2πt) + 0.3 sin(4πt).
        let sample = |m: usize| -> Vec<f64> {
            (0..=m)
                .map(|k| {
                    let t = k as f64 / m as f64;
                    0.8 * (2.0 * std::f64::consts::PI * t).sin() + 0.3 * (4.0 * std::f64::consts::PI * t).sin()
                })
                .collect()
        };
        let o = Object::potential(Shape::point(0.2), 3.0, Profile::Gaussian { width: 0.25 });
        let coarse = DiscretizedLoop::new(vec![0.0], 1.3, Cow::Owned(sample(64)), 1);
        let fine = DiscretizedLoop::new(vec![0.0], 1.3, Cow::Owned(sample(640)), 1);
        let a = potential_integral(&o, &coarse);
        let b = potential_integral(&o, &fine);
        assert!(a > 0.0);
        assert!(((a - b) / b).abs() < 0.01, "{a} vs {b}");
    }

    #[test]
    fn sheet_step_limits() {
        // Same side, infinite coupling: bridge non-crossing probability.
        let s = sheet_step_survival(1e9, 0.1, 0.2, 0.3);
        assert!((s - (1.0 - (-2.0 * 0.2 * 0.3 / 0.1_f64).exp())).abs() < 1e-6);
        // Crossing with infinite coupling kills.
        assert!(sheet_step_survival(1e9, 0.1, -0.2, 0.3) < 1e-6);
        // Zero coupling never kills.
        assert_eq!(sheet_step_survival(0.0, 0.1, -0.2, 0.3), 1.0);
        // Far away never kills.
        assert_eq!(sheet_step_survival(5.0, 0.01, 2.0, 3.0), 1.0);
    }

    #[test]
    fn sheet_step_matches_time_sliced_bridge() {
        // E[exp(-c L)] for a bridge from y0 to y1 via fine trapezoid of a
        // narrow Gaussian is not available in closed form, so compare with the
        // small-coupling expansion 1 - c E[L]: E[L] = ∫ p_t(y0,0)p_{dt-t}(0,y1)/p_dt(y0,y1) dt.
        let (c, dt, y0, y1) = (1e-4_f64, 0.3_f64, 0.1_f64, -0.25_f64);
        let p = |t: f64, a: f64| (-(a * a) / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
        let n = 200_000;
        let mut mean_local = 0.0;
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64 * dt;
            mean_local += p(t, y0) * p(dt - t, y1);
        }
        mean_local *= dt / n as f64 / p(dt, y1 - y0);
        let s = sheet_step_survival(c, dt, y0, y1);
        assert!(((1.0 - s) / c - mean_local).abs() < 1e-3 * mean_local, "{} vs {}", (1.0 - s) / c, mean_local);
    }

    #[test]
    fn empty_intersection_examples() {
        let spheres = Scene::new(
            3,
            vec![
                Object::dirichlet(Shape::Sphere { center: vec![0.0, 0.0, 0.0], radius: 1.0 }),
                Object::dirichlet(Shape::Sphere { center: vec![3.0, 0.0, 0.0], radius: 1.0 }),
            ],
            None,
        )
        .unwrap();
        assert_eq!(verify_empty_common_intersection(&spheres), Ok(true));

        let same = Scene::new(
            3,
            vec![
                Object::dirichlet(Shape::Sphere { center: vec![0.0, 0.0, 0.0], radius: 1.0 }),
                Object::dirichlet(Shape::Sphere { center: vec![0.0, 0.0, 0.0], radius: 1.0 }),
            ],
            None,
        )
        .unwrap();
        assert_eq!(verify_empty_common_intersection(&same), Ok(false));

        let triangle = Scene::new(
            2,
            vec![
                Object::dirichlet(Shape::plane_through(&[0.0, 0.0], &[0.0, 1.0])),
                Object::dirichlet(Shape::plane_through(&[0.0, 0.0], &[3f64.sqrt(), -1.0])),
                Object::dirichlet(Shape::plane_through(&[1.0, 0.0], &[3f64.sqrt(), 1.0])),
            ],
            None,
        )
        .unwrap();
        assert_eq!(verify_empty_common_intersection(&triangle), Ok(true));

        let concurrent = Scene::new(
            2,
            vec![
                Object::dirichlet(Shape::plane_through(&[0.0, 0.0], &[0.0, 1.0])),
                Object::dirichlet(Shape::plane_through(&[0.0, 0.0], &[1.0, 0.0])),
                Object::dirichlet(Shape::plane_through(&[0.0, 0.0], &[1.0, 1.0])),
            ],
            None,
        )
        .unwrap();
        assert_eq!(verify_empty_common_intersection(&concurrent), Ok(false));
    }

    #[test]
    fn segment_triangle_certified_by_grid() {
        let (a, b, c) = ([0.0, 0.0], [1.0, 0.0], [0.5, 0.8]);
        let scene = Scene::new(
            2,
            vec![
                Object::dirichlet(Shape::Segment { a, b }),
                Object::dirichlet(Shape::Segment { a: b, b: c }),
                Object::dirichlet(Shape::Segment { a: c, b: a }),
            ],
            None,
        )
        .unwrap();
        assert_eq!(verify_empty_common_intersection(&scene), Ok(true));
    }

    #[test]
    fn overlapping_supports_are_not_disjoint() {
        let scene = Scene::new(
            1,
            vec![
                Object::potential(Shape::point(0.0), 1.0, Profile::Slab { width: 0.5 }),
                Object::potential(Shape::point(0.4), 1.0, Profile::Slab { width: 0.5 }),
            ],
            None,
        )
        .unwrap();
        assert_eq!(verify_empty_common_intersection(&scene), Ok(false));
    }

    #[test]
    fn validation_rejects_bad_objects() {
        assert!(
            Scene::new(1, vec![Object::dirichlet(Shape::Sphere { center: vec![0.0], radius: -1.0 })], None).is_err()
        );
        assert!(Scene::new(3, vec![Object::dirichlet(Shape::Segment { a: [0.0, 0.0], b: [1.0, 0.0] })], None).is_err());
        assert!(Scene::new(1, vec![Object::potential(Shape::point(0.0), -1.0, Profile::Sheet)], None).is_err());
        let sheet_on_sphere = Object::potential(Shape::Sphere { center: vec![0.0], radius: 1.0 }, 1.0, Profile::Sheet);
        assert!(Scene::new(1, vec![sheet_on_sphere], None).is_err());
        let b = Aabb::new(vec![0.0], vec![1.0]).unwrap();
        assert_eq!(
            Scene::new(1, vec![Object::dirichlet(Shape::point(2.0))], Some(b)),
            Err(GeometryError::OutsideBoundingBox(0))
        );
    }

    #[test]
    fn triangle_polytope_bounds() {
        // Slabs |n·x - o| <= 0.4 around the sides of a unit triangle meet
        // around the incentre (inradius 0.2887).
        let s3 = 3f64.sqrt();
        let sides = [(vec![0.0, 1.0], 0.0), (vec![s3 / 2.0, -0.5], 0.0), (vec![s3 / 2.0, 0.5], s3 / 2.0)];
        let slabs: Vec<SlabConstraint> =
            sides.iter().map(|(n, o)| SlabConstraint { normal: n.clone(), lo: o - 0.4, hi: o + 0.4 }).collect();
        let b = slab_polytope_bounds(&slabs, 2).unwrap().unwrap();
        assert!(b.contains(&[0.5, s3 / 6.0]));
        assert!(!b.contains(&[0.0, 0.0]));
        let thin: Vec<SlabConstraint> =
            sides.iter().map(|(n, o)| SlabConstraint { normal: n.clone(), lo: o - 0.1, hi: o + 0.1 }).collect();
        assert_eq!(slab_polytope_bounds(&thin, 2), Ok(None));
        let one = [SlabConstraint { normal: vec![1.0, 0.0], lo: 0.0, hi: 1.0 }];
        assert_eq!(slab_polytope_bounds(&one, 2), Err(GeometryError::Unbounded));
        let thin = [
            SlabConstraint { normal: vec![1.0, 0.0], lo: 0.0, hi: 1.0 },
            SlabConstraint { normal: vec![1.0, 0.0], lo: 2.0, hi: 3.0 },
            SlabConstraint { normal: vec![0.0, 1.0], lo: 0.0, hi: 3.0 },
        ];
        assert_eq!(slab_polytope_bounds(&thin, 2), Ok(None));
    }

    proptest! {
        #[test]
        fn predicates_translation_invariant(
            u in proptest::collection::vec(-1.5f64..1.5, 8),
            base in proptest::collection::vec(-2.0f64..2.0, 2),
            shift in proptest::collection::vec(-5.0f64..5.0, 2),
            beta in 0.1f64..3.0,
        ) {
            let mut samples = vec![0.0, 0.0];
            samples.extend_from_slice(&u);
            samples.extend_from_slice(&[0.0, 0.0]);
            let objects = vec![
                Object::dirichlet(Shape::Segment { a: [-0.5, 0.3], b: [0.7, -0.4] }),
                Object::dirichlet(Shape::Sphere { center: vec![0.4, 0.4], radius: 0.3 }),
                Object::dirichlet(Shape::Box(Aabb::new(vec![-1.0, -1.0], vec![-0.6, 0.2]).unwrap())),
                Object::potential(Shape::plane_through(&[0.1, 0.0], &[1.0, 2.0]), 2.0, Profile::Slab { width: 0.3 }),
                Object::potential(Shape::plane_through(&[0.1, 0.0], &[1.0, -1.0]), 2.0, Profile::Sheet),
            ];
            let l = DiscretizedLoop::new(base.clone(), beta, Cow::Owned(samples), 1);
            let moved = l.translated(&shift);
            for o in &objects {
                let t = o.translated(&shift);
                prop_assert_eq!(touches(o, &l), touches(&t, &moved));
                let (a, b) = (survival(o, &l), survival(&t, &moved));
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&a));
                if o.is_dirichlet() {
                    prop_assert!(a == 0.0 || a == 1.0);
                }
            }
        }
    }
}
