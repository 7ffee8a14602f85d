//! Finite-difference heat-kernel lab: exact spectral functions of small
//! 1D and 2D domains for every subset of objects.
//!
//! The operator on the grid is `H = -Δ_h + 2V` with Dirichlet walls at the
//! domain box, so that `φ_s(β) = Σ exp(-β λ_n / 2)` matches the Brownian
//! normalization of the worldline estimator. Dirichlet objects delete grid
//! nodes within half a spacing; potentials add `2V` to the diagonal, with
//! zero-width sheets spread over the two neighbouring nodes.

mod fit;
mod kernel;
mod tridiag;

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{signed_weight, SubsetIndex};
use crate::geometry::{profile_value, Interaction, Object, Profile, Scene, Shape};

pub use fit::{decay_check, fit_heat_kernel, DecayFit, HeatKernelFit};
pub use kernel::{kernel_bound_check, lattice_free_kernel_1d, KernelBoundReport, KernelTriple};
pub use tridiag::tridiagonal_eigen;

/// Dense eigenproblems above this many unknowns are refused.
pub const MAX_DENSE_UNKNOWNS: usize = 2500;
/// Nodes per axis above which a 1D chain is refused.
pub const MAX_AXIS_NODES: usize = 20_000;
/// Largest object count for the subset enumeration.
pub const MAX_LAB_OBJECTS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("the lab handles dimensions 1 and 2, scene has {0}")]
    UnsupportedDimension(usize),
    #[error("the lab needs a finite domain box")]
    NoBoundingBox,
    #[error("grid too large: {0}")]
    GridTooLarge(String),
    #[error("non-positive eigenvalue {0:e}")]
    NonPositiveEigenvalue(f64),
    #[error("subset mask {0:#b} out of range")]
    BadSubset(u32),
    #[error("too many objects for the subset enumeration ({0} > {MAX_LAB_OBJECTS})")]
    TooManyObjects(usize),
    #[error("invalid grid spacing {0}")]
    BadSpacing(f64),
    #[error("{0}")]
    NoSuppression(String),
    #[error("need at least {needed} proper times, got {got}")]
    TooFewBetas { needed: usize, got: usize },
    #[error("csv: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Target spacing; each axis uses the nearest spacing dividing its length.
    pub spacing: f64,
}

/// Eigenvalues of one subset domain.
///
/// A separable 2D domain stores the spectra of its two axis operators; the
/// full spectrum is their pairwise sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    factors: Vec<Vec<f64>>,
    pub spacing: Vec<f64>,
    pub subset: u32,
}

impl Spectrum {
    /// All eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut out = match self.factors.as_slice() {
            [one] => one.clone(),
            [a, b] => a.iter().flat_map(|x| b.iter().map(move |y| x + y)).collect(),
            _ => unreachable!(),
        };
        out.sort_by(f64::total_cmp);
        out
    }

    pub fn len(&self) -> usize {
        self.factors.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn smallest(&self) -> Option<f64> {
        let mins: Option<Vec<f64>> = self.factors.iter().map(|f| f.first().copied()).collect();
        mins.map(|m| m.iter().sum())
    }

    fn from_single(values: Vec<f64>, spacing: Vec<f64>, subset: u32) -> Self {
        Spectrum { factors: vec![values], spacing, subset }
    }
}

fn heat_trace(values: &[f64], beta: f64) -> f64 {
    // Smallest terms first.
    values.iter().rev().map(|l| (-0.5 * beta * l).exp()).sum()
}

/// `φ(β) = Σ_n exp(-β λ_n / 2)`.
pub fn spectral_function(spectrum: &Spectrum, beta: f64) -> f64 {
    spectrum.factors.iter().map(|f| heat_trace(f, beta)).product()
}

/// One axis of a grid: nodes `lo + i·h`, `i = 0..=n`, endpoints on the walls.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Axis {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
}

impl Axis {
    fn new(lo: f64, hi: f64, spacing: f64) -> Result<Self, LabError> {
        let n = ((hi - lo) / spacing).round().max(2.0) as usize;
        if n > MAX_AXIS_NODES {
            return Err(LabError::GridTooLarge(format!("{n} intervals on one axis")));
        }
        Ok(Axis { lo, h: (hi - lo) / n as f64, n })
    }

    pub(crate) fn position(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.h
    }

    /// Interior node nearest to `x`.
    pub(crate) fn nearest(&self, x: f64) -> usize {
        (((x - self.lo) / self.h).round() as i64).clamp(1, self.n as i64 - 1) as usize
    }
}

/// Operator data on one axis for objects that depend only on that coordinate.
#[derive(Debug, Clone)]
pub(crate) struct AxisOperator {
    pub axis: Axis,
    /// `Some(2V)` for live interior nodes `1..n`, `None` for deleted ones.
    pub nodes: Vec<Option<f64>>,
}

/// Distance from coordinate `x` on `axis` to an object acting along that axis.
fn axis_distance(o: &Object, axis: usize, dim: usize, x: f64) -> f64 {
    match &o.shape {
        Shape::Hyperplane { normal, offset } => (x * normal[axis] - offset).abs(),
        shape => {
            debug_assert_eq!(dim, 1);
            shape.distance(&[x])
        }
    }
}

fn sheet_weight(g: f64, h: f64) -> f64 {
    (1.0 - g / h).max(0.0) / h
}

fn node_potential(o: &Object, g: f64, h: f64) -> f64 {
    match o.interaction {
        Interaction::Dirichlet => 0.0,
        Interaction::Potential { strength, profile: Profile::Sheet } => strength * sheet_weight(g, h),
        Interaction::Potential { strength, profile } => strength * profile_value(profile, g),
    }
}

fn deletes(o: &Object, g: f64, h: f64) -> bool {
    o.is_dirichlet() && g <= 0.5 * h * (1.0 + 1e-9)
}

impl AxisOperator {
    fn build(axis: Axis, objects: &[(&Object, usize)], dim: usize) -> Self {
        let nodes = (1..axis.n)
            .map(|i| {
                let x = axis.position(i);
                let mut v = 0.0;
                for (o, a) in objects {
                    let g = axis_distance(o, *a, dim, x);
                    if deletes(o, g, axis.h) {
                        return None;
                    }
                    v += node_potential(o, g, axis.h);
                }
                Some(v)
            })
            .collect();
        AxisOperator { axis, nodes }
    }

    /// Maximal runs of live nodes, as `(first node index, 2V values)`.
    pub(crate) fn chains(&self) -> Vec<(usize, Vec<f64>)> {
        let mut out = Vec::new();
        let mut current: Option<(usize, Vec<f64>)> = None;
        for (k, node) in self.nodes.iter().enumerate() {
            match node {
                Some(v) => current.get_or_insert_with(|| (k + 1, Vec::new())).1.push(*v),
                None => out.extend(current.take()),
            }
        }
        out.extend(current);
        out
    }

    fn eigenvalues(&self) -> Vec<f64> {
        let h2 = 1.0 / (self.axis.h * self.axis.h);
        let mut all = Vec::new();
        for (_, pot) in self.chains() {
            let diag: Vec<f64> = pot.iter().map(|v| 2.0 * h2 + v).collect();
            let off = vec![-h2; diag.len().saturating_sub(1)];
            all.extend(tridiagonal_eigen(&diag, &off, false).0);
        }
        all.sort_by(f64::total_cmp);
        all
    }
}

/// How a subset domain is discretized.
#[derive(Debug, Clone)]
pub(crate) enum Discretization {
    /// Product of independent axis operators (one for 1D, two for separable 2D).
    Axes(Vec<AxisOperator>),
    /// Dense 2D operator over the live nodes `(i, j)`.
    Dense { axes: [Axis; 2], live: Vec<(usize, usize)>, matrix: DMatrix<f64> },
}

/// Axis along which a hyperplane acts, if it is axis-aligned.
fn plane_axis(o: &Object) -> Option<usize> {
    let Shape::Hyperplane { normal, .. } = &o.shape else { return None };
    let nonzero: Vec<usize> = (0..normal.len()).filter(|&c| normal[c] != 0.0).collect();
    (nonzero.len() == 1).then(|| nonzero[0])
}

pub(crate) fn discretize(scene: &Scene, subset: u32, grid: &GridConfig) -> Result<Discretization, LabError> {
    let d = scene.dimension();
    if d > 2 {
        return Err(LabError::UnsupportedDimension(d));
    }
    let b = scene.bounding().ok_or(LabError::NoBoundingBox)?;
    if !(grid.spacing > 0.0 && grid.spacing.is_finite()) {
        return Err(LabError::BadSpacing(grid.spacing));
    }
    let n = scene.len();
    if n < 32 && subset >> n != 0 {
        return Err(LabError::BadSubset(subset));
    }
    let axes: Vec<Axis> = (0..d).map(|c| Axis::new(b.lo[c], b.hi[c], grid.spacing)).collect::<Result<_, _>>()?;
    let members = scene.subset(subset);
    if d == 1 {
        let objs: Vec<(&Object, usize)> = members.iter().map(|o| (*o, 0)).collect();
        return Ok(Discretization::Axes(vec![AxisOperator::build(axes[0].clone(), &objs, 1)]));
    }
    let separable = members.iter().all(|o| plane_axis(o).is_some());
    if separable {
        let ops = (0..2)
            .map(|c| {
                let objs: Vec<(&Object, usize)> =
                    members.iter().filter(|o| plane_axis(o) == Some(c)).map(|o| (*o, c)).collect();
                AxisOperator::build(axes[c].clone(), &objs, 2)
            })
            .collect();
        return Ok(Discretization::Axes(ops));
    }
    let (ax, ay) = (axes[0].clone(), axes[1].clone());
    let h = ax.h.min(ay.h);
    let mut live = Vec::new();
    let mut pot = Vec::new();
    for i in 1..ax.n {
        'node: for j in 1..ay.n {
            let x = [ax.position(i), ay.position(j)];
            let mut v = 0.0;
            for o in &members {
                let g = o.shape.distance(&x);
                if deletes(o, g, h) {
                    continue 'node;
                }
                v += node_potential(o, g, h);
            }
            live.push((i, j));
            pot.push(v);
        }
    }
    let m = live.len();
    if m > MAX_DENSE_UNKNOWNS {
        return Err(LabError::GridTooLarge(format!("{m} unknowns exceed the dense limit {MAX_DENSE_UNKNOWNS}")));
    }
    let index = |i: usize, j: usize| live.binary_search(&(i, j)).ok();
    let (hx2, hy2) = (1.0 / (ax.h * ax.h), 1.0 / (ay.h * ay.h));
    let mut matrix = DMatrix::zeros(m, m);
    for (k, &(i, j)) in live.iter().enumerate() {
        matrix[(k, k)] = 2.0 * hx2 + 2.0 * hy2 + pot[k];
        for (di, dj, w) in [(1i64, 0i64, hx2), (0, 1, hy2)] {
            if let Some(l) = index((i as i64 + di) as usize, (j as i64 + dj) as usize) {
                matrix[(k, l)] = -w;
                matrix[(l, k)] = -w;
            }
        }
    }
    Ok(Discretization::Dense { axes: [ax, ay], live, matrix })
}

/// Spectrum of `-Δ_h + 2V` on the box with the objects of `subset` inserted.
pub fn build_spectrum(scene: &Scene, subset: u32, grid: &GridConfig) -> Result<Spectrum, LabError> {
    let disc = discretize(scene, subset, grid)?;
    let spectrum = match disc {
        Discretization::Axes(ops) => Spectrum {
            spacing: ops.iter().map(|o| o.axis.h).collect(),
            factors: ops.iter().map(AxisOperator::eigenvalues).collect(),
            subset,
        },
        Discretization::Dense { axes, matrix, .. } => {
            let mut values: Vec<f64> = matrix.symmetric_eigenvalues().iter().copied().collect();
            values.sort_by(f64::total_cmp);
            Spectrum::from_single(values, vec![axes[0].h, axes[1].h], subset)
        }
    };
    if let Some(min) = spectrum.smallest() {
        if min <= 0.0 {
            return Err(LabError::NonPositiveEigenvalue(min));
        }
    }
    Ok(spectrum)
}

/// Spectra of every subset domain of a scene.
#[derive(Debug, Clone)]
pub struct SubsetSpectra {
    n: u32,
    spectra: Vec<Spectrum>,
}

impl SubsetSpectra {
    pub fn compute(scene: &Scene, grid: &GridConfig) -> Result<Self, LabError> {
        if scene.len() > MAX_LAB_OBJECTS {
            return Err(LabError::TooManyObjects(scene.len()));
        }
        let n = scene.len() as u32;
        let spectra =
            (0..1u32 << n).into_par_iter().map(|s| build_spectrum(scene, s, grid)).collect::<Result<_, _>>()?;
        Ok(SubsetSpectra { n, spectra })
    }

    pub fn spectrum(&self, subset: u32) -> &Spectrum {
        &self.spectra[subset as usize]
    }

    pub fn phi(&self, subset: u32, beta: f64) -> f64 {
        spectral_function(&self.spectra[subset as usize], beta)
    }

    /// `Σ_s (-1)^{N-|s|} φ_s(β)`.
    pub fn irreducible(&self, beta: f64) -> f64 {
        (0..1u32 << self.n)
            .map(|s| {
                let w = signed_weight(self.n, SubsetIndex::new(s, self.n).expect("mask in range"));
                w as f64 * self.phi(s, beta)
            })
            .sum()
    }

    pub fn object_count(&self) -> u32 {
        self.n
    }
}

/// Exact alternating sum of subset spectral functions at one grid resolution.
pub fn irreducible_spectral_exact(scene: &Scene, grid: &GridConfig, beta: f64) -> Result<f64, LabError> {
    Ok(SubsetSpectra::compute(scene, grid)?.irreducible(beta))
}

/// Lab value with a grid-error budget `|φ̃(h) - φ̃(h/2)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabValue {
    pub beta: f64,
    pub value: f64,
    pub grid_error: f64,
}

pub fn irreducible_with_budget(scene: &Scene, grid: &GridConfig, betas: &[f64]) -> Result<Vec<LabValue>, LabError> {
    let coarse = SubsetSpectra::compute(scene, grid)?;
    let fine = SubsetSpectra::compute(scene, &GridConfig { spacing: 0.5 * grid.spacing })?;
    Ok(betas
        .iter()
        .map(|&beta| {
            let f = fine.irreducible(beta);
            LabValue { beta, value: f, grid_error: (f - coarse.irreducible(beta)).abs() }
        })
        .collect())
}

/// Writes `beta, phi_<mask>..., phi_tilde` rows.
pub fn write_spectral_table<W: Write>(out: &mut W, spectra: &SubsetSpectra, betas: &[f64]) -> Result<(), LabError> {
    let io = |e: std::io::Error| LabError::Io(e.to_string());
    let masks = 1u32 << spectra.n;
    let mut header = vec!["beta".to_string()];
    header.extend((0..masks).map(|s| format!("phi_{s:0width$b}", width = spectra.n.max(1) as usize)));
    header.push("phi_tilde".into());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for &beta in betas {
        let mut row = vec![format!("{beta:e}")];
        row.extend((0..masks).map(|s| format!("{:e}", spectra.phi(s, beta))));
        row.push(format!("{:e}", spectra.irreducible(beta)));
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}
