//! Pointwise heat kernel from eigenfunctions, checked against the free kernel.

use serde::{Deserialize, Serialize};

use super::{discretize, tridiagonal_eigen, Axis, AxisOperator, Discretization, GridConfig, LabError};
use crate::geometry::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTriple {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `K / K_free` with the free kernel of the same lattice, over
    /// triples where that kernel exceeds `1e-8`.
    pub max_ratio: f64,
    /// Largest `K / K_free` against the continuum Gaussian. The lattice
    /// kernel itself exceeds the Gaussian by `O(h²/β)`, so this can sit
    /// slightly above one on coarse grids.
    pub max_continuum_ratio: f64,
    pub min_kernel: f64,
}

impl KernelBoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Free heat kernel `e^{βΔ_h/2}` of the infinite 1D lattice with spacing `h`
/// between nodes `dn` apart, as a density (divided by `h`).
pub fn lattice_free_kernel_1d(dn: i64, beta: f64, h: f64) -> f64 {
    // (1/2π) ∫ cos(k dn) e^{-τ(1 - cos k)} dk over one period; the integrand is
    // periodic and analytic, so the trapezoid rule converges geometrically.
    let tau = beta / (h * h);
    let dn = dn.unsigned_abs() as f64;
    let n = (20.0 * tau.sqrt() + 2.0 * dn + 64.0).ceil() as usize;
    let sum: f64 = (0..n)
        .map(|j| {
            let k = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            (k * dn).cos() * (-tau * (1.0 - k.cos())).exp()
        })
        .sum();
    sum / n as f64 / h
}

/// Eigen-decomposed 1D axis: modes of each live chain.
struct AxisModes {
    axis: Axis,
    /// `(first node, eigenvalues, row-major eigenvectors)` per chain.
    chains: Vec<(usize, Vec<f64>, Vec<f64>)>,
}

impl AxisModes {
    fn new(op: &AxisOperator) -> Self {
        let h2 = 1.0 / (op.axis.h * op.axis.h);
        let chains = op
            .chains()
            .into_iter()
            .map(|(start, pot)| {
                let diag: Vec<f64> = pot.iter().map(|v| 2.0 * h2 + v).collect();
                let off = vec![-h2; diag.len().saturating_sub(1)];
                let (vals, vecs) = tridiagonal_eigen(&diag, &off, true);
                (start, vals, vecs.expect("requested"))
            })
            .collect();
        AxisModes { axis: op.axis.clone(), chains }
    }

    fn kernel(&self, i: usize, j: usize, beta: f64) -> f64 {
        for (start, vals, vecs) in &self.chains {
            let n = vals.len();
            let range = *start..*start + n;
            if range.contains(&i) && range.contains(&j) {
                let (a, b) = (i - start, j - start);
                let k: f64 = (0..n).map(|m| vecs[a * n + m] * vecs[b * n + m] * (-0.5 * beta * vals[m]).exp()).sum();
                return k / self.axis.h;
            }
        }
        0.0
    }
}

enum Modes {
    Axes(Vec<AxisModes>),
    Dense { axes: [Axis; 2], live: Vec<(usize, usize)>, values: Vec<f64>, vectors: nalgebra::DMatrix<f64> },
}

impl Modes {
    fn axes(&self) -> Vec<&Axis> {
        match self {
            Modes::Axes(a) => a.iter().map(|m| &m.axis).collect(),
            Modes::Dense { axes, .. } => axes.iter().collect(),
        }
    }

    fn kernel(&self, x: &[usize], y: &[usize], beta: f64) -> f64 {
        match self {
            Modes::Axes(a) => a.iter().enumerate().map(|(c, m)| m.kernel(x[c], y[c], beta)).product(),
            Modes::Dense { axes, live, values, vectors } => {
                let (Ok(p), Ok(q)) = (live.binary_search(&(x[0], x[1])), live.binary_search(&(y[0], y[1]))) else {
                    return 0.0;
                };
                let k: f64 = (0..values.len())
                    .map(|m| vectors[(p, m)] * vectors[(q, m)] * (-0.5 * beta * values[m]).exp())
                    .sum();
                k / (axes[0].h * axes[1].h)
            }
        }
    }
}

/// Checks `0 ≤ K(x, y; β) ≤ K_free(x, y; β)` on the grid for the domain of
/// `subset`, with `x` and `y` snapped to the nearest interior nodes.
pub fn kernel_bound_check(
    scene: &Scene,
    subset: u32,
    grid: &GridConfig,
    triples: &[KernelTriple],
) -> Result<KernelBoundReport, LabError> {
    let modes = match discretize(scene, subset, grid)? {
        Discretization::Axes(ops) => Modes::Axes(ops.iter().map(AxisModes::new).collect()),
        Discretization::Dense { axes, live, matrix } => {
            let eig = matrix.symmetric_eigen();
            Modes::Dense { axes, live, values: eig.eigenvalues.iter().copied().collect(), vectors: eig.eigenvectors }
        }
    };
    let axes = modes.axes();
    let mut report = KernelBoundReport {
        checked: 0,
        violations: 0,
        max_ratio: 0.0,
        max_continuum_ratio: 0.0,
        min_kernel: f64::INFINITY,
    };
    for t in triples {
        let xi: Vec<usize> = axes.iter().enumerate().map(|(c, a)| a.nearest(t.x[c])).collect();
        let yi: Vec<usize> = axes.iter().enumerate().map(|(c, a)| a.nearest(t.y[c])).collect();
        let k = modes.kernel(&xi, &yi, t.beta);
        let mut lattice = 1.0;
        let mut r2 = 0.0;
        for (c, a) in axes.iter().enumerate() {
            lattice *= lattice_free_kernel_1d(xi[c] as i64 - yi[c] as i64, t.beta, a.h);
            r2 += (a.position(xi[c]) - a.position(yi[c])).powi(2);
        }
        let continuum =
            (2.0 * std::f64::consts::PI * t.beta).powf(-(axes.len() as f64) / 2.0) * (-r2 / (2.0 * t.beta)).exp();
        let ok = k >= -1e-10 && k <= lattice * (1.0 + 1e-10) + 1e-10;
        report.checked += 1;
        report.violations += usize::from(!ok);
        report.min_kernel = report.min_kernel.min(k);
        if lattice > 1e-8 {
            report.max_ratio = report.max_ratio.max(k / lattice);
        }
        if continuum > 1e-8 {
            report.max_continuum_ratio = report.max_continuum_ratio.max(k / continuum);
        }
    }
    Ok(report)
}
