use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::Serialize;

use wlcasimir::engine::{estimate_lmin, estimate_spectral_many, integrate_energy, QuadratureConfig, SamplerConfig};
use wlcasimir::lab::{decay_check, irreducible_with_budget, GridConfig, LabError};
use wlcasimir::loops::{LoopEnsemble, Scheme};
use wlcasimir::oracles::{collapse_limit_check, hrectangle_energy, RectangleConfig};
use wlcasimir::scattering::{coincidence_scan, irreducible_energy_1d, PlateStack, ScatteringConfig, ScatteringError};
use wlcasimir::{parse_scene, EngineError, Scene};

use crate::log;
use crate::manifest::{manifest_path, sha256_hex, ErrorBudget, RunManifest};
use crate::{
    BetaArgs, Command, EnergyArgs, LabArgs, LminArgs, OracleArgs, OutputArgs, SamplingArgs, ScatterArgs, SchemeArg,
    SpectralArgs,
};

/// Ensembles above this size are regenerated loop by loop instead of stored.
const MATERIALIZE_LIMIT: usize = 512 << 20;

#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Convergence(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Convergence(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{e:#}"),
            Failure::Convergence(e) => write!(f, "convergence failure: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::TailNotConverged(_) => Failure::Convergence(e.into()),
            other => Failure::Input(other.into()),
        }
    }
}

impl From<ScatteringError> for Failure {
    fn from(e: ScatteringError) -> Self {
        match e {
            ScatteringError::NotConverged(_) | ScatteringError::Cancellation(_) => Failure::Convergence(e.into()),
            other => Failure::Input(other.into()),
        }
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::NonPositiveEigenvalue(_) => Failure::Convergence(e.into()),
            other => Failure::Input(other.into()),
        }
    }
}

type Outcome = Result<(), Failure>;

pub fn run(command: &Command, argv: &[String]) -> Outcome {
    match command {
        Command::Energy(a) => energy(a, command, argv),
        Command::Spectral(a) => spectral(a, command, argv),
        Command::OracleRect(a) => oracle_rect(a, command, argv),
        Command::Lab(a) => lab(a, command, argv),
        Command::Scatter1d(a) => scatter(a, command, argv),
        Command::Lmin(a) => lmin(a, command, argv),
    }
}

fn read_scene(path: &Path) -> anyhow::Result<(Scene, String)> {
    let mut text = String::new();
    if path.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text).context("reading scene from stdin")?;
    } else {
        text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    }
    let scene = parse_scene(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((scene, sha256_hex(text.as_bytes())))
}

fn ensemble(s: &SamplingArgs, dim: usize) -> anyhow::Result<LoopEnsemble> {
    let scheme = match s.scheme {
        SchemeArg::Bisection => Scheme::Bisection,
        SchemeArg::Incremental => Scheme::Incremental,
    };
    let bytes = s.samples.saturating_mul(s.points + 1).saturating_mul(dim).saturating_mul(8);
    let e = if bytes <= MATERIALIZE_LIMIT {
        LoopEnsemble::generate(s.samples, s.points, dim, s.seed, scheme)
    } else {
        LoopEnsemble::lazy(s.samples, s.points, dim, s.seed, scheme)
    };
    e.context("building the loop ensemble")
}

fn sampler(s: &SamplingArgs, workers: Option<usize>) -> SamplerConfig {
    SamplerConfig { seed: s.seed, x_samples: s.x_samples, blocks: s.blocks, refine: !s.no_refine, workers }
}

fn beta_list(explicit: &[f64], grid: &BetaArgs) -> anyhow::Result<Vec<f64>> {
    if !explicit.is_empty() {
        return Ok(explicit.to_vec());
    }
    let (Some(lo), Some(hi)) = (grid.beta_min, grid.beta_max) else {
        return Err(anyhow!("give --beta values or both --beta-min and --beta-max"));
    };
    let n = grid.beta_nodes.unwrap_or(5);
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(anyhow!("need 0 < beta-min <= beta-max and at least one node"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    Ok((0..n).map(|k| lo * (k as f64 * step).exp()).collect())
}

struct Report<'a, P: Serialize> {
    command: &'static str,
    argv: &'a [String],
    params: &'a P,
    output: &'a OutputArgs,
    scene_hash: Option<String>,
    started: Instant,
    budget: Option<ErrorBudget>,
    result: serde_json::Value,
    warnings: Vec<String>,
}

impl<P: Serialize> Report<'_, P> {
    fn write(self, csv: &str) -> Outcome {
        for w in &self.warnings {
            log::warn(w);
        }
        let Some(path) = &self.output.out else {
            print!("{csv}");
            return Ok(());
        };
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        let workers =
            self.output.workers.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        let manifest = RunManifest {
            software: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: self.argv,
            scene_sha256: self.scene_hash,
            parameters: self.params,
            workers,
            wall_time_s: self.started.elapsed().as_secs_f64(),
            csv_sha256: sha256_hex(csv.as_bytes()),
            error_budget: self.budget,
            result: self.result,
            warnings: self.warnings,
        };
        let mpath = manifest_path(path);
        let json = serde_json::to_string_pretty(&manifest).context("serializing the manifest")?;
        std::fs::write(&mpath, json + "\n").with_context(|| format!("writing {}", mpath.display()))?;
        log::info(&format!("wrote {} and {}", path.display(), mpath.display()));
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn energy(a: &EnergyArgs, params: &Command, argv: &[String]) -> Outcome {
    let started = Instant::now();
    let (scene, hash) = read_scene(&a.scene)?;
    let loops = ensemble(&a.sampling, scene.dimension())?;
    let quad = QuadratureConfig {
        nodes_per_decade: a.nodes_per_decade,
        beta_min: a.beta.beta_min,
        beta_max: a.beta.beta_max,
        beta_nodes: a.beta.beta_nodes,
        ..QuadratureConfig::default()
    };
    let r = integrate_energy(&scene, &loops, &sampler(&a.sampling, a.output.workers), &quad)?;
    let mut csv = String::from("kind,beta,weight,value,error\n");
    for (node, est) in r.beta_grid.iter().zip(&r.spectral) {
        let _ = writeln!(csv, "node,{:e},{:e},{:e},{:e}", node.beta, node.weight, est.value, est.stderr);
    }
    let _ = writeln!(csv, "tail,,,{:e},{:e}", r.tail.value, r.tail.uncertainty);
    let _ = writeln!(csv, "energy,,,{:e},{:e}", r.value, r.total_error());
    log::info(&format!(
        "energy {:.8} ± {:.2e} (stat {:.1e}, quad {:.1e}, disc {:.1e})",
        r.value,
        r.total_error(),
        r.stat_error,
        r.quadrature_error,
        r.discretization_error
    ));
    Report {
        command: "energy",
        argv,
        params,
        output: &a.output,
        scene_hash: Some(hash),
        started,
        budget: Some(ErrorBudget {
            statistical: r.stat_error,
            quadrature: r.quadrature_error,
            discretization: r.discretization_error,
            total: r.total_error(),
        }),
        warnings: r.warnings.clone(),
        result: to_json(&r),
    }
    .write(&csv)
}

fn spectral(a: &SpectralArgs, params: &Command, argv: &[String]) -> Outcome {
    let started = Instant::now();
    let (scene, hash) = read_scene(&a.scene)?;
    let betas = beta_list(&a.betas, &a.beta)?;
    let loops = ensemble(&a.sampling, scene.dimension())?;
    let est = estimate_spectral_many(&scene, &loops, &betas, &sampler(&a.sampling, a.output.workers))?;
    let mut csv = String::from("beta,value,stderr,value_fine,value_coarse,loops,box_volume\n");
    for e in &est {
        let coarse = e.value_coarse.map(|c| format!("{c:e}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{:e},{:e},{:e},{:e},{},{},{:e}",
            e.beta, e.value, e.stderr, e.value_fine, coarse, e.n_loops, e.box_volume
        );
    }
    let stat = est.iter().map(|e| e.stderr).fold(0.0, f64::max);
    let disc = est.iter().map(|e| e.value_coarse.map_or(0.0, |c| (e.value_fine - c).abs())).fold(0.0, f64::max);
    Report {
        command: "spectral",
        argv,
        params,
        output: &a.output,
        scene_hash: Some(hash),
        started,
        budget: Some(ErrorBudget { statistical: stat, quadrature: 0.0, discretization: disc, total: stat + disc }),
        warnings: Vec::new(),
        result: to_json(&est),
    }
    .write(&csv)
}

/// Cutoff in units of the longest side that keeps the lattice sum below
/// about 2·10⁷ terms.
fn default_cutoff(lengths: &[f64]) -> f64 {
    let longest = lengths.iter().copied().fold(0.0, f64::max);
    let base = match lengths.len() {
        1 => 100_000.0,
        2 => 4000.0,
        3 => 250.0,
        4 => 60.0,
        _ => 20.0,
    };
    base * longest
}

fn oracle_rect(a: &OracleArgs, params: &Command, argv: &[String]) -> Outcome {
    let started = Instant::now();
    if a.lengths.len() != a.dim {
        return Err(anyhow!("--lengths has {} values for --dim {}", a.lengths.len(), a.dim).into());
    }
    let config = match (&a.n_max, a.cutoff) {
        (Some(k), _) => RectangleConfig::new(a.lengths.clone(), k.clone()),
        (None, Some(c)) => RectangleConfig::with_cutoff(a.lengths.clone(), c),
        (None, None) => RectangleConfig::with_cutoff(a.lengths.clone(), default_cutoff(&a.lengths)),
    }
    .context("rectangle configuration")?;
    let e = hrectangle_energy(&config).context("rectangle oracle")?;
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    let mut csv = String::from("dim,lengths,value,partial_sum,tail_bound\n");
    let _ = writeln!(csv, "{},{},{:e},{:e},{:e}", a.dim, join(&a.lengths), e.value, e.partial_sum, e.tail_bound);
    let mut result = serde_json::json!({ "energy": to_json(&e), "n_max": config.n_max });
    if let Some(axis) = a.collapse {
        let cutoff = a.cutoff.unwrap_or_else(|| default_cutoff(&a.lengths).min(40.0 * a.lengths[0].max(1.0)));
        let c = collapse_limit_check(&a.lengths, axis, cutoff).context("collapse check")?;
        for (eps, v) in c.epsilons.iter().zip(&c.energies) {
            let mut l = a.lengths.clone();
            l[axis] = *eps;
            let _ = writeln!(csv, "{},{},{:e},,", a.dim, join(&l), v);
        }
        let _ = writeln!(csv, "{},extrapolated,{:e},,{:e}", a.dim, c.extrapolated, c.relative_error * c.target.abs());
        let _ = writeln!(csv, "{},half lower-dimensional,{:e},,", a.dim, c.target);
        log::info(&format!(
            "collapse limit {:.8} vs {:.8} ({:.3}% off)",
            c.extrapolated,
            c.target,
            100.0 * c.relative_error
        ));
        result["collapse"] = to_json(&c);
        if !c.passed {
            return Err(Failure::Convergence(anyhow!(
                "collapse extrapolation misses its target by {:.2}%",
                100.0 * c.relative_error
            )));
        }
    }
    Report {
        command: "oracle-rect",
        argv,
        params,
        output: &a.output,
        scene_hash: None,
        started,
        budget: Some(ErrorBudget { quadrature: e.tail_bound, total: e.tail_bound, ..ErrorBudget::default() }),
        warnings: Vec::new(),
        result,
    }
    .write(&csv)
}

fn lab(a: &LabArgs, params: &Command, argv: &[String]) -> Outcome {
    let started = Instant::now();
    let (scene, hash) = read_scene(&a.scene)?;
    let betas = beta_list(&a.betas, &a.beta)?;
    let grid = GridConfig { spacing: a.spacing };
    let values = irreducible_with_budget(&scene, &grid, &betas)?;
    let mut csv = String::from("beta,value,grid_error\n");
    for v in &values {
        let _ = writeln!(csv, "{:e},{:e},{:e}", v.beta, v.value, v.grid_error);
    }
    let mut result = serde_json::json!({ "values": to_json(&values) });
    if a.decay {
        let fit = decay_check(&scene, &GridConfig { spacing: 0.5 * a.spacing }, &betas)?;
        log::info(&format!("decay slope {:.6} ({})", fit.slope, fit.verdict()));
        result["decay"] = to_json(&fit);
    }
    let grid_err = values.iter().map(|v| v.grid_error).fold(0.0, f64::max);
    Report {
        command: "lab",
        argv,
        params,
        output: &a.output,
        scene_hash: Some(hash),
        started,
        budget: Some(ErrorBudget { discretization: grid_err, total: grid_err, ..ErrorBudget::default() }),
        warnings: Vec::new(),
        result,
    }
    .write(&csv)
}

fn scatter(a: &ScatterArgs, params: &Command, argv: &[String]) -> Outcome {
    let started = Instant::now();
    let stack = PlateStack::new(a.positions.clone(), a.couplings.clone())?;
    let config = ScatteringConfig { tolerance: a.tol, max_panels: a.max_panels.max(1) };
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    let mut csv = String::from("positions,couplings,energy,quadrature_error\n");
    let mut worst = 0.0f64;
    let result = match &a.scan {
        None => {
            let e = irreducible_energy_1d(&stack, &config)?;
            worst = e.quadrature_error;
            let _ =
                writeln!(csv, "{},{},{:e},{:e}", join(&a.positions), join(&a.couplings), e.value, e.quadrature_error);
            to_json(&e)
        }
        Some(gaps) => {
            let scan = coincidence_scan(&stack, gaps, &config)?;
            for p in &scan {
                let mut pos = a.positions.clone();
                pos[1] = pos[0] + p.gap;
                worst = worst.max(p.quadrature_error);
                let _ = writeln!(csv, "{},{},{:e},{:e}", join(&pos), join(&a.couplings), p.energy, p.quadrature_error);
            }
            to_json(&scan)
        }
    };
    Report {
        command: "scatter1d",
        argv,
        params,
        output: &a.output,
        scene_hash: None,
        started,
        budget: Some(ErrorBudget { quadrature: worst, total: worst, ..ErrorBudget::default() }),
        warnings: Vec::new(),
        result,
    }
    .write(&csv)
}

fn lmin(a: &LminArgs, params: &Command, argv: &[String]) -> Outcome {
    let started = Instant::now();
    let (scene, hash) = read_scene(&a.scene)?;
    let l = estimate_lmin(&scene);
    let csv = format!("lmin,exact,method\n{:e},{},{}\n", l.value, l.exact, l.method);
    let warnings = if l.exact { Vec::new() } else { vec!["shortest tour from numerical search".to_string()] };
    Report {
        command: "lmin",
        argv,
        params,
        output: &a.output,
        scene_hash: Some(hash),
        started,
        budget: None,
        warnings,
        result: to_json(&l),
    }
    .write(&csv)
}
