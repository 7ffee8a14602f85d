//! `wlcasimir`: worldline Casimir energies, spectral functions and reference
//! oracles from the command line.

mod commands;
mod log;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "wlcasimir", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Irreducible N-body energy of a scene from worldline loops.
    ///
    /// CSV columns: kind,beta,weight,value,error. One `node` row per proper
    /// time (value = φ̃(β), error = its standard error), one `tail` row for
    /// the fitted large-β remainder and a final `energy` row whose error is
    /// the total budget (statistical + quadrature + discretization).
    Energy(EnergyArgs),
    /// Irreducible spectral function φ̃(β) at the requested proper times.
    ///
    /// CSV columns: beta,value,stderr,value_fine,value_coarse,loops,box_volume.
    Spectral(SpectralArgs),
    /// Closed-form energy of 2d Dirichlet planes bounding a hyper-rectangle.
    ///
    /// CSV columns: dim,lengths,value,partial_sum,tail_bound. With
    /// `--collapse AXIS` one row per shrinking side length follows, then the
    /// extrapolated limit and its target.
    OracleRect(OracleArgs),
    /// Finite-difference spectral functions of every subset domain.
    ///
    /// CSV columns: beta,value,grid_error where value is the alternating
    /// subset sum at spacing h/2 and grid_error its change from spacing h.
    Lab(LabArgs),
    /// Delta-plate energies on a line from scattering determinants.
    ///
    /// CSV columns: positions,couplings,energy,quadrature_error. With
    /// `--scan` the second plate is moved to a_1 + gap for each gap.
    Scatter1d(ScatterArgs),
    /// Length of the shortest closed path touching every object.
    ///
    /// CSV columns: lmin,exact,method.
    Lmin(LminArgs),
}

/// Worldline sampling controls shared by `energy` and `spectral`.
#[derive(Debug, Args, Serialize)]
struct SamplingArgs {
    /// Number of loops L.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Points per loop M (a power of two for the bisection scheme).
    #[arg(long, default_value_t = 4096)]
    points: usize,
    /// Seed for loops and base points.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Bisection)]
    scheme: SchemeArg,
    /// Base points per loop and proper time when no closed-form kill volume exists.
    #[arg(long, default_value_t = 16)]
    x_samples: usize,
    /// Jackknife blocks.
    #[arg(long, default_value_t = 64)]
    blocks: usize,
    /// Skip the M → 2M resolution extrapolation.
    #[arg(long)]
    no_refine: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    Bisection,
    Incremental,
}

/// Proper-time grid controls.
#[derive(Debug, Args, Serialize)]
struct BetaArgs {
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    /// Number of logarithmically spaced proper times between the bounds.
    #[arg(long)]
    beta_nodes: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct OutputArgs {
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    workers: Option<usize>,
    /// CSV output path; the manifest goes next to it as `<PATH>.manifest.json`.
    /// Without it the CSV is written to stdout and no manifest is kept.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EnergyArgs {
    /// Scene file (`-` for stdin).
    scene: PathBuf,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    beta: BetaArgs,
    /// Proper-time nodes per decade of the adaptive grid.
    #[arg(long, default_value_t = 8)]
    nodes_per_decade: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct SpectralArgs {
    /// Scene file (`-` for stdin).
    scene: PathBuf,
    /// Proper time; repeat for several. Overrides the grid flags.
    #[arg(long = "beta")]
    betas: Vec<f64>,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    beta: BetaArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct OracleArgs {
    #[arg(long)]
    dim: usize,
    /// Side lengths, one per dimension.
    #[arg(long, num_args = 1.., required = true)]
    lengths: Vec<f64>,
    /// Lattice truncation per axis; defaults to a common length cutoff that
    /// keeps the tail bound near 1e-9 for unit sides.
    #[arg(long, num_args = 1..)]
    n_max: Option<Vec<usize>>,
    /// Common length cutoff Λ with `K_j = ⌈Λ/ℓ_j⌉`.
    #[arg(long, conflicts_with = "n_max")]
    cutoff: Option<f64>,
    /// Shrink this side through 1/2 .. 1/64 and extrapolate.
    #[arg(long)]
    collapse: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct LabArgs {
    /// Scene file with a bounding box (`-` for stdin).
    scene: PathBuf,
    /// Grid spacing h.
    #[arg(long)]
    spacing: f64,
    /// Proper time; repeat for several. Overrides the grid flags.
    #[arg(long = "beta")]
    betas: Vec<f64>,
    #[command(flatten)]
    beta: BetaArgs,
    /// Also fit ln|φ̃| against 1/β and record the slope in the manifest.
    #[arg(long)]
    decay: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct ScatterArgs {
    #[arg(long, num_args = 2..=3, required = true, allow_negative_numbers = true)]
    positions: Vec<f64>,
    #[arg(long, num_args = 2..=3, required = true)]
    couplings: Vec<f64>,
    /// Relative quadrature tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Panel budget of the adaptive quadrature (doubled for the check run).
    #[arg(long, default_value_t = 4000)]
    max_panels: usize,
    /// Gaps a_2 - a_1 to scan (three plates only).
    #[arg(long, num_args = 1..)]
    scan: Option<Vec<f64>>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args, Serialize)]
struct LminArgs {
    /// Scene file (`-` for stdin).
    scene: PathBuf,
    #[command(flatten)]
    output: OutputArgs,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            log::error(&failure.to_string());
            ExitCode::from(failure.exit_code())
        }
    }
}
