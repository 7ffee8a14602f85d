//! Worldline Monte Carlo for irreducible N-body Casimir energies.
//!
//! The [`engine`] estimates the alternating power-set sum of spectral
//! functions by sampling Brownian loops ([`loops`]) against a [`Scene`] and
//! integrates it over proper time. Everything it produces can be checked
//! against three independent references: finite-difference spectra
//! ([`lab`]), the hyper-rectangle lattice sum ([`oracles`]) and delta-plate
//! scattering determinants ([`scattering`]).

pub mod combinatorics;
pub mod engine;
pub mod geometry;
pub mod lab;
pub mod loops;
pub mod oracles;
pub mod quadrature;
pub mod scattering;
pub mod scene_file;
pub mod special;

pub use combinatorics::{CombinatoricsError, KillMode, SubsetIndex};
pub use engine::{
    estimate_kill_probability, estimate_lmin, estimate_spectral, estimate_spectral_many, integrate_energy,
    EnergyResult, EngineError, LminEstimate, QuadratureConfig, SamplerConfig, SpectralEstimate,
};
pub use geometry::{Aabb, GeometryError, Interaction, Object, Profile, Scene, Shape};
pub use lab::{GridConfig, LabError, Spectrum, SubsetSpectra};
pub use loops::{LoopEnsemble, LoopError, Scheme};
pub use oracles::{hrectangle_energy, OracleError, RectangleConfig, RectangleEnergy};
pub use scattering::{irreducible_energy_1d, PlateStack, ScatteringConfig, ScatteringError};
pub use scene_file::{parse_scene, render_scene, ParseError};

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loops(#[from] LoopError),
    #[error(transparent)]
    Combinatorics(#[from] CombinatoricsError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}
