//! Numerical laboratory for solitary waves of the two-component NLS system
//!
//! ```text
//!     i σ3 du/dt + Δu − β(|u|²) u = 0,   u(t,x) ∈ C², x ∈ R³ (periodic box)
//! ```
//!
//! The crate provides
//! * spectral field algebra on a periodic box ([`fields`]),
//! * the symmetry group R³×T×SU(2), its seven invariants and the energy
//!   ([`symmetry`]),
//! * a radial shooting solver for ground states φ_ω and the mass-curve
//!   slope check ([`groundstate`]),
//! * discrete spectra of the linearized operator with Krein-normalized
//!   internal modes ([`linearization`]),
//! * a symplectic split-step integrator ([`evolution`]),
//! * modulation coordinates near the soliton manifold and stability
//!   tracking ([`modulation`]),
//! * resonant index sets and the Fermi Golden Rule coefficient ([`fgr`]),
//! * configuration, persistence and report assembly for the `vnls`
//!   command line tool ([`config`], [`pipeline`]).

pub mod config;
pub mod error;
pub mod evolution;
pub mod fgr;
pub mod fields;
pub mod groundstate;
pub mod linearization;
pub mod modulation;
pub mod pipeline;
pub mod symmetry;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
