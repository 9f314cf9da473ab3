//! Monte Carlo ensemble of Brownian vortex filaments.
//!
//! A filament core is a Brownian path `X_t` on `[0, T]` thickened by a
//! cross-section measure `rho`. Its kinetic energy is the spectral integral
//! `H = int dnu(k) |p_k Y_{k,T}|^2` with `Y_{k,T} = int e^{ik.X_t} o dX_t` and
//! `dnu = |rho_hat|^2 / (2 |k|^2) dk / (2 pi)^3`; dropping the transverse projector
//! `p_k` gives the modified energy `H~ >= H`.
//!
//! The crate samples cores ([`paths`]), evaluates the spectral integrals on a
//! radial x angular wavenumber grid ([`kgrid`], [`spectral`], [`energy`]),
//! cross-checks them against configuration-space double integrals
//! ([`local_time`]) and reweights ensembles into Gibbs estimates ([`gibbs`]).

pub mod config;
pub mod cross_section;
pub mod energy;
pub mod error;
pub mod fastmath;
pub mod gibbs;
pub mod io;
pub mod kgrid;
pub mod local_time;
pub mod paths;
pub mod quadrature;
pub mod spectral;
pub mod vec3;
pub mod verify;

pub use config::RunConfig;
pub use cross_section::CrossSection;
pub use error::{Error, Result};
pub use kgrid::{KGrid, KGridSpec};
pub use paths::{Path, SeedSpec, TimeGrid};
pub use spectral::{Convention, FilamentTransform};
