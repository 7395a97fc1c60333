//! Genetic column generation for multi-marginal optimal transport.
//!
//! A discrete multi-marginal transport problem is solved on a small working
//! set of configurations that is grown by one-coordinate mutations of the
//! current optimal plan, accepting a child only when it violates the current
//! dual constraint. Plans stay sparse throughout, which makes many-marginal
//! problems such as mesh-free barycenters and spline interpolation in
//! Wasserstein space tractable.
//!
//! The usual pipeline is [`init::nw_corner`] → [`engine::run`] →
//! [`engine::GenColState::certify`] → [`extract`].

pub mod baselines;
pub mod costs;
pub mod engine;
pub mod error;
pub mod extract;
pub mod init;
pub mod instances;
pub mod io;
pub mod lp;
pub mod measures;

pub use error::{Error, Result};
