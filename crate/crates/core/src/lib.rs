//! Pedestrian road-crossing behaviour lab.
//!
//! A deterministic traffic and pedestrian simulator produces trial data; the
//! gap engine and feature extractor turn trials into tabular rows; a suite of
//! from-scratch models is evaluated with cross-validation, cross-country
//! transfer and cluster-based transfer strategies.

pub mod error;
pub mod eval;
pub mod features;
pub mod gaps;
pub mod io;
pub mod models;
pub mod rng;
pub mod sim;
pub mod transfer;

pub use error::{Error, Result};
