//! Maxwell–Bloch model of Raman-resonant four-wave mixing in a coherently
//! driven molecular medium, with relative-phase control by thin plates.

pub mod bloch;
pub mod coherence;
pub mod design;
pub mod error;
pub mod medium;
pub mod optimizer;
pub mod plates;
pub mod propagation;
pub mod scenario;
pub mod schedule;
pub mod spectrum;
pub mod units;

pub use error::{RamanError, Result};
