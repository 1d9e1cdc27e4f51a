//! Frequency-domain detection of adversarial image perturbations.
//!
//! The crate bundles everything needed to study spectral attack detection at
//! desk scale: a small differentiable CNN target, L∞ attacks (FGSM, PGD, a
//! square-patch random search, and a sequential cascade of them), 2D DFT
//! magnitude features extracted either from input images (black-box) or from
//! captured feature maps (white-box), from-scratch logistic-regression and
//! random-forest detectors, ASR/ASRD metrics, and a seeded experiment harness
//! with CSV/JSON/PGM outputs.

pub mod attacks;
pub mod data;
pub mod detectors;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod smallnet;
pub mod spectral;

pub use error::{Error, Result};
