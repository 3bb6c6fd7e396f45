//! Simulation and reconstruction for mask-based lensless cameras under
//! coded illumination.
//!
//! The imaging model is separable: a scene `X` (n×n) lit by a separable
//! pattern `P = p_l p_rᵀ` produces the sensor frame
//! `Y = Φ_L (P ⊙ X) Φ_Rᵀ` (m×m). Recovery solves the Tikhonov-regularized
//! least-squares problem over all frames through its normal equations
//! `Q = A_L X A_R + λX`, which only need three n×n buffers no matter how
//! many frames are acquired.
//!
//! - [`optics`] builds the MLS mask and the geometric system matrices.
//! - [`illumination`] generates the pattern families.
//! - [`forward`] simulates frames, sensor noise and binning.
//! - [`solver`] accumulates the normal equations and solves them, either in
//!   closed form or through the permuted block-diagonal system.
//! - [`metrics`] computes PSNR, the system spectrum and MTF contrast.

pub mod error;
pub mod forward;
pub mod illumination;
pub mod linalg;
pub mod metrics;
pub mod optics;
pub mod solver;

pub use error::{Error, Result};
pub use forward::{Channel, Measurement, NoiseSpec, SceneImage};
pub use illumination::{HadamardMode, PatternFamily, PatternSet};
pub use metrics::{Region, SpectrumReport};
pub use optics::{Axis, Geometry, MaskSpec, SystemMatrices};
pub use solver::{BlockSystem, EigenFactors, NormalAccumulator, Reconstruction, SolverKind};

/// Dense real matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
