//! Kinematic-aware watermark embedding for dynamic Gaussian-splat scenes.
//!
//! Curvature of each primitive's trajectory gates how much watermark gradient
//! its appearance receives; resampled populations are aligned across frames
//! with entropic optimal transport; the message is decoded from the Haar LL
//! band of rendered views by a frozen linear probe.

pub mod attacks;
pub mod error;
pub mod exec;
pub mod energy;
pub mod io;
pub mod kinematics;
pub mod pde;
pub mod pipeline;
pub mod splat;
pub mod transport;
pub mod watermark;

pub use error::{Error, Result};
pub use exec::Execution;
