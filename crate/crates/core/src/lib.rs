//! Spectral photon-counting CT on digital phantoms: acquisition simulation,
//! per-bin SART-TV reconstruction and ROI-wise material decomposition driven
//! by spatio-energy segmentation.

pub mod error;
pub mod materials;
pub mod phantom;
pub mod pipeline;
pub mod projector;
pub mod raster;
pub mod recon;
pub mod segmentation;
pub mod config;
pub mod decomp;
pub mod metrics;

pub use error::{Error, Result};
