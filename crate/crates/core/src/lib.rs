//! Compressive focal-plane-array imaging toolkit.
//!
//! An HR scene is encoded by a shifted binary coded aperture, blurred by the
//! relay lens, and box-downsampled onto an LR sensor once per snapshot. The
//! crate simulates those measurements ([`optics`], [`aperture`]), corrects
//! them for relay-lens blur with a learned calibration network or classical
//! baselines ([`calib`], built on [`tensornet`]), and reconstructs the HR scene
//! with a plug-and-play ADMM solver ([`recon`]) over explicit or
//! block-diagonal system matrices ([`sysmat`]).

pub mod aperture;
pub mod calib;
pub mod error;
pub mod image;
pub mod io;
pub mod linalg;
pub mod optics;
pub mod pipeline;
pub mod recon;
pub mod seeds;
pub mod sysmat;
pub mod tensornet;

pub use error::{Error, Result};
pub use image::{HrImage, Image, LrImage};
