//! Ultrasound simulation from CT Hounsfield maps, homomorphic despeckling
//! with TV/NLM/BM3D, and a small multi-resolution CNN trained to imitate
//! the despecklers or to regress the CT image directly.

pub mod acoustic;
pub mod bench;
pub mod cnn;
pub mod demod;
pub mod denoise;
pub mod dicom;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod homomorphic;
pub mod io;
pub mod phantom;
pub mod seed;
pub mod sim;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{Boundary, ComplexGrid, Kernel2D, RealGrid};
