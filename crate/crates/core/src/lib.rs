//! Synthetic near-field beams of few-mode step-index fibers, ground-truth
//! beam propagation factors by two independent numerical routes, and a
//! small convolutional network that regresses M² from one intensity image.

pub mod error;
pub mod fiber_modes;
pub mod special;

pub use error::{Error, ErrorClass, Result};
pub use fiber_modes::{FiberSpec, Grid, LpMode, ModeBasis, ModeField, Parity};
pub mod case;
pub mod field;
pub(crate) mod fft;
pub mod seed;

pub use case::ModeCase;
pub use field::{ComplexField, IntensityImage, ModalVector};
pub use rustfft::num_complex::Complex64;
pub mod beam_quality;
pub use beam_quality::{m2_direct, m2_effective, m2_vcm, m2_vcm_auto, prediction_error, Axis, M2Method, M2Result};
pub mod dataset;
pub use dataset::{generate_dataset, load_dataset, Dataset, DatasetManifest, DatasetParams, Generator, SampleRecord};
pub mod pgm;
pub mod regressor;
