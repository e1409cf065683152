//! Arrays, FFT convolution, seeded sampling, and reverse-mode gradients.

pub mod array;
pub mod autodiff;
pub mod dense;
pub mod fft;
pub mod gradcheck;
pub mod params;
pub mod rng;

pub use array::{Complex, ComplexSequence, RealArray};
pub use autodiff::{gradient_of, BackwardPass, Gradients, Tape, Var};
pub use fft::{fft_linear_convolve, Convolver};
pub use params::ParamSet;
pub use rng::{gaussian_sample, RngStream};
