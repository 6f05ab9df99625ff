pub mod baselines;
pub mod data_io;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod forward_map;
pub mod hopfield;
pub mod linalg;
pub mod patterns;
pub mod poe;
pub mod rbm;
pub mod reverse_map;
pub mod scalar;
pub mod seeding;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Hopfield = hopfield::HopfieldNetwork<f64>;
pub type Hopfield32 = hopfield::HopfieldNetwork<f32>;
pub type Rbm = rbm::GaussBernRbm<f64>;
pub type Rbm32 = rbm::GaussBernRbm<f32>;
pub type Binarization = reverse_map::BinarizationSolution<f64>;
pub type Experts = poe::ExpertEnsemble<f64>;
