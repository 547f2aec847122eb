pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod scalar;
pub mod spectral;
pub mod targets;
pub mod train;
