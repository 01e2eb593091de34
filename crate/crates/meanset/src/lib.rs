pub mod boundary;
pub mod complex;
pub mod error;
pub mod geodesic;
pub mod heatmap;
pub mod kernel;
pub mod recognition;
