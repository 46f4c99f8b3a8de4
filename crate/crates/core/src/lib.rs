pub mod error;
pub mod fixtures;
mod fft;
pub mod imageio;
pub mod kernel;
pub mod lifting;
pub mod patches;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod skeleton;
pub mod spectral;
