//! Minimal neural-network toolkit with hand-written backward passes.

pub mod adam;
pub mod layers;
pub mod lstm;
pub mod param;
pub mod real;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv2d, ConvTranspose2d, Linear};
pub use lstm::{LstmCell, LstmStep};
pub use param::{Module, Param};
pub use real::Real;
