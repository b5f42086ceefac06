//! Energy-efficient secure UAV relaying under uncertain eavesdropper locations.

mod block;
pub mod error;
pub mod pipeline;
pub mod power_speed;
pub mod report;
pub mod robust;
pub mod sca;
pub mod scenario;
pub mod solver;
pub mod traj_accel;

pub use block::{BlockOptions, BlockTrace, ScaPass};
pub use error::{Error, Result};
pub use scenario::*;
