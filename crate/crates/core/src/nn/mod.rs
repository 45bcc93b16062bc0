//! Network architectures built from the tape operations.

pub mod depth;
pub mod fan;
pub mod hourglass;
pub mod layers;
pub mod params;
pub mod session;

pub use depth::{heatmaps_to_image_resolution, DepthNet, DepthNetConfig, StageConfig};
pub use fan::{init_params, Fan, FanConfig, StemConfig};
pub use hourglass::{Hourglass, HourglassConfig};
pub use layers::{block_param_count, Block, BlockConfig, BlockKind};
pub use params::{Builder, ParamId, ParamStore, Parameter};
pub use session::{Mode, Session};
