//! Dataset manifests, annotation schemes, images, checkpoints and the
//! synthetic corpus generator.

pub mod checkpoint;
pub mod image;
pub mod manifest;
pub mod scheme;
pub mod synth;

pub use checkpoint::{
    load_checkpoint, load_depth, load_fan, save_checkpoint, CheckpointMeta, ModelConfig,
};
pub use image::Image;
pub use manifest::{load_manifest, read_records, write_manifest, Entry, Record};
pub use scheme::{synth12, Scheme, SchemeRegistry, SYNTH_SCHEME};
pub use synth::{synth_generate, write_corpus, SynthSample};
