//! On-disk formats: bag files, binary primitives, manifests, config files,
//! run records and attention-map images.

pub mod bagfile;
pub mod binary;
pub mod config;
pub mod manifest;
pub mod render;
pub mod run;

pub use bagfile::{decode_bag, encode_bag, read_bag, write_bag, BAG_MAGIC, BAG_VERSION};
pub use config::RunConfig;
pub use manifest::{load_cohort, read_manifest, write_manifest, ManifestEntry};
pub use render::{normalize_attention, render_attention, write_ppm, Image, DEFAULT_TILE_PX};
pub use run::{sha256_file, RunManifest};
