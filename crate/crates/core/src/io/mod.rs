//! On-disk formats: binary PLY scenes and point clouds, 8-bit PNG images.

pub mod ply;
pub mod png;

pub use ply::{encode_scene, load_scene, read_point_cloud, save_scene, write_point_cloud};
pub use png::{read_image, write_image};
