//! Ingestion and persistence: pose JSON, Middlebury `.flo`, and color-wheel PNGs.

mod field;
mod flo;
mod pose;
mod render;

pub use field::{FlowField, MotionFieldStack};
pub use flo::{load_flow, read_flo, save_flow, write_flo, FLO_MAGIC};
pub use pose::{load_pose_sequence, save_pose_sequence, Keypoint, PoseSequence};
pub use render::{flow_hue, flow_to_image, hsv_to_rgb, render_flow_png};
