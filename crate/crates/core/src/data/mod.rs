//! Synthetic soft-sphere scenes, their on-disk layout, the frame split
//! protocol and evaluation metrics.

mod dataset;
mod eval;
mod io;
mod metrics;
mod synth;

pub use dataset::{
    generate_dataset, load_dataset, n_test_scenes, n_train_test_frames, render_scene, synthesize, write_dataset,
    EvalSplit, Frame, Scene, SceneDataset, SceneSplit, SynthConfig,
};
pub use eval::{evaluate, score_frame, Aggregate, EvalConfig, EvalReport, EvalRow, FrameScore};
pub use io::{decode_pfm, dequantize_u8, encode_pfm, quantize_u8, read_pfm, read_png, write_pfm, write_png};
pub use metrics::{metric_iou, metric_l1_depth, metric_l1_rgb, DepthError};
pub use synth::{oracle_render, oracle_render_with, CameraRing, SoftSphere, SyntheticSceneSpec, ORACLE_SAMPLES};
