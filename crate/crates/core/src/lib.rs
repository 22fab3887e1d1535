//! Burst feature detection.
//!
//! Keypoints are found as joint extrema over position, scale and apparent
//! motion: every burst is averaged along a grid of putative slopes (a motion
//! stack), each stack image is band-passed with a difference-of-Gaussians
//! scale space, and extrema are searched in the resulting 4D/5D volume.
//! Descriptors are computed on the motion-stack image at the keypoint's
//! slope, where SNR is highest.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod describe;
pub mod detect;
pub mod error;
pub mod eval;
pub mod features_io;
pub mod image;
pub mod matching;
pub mod motion;
pub mod scale_space;
pub mod synth;

pub use error::{Error, Result};
pub use image::{image_stats, load_image, save_pgm, save_png, subtract_bias, BitDepth, Burst, Image, ImageStats, Rect};
pub use motion::{build_motion_stack, shift_sum, MotionStack, SlopeGrid};
pub use scale_space::{build_dog, build_gaussian_pyramid, gaussian_blur, DogPyramid, GaussianPyramid, ScaleSpaceParams};
pub use detect::{detect, detect_sift_baseline, DetectorMode, DetectorParams, Keypoint, PipelineOrder};
pub use describe::{assign_orientations, compute_descriptor, describe_keypoints, description_image, detect_and_describe, Descriptor, DescriptionSource, Feature, PyramidCache, DESCRIPTOR_LEN};
pub use matching::{match_descriptors, Match, MatchOptions};
pub use eval::{
    burst_size_sweep, calibrate_noise, classify_detections, compute_match_metrics, describe_method, detect_method, roc_from_detections,
    roc_sweep, select_peak_threshold, sweep_to_csv, threshold_ladder, ClassificationResult, EvalConfig, Method, MethodRoc, MetricsReport,
    RocCurve, RocPoint, Scene, SceneParams, SweepRow, ThresholdSelection, Tolerance,
};
pub use features_io::{
    export_features_text, format_features_text, parse_features_text, read_features_text, read_matches, read_native, write_native,
    ExportedFeature,
};
