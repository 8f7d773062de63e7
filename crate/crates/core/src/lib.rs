//! Online tracking-by-detection association engine.
//!
//! The crate consumes per-frame detections that carry appearance embeddings
//! and maintains object identities across frames with a two-stage cascade of
//! Kalman-gated appearance matching followed by IoU matching. It also ships
//! the metric-learning machinery used to train such embeddings (triplet
//! mining and losses with analytic gradients), CLEAR/IDF1 evaluation, a
//! seeded synthetic sequence generator, and the text file formats that tie
//! these pieces together.

pub mod assignment;
pub mod error;
pub mod evalmot;
pub mod geometry;
pub mod io;
pub mod kalman;
pub mod metriclearn;
pub mod synth;
pub mod tracker;

pub use assignment::{solve, AssignmentResult};
pub use error::{Error, Result};
pub use evalmot::{ClearReport, FrameSet, LabeledBox};
pub use geometry::{iou, iou_matrix, BBox, Xyah};
pub use kalman::{KalmanFilter, KalmanState};
pub use metriclearn::{
    DiagnosticsReport, Distance, LossConfig, LossVariant, MiningStrategy, Reduction, Selection,
    Triplet, TripletBatch,
};
pub use synth::{Scenario, ScenarioConfig, SynthSequence};
pub use tracker::{
    Detection, FrameResult, Mode, Track, TrackOutput, TrackStatus, Tracker, TrackerConfig,
};
