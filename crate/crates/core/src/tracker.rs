//! Two-stage online data association.
//!
//! Every frame the tracker predicts all live tracks, splits detections into
//! confident and low-confidence sets, and runs two assignment stages:
//!
//! 1. live (active and lost) tracks against confident detections, using
//!    either the motion/appearance fusion ([`Mode::FairMot`]) or that fusion
//!    combined with an IoU-times-confidence term ([`Mode::Yolo11Jde`]);
//! 2. leftover tracks against low-confidence plus leftover confident
//!    detections, using `1 - IoU` alone with a stricter threshold.
//!
//! Matched tracks receive a Kalman correction and an EMA appearance update.
//! Confident leftovers start new tracks. Unmatched tracks become lost and
//! are dropped once they have gone unmatched for more than `max_lost` frames.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assignment::{self, AssignmentResult};
use crate::error::{Error, Result};
use crate::geometry::{iou_raw, BBox};
use crate::kalman::{KalmanFilter, KalmanState, CHI2_95_4DOF};

/// Stage-1 cost path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Motion/appearance fusion only.
    FairMot,
    /// Fusion combined with IoU-confidence cost.
    #[default]
    Yolo11Jde,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::FairMot => "fairmot",
            Mode::Yolo11Jde => "yolo11jde",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fairmot" => Ok(Mode::FairMot),
            "yolo11jde" | "yolo11-jde" | "jde" => Ok(Mode::Yolo11Jde),
            other => Err(Error::invalid(format!("unknown tracker mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub det_high_thresh: f64,
    pub det_low_thresh: f64,
    pub new_track_thresh: f64,
    /// Weight of the cosine term against the normalized Mahalanobis term.
    pub lambda_app: f64,
    /// Weight of the fused cost against the IoU-confidence cost.
    pub w_fuse: f64,
    pub iou_gate: f64,
    pub stage1_match_thresh: f64,
    pub stage2_match_thresh: f64,
    pub ema_alpha: f64,
    pub max_lost: u32,
    pub gating_chi2: f64,
    pub emb_dim: usize,
    pub mode: Mode,
    /// When false, appearance is ignored even if embeddings are present.
    pub use_appearance: bool,
    pub kf_std_weight_position: f64,
    pub kf_std_weight_velocity: f64,
    /// Permits `det_low_thresh <= det_high_thresh <= new_track_thresh` to be violated.
    pub allow_threshold_override: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            det_high_thresh: 0.6,
            det_low_thresh: 0.1,
            new_track_thresh: 0.7,
            lambda_app: 0.98,
            w_fuse: 0.5,
            iou_gate: 0.15,
            stage1_match_thresh: 0.8,
            stage2_match_thresh: 0.5,
            ema_alpha: 0.9,
            max_lost: 30,
            gating_chi2: CHI2_95_4DOF,
            emb_dim: 128,
            mode: Mode::default(),
            use_appearance: true,
            kf_std_weight_position: 1.0 / 20.0,
            kf_std_weight_velocity: 1.0 / 160.0,
            allow_threshold_override: false,
        }
    }
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("det_high_thresh", self.det_high_thresh),
            ("det_low_thresh", self.det_low_thresh),
            ("new_track_thresh", self.new_track_thresh),
            ("lambda_app", self.lambda_app),
            ("w_fuse", self.w_fuse),
            ("iou_gate", self.iou_gate),
            ("ema_alpha", self.ema_alpha),
        ];
        for (key, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(key, format!("{v} is outside [0, 1]")));
            }
        }
        let positive = [
            ("stage1_match_thresh", self.stage1_match_thresh),
            ("stage2_match_thresh", self.stage2_match_thresh),
            ("gating_chi2", self.gating_chi2),
            ("kf_std_weight_position", self.kf_std_weight_position),
            ("kf_std_weight_velocity", self.kf_std_weight_velocity),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(key, format!("{v} must be finite and positive")));
            }
        }
        if self.emb_dim == 0 {
            return Err(config_err("emb_dim", "must be positive"));
        }
        if !self.allow_threshold_override
            && !(self.det_low_thresh <= self.det_high_thresh
                && self.det_high_thresh <= self.new_track_thresh)
        {
            return Err(config_err(
                "det_high_thresh",
                "expected det_low_thresh <= det_high_thresh <= new_track_thresh \
                 (set allow_threshold_override to bypass)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class_id: i64,
    /// Unit-norm appearance vector, or `None` in appearance-free mode.
    pub embedding: Option<Vec<f64>>,
}

impl Detection {
    /// Builds a detection, L2-normalizing the embedding.
    pub fn new(bbox: BBox, score: f64, class_id: i64, embedding: Option<Vec<f64>>) -> Result<Self> {
        bbox.validate()?;
        if !score.is_finite() {
            return Err(Error::invalid(format!("non-finite score {score}")));
        }
        let embedding = embedding.map(normalized).transpose()?;
        Ok(Detection {
            bbox,
            score,
            class_id,
            embedding,
        })
    }
}

/// L2-normalizes `v`; zero or non-finite vectors are rejected.
pub fn normalized(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::invalid(format!("embedding norm {norm} cannot be normalized")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Detections observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    /// Reserved for a probation lifecycle; new tracks currently start active.
    Tentative,
    Active,
    Lost,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub track_id: u64,
    pub kstate: KalmanState,
    pub smooth_emb: Option<Vec<f64>>,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    pub last_score: f64,
}

impl Track {
    /// Box implied by the current Kalman mean.
    pub fn bbox(&self) -> BBox {
        BBox::from_xyah(&self.kstate.measurement())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub track_id: u64,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: u32,
    /// Active tracks, sorted by id.
    pub outputs: Vec<TrackOutput>,
}

/// Which cost built a stage's matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    FairMotFusion,
    Yolo11JdeCombined,
    Iou,
}

impl CostKind {
    pub fn name(&self) -> &'static str {
        match self {
            CostKind::FairMotFusion => "fairmot",
            CostKind::Yolo11JdeCombined => "yolo11jde",
            CostKind::Iou => "iou",
        }
    }
}

/// Record of one assignment stage, kept when tracing is enabled.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub frame: u32,
    pub stage: u8,
    pub cost_kind: CostKind,
    pub appearance: bool,
    pub threshold: f64,
    pub cost: DMatrix<f64>,
    /// Track id and detection index (into the frame's detection list) per row/column.
    pub track_ids: Vec<u64>,
    pub det_indices: Vec<usize>,
    pub matches: Vec<(usize, usize)>,
}

pub fn cosine_cost(track_embs: &DMatrix<f64>, det_embs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if track_embs.ncols() != det_embs.ncols() {
        return Err(Error::invalid(format!(
            "embedding dimensions differ: {} vs {}",
            track_embs.ncols(),
            det_embs.ncols()
        )));
    }
    let dots = track_embs * det_embs.transpose();
    Ok(dots.map(|d| (1.0 - d).clamp(0.0, 2.0)))
}

/// `lambda · cos + (1 − lambda) · maha / chi2`, infinite where `maha > chi2`.
pub fn fuse_motion_appearance(
    cos: &DMatrix<f64>,
    maha: &DMatrix<f64>,
    cfg: &TrackerConfig,
) -> DMatrix<f64> {
    fuse_with(cos, maha, cfg.lambda_app, cfg.gating_chi2)
}

fn fuse_with(cos: &DMatrix<f64>, maha: &DMatrix<f64>, lambda: f64, chi2: f64) -> DMatrix<f64> {
    cos.zip_map(maha, |c, m| {
        if m > chi2 {
            f64::INFINITY
        } else {
            lambda * c + (1.0 - lambda) * (m / chi2)
        }
    })
}

/// `1 − iou · score`, infinite where `iou < iou_gate`.
pub fn iou_confidence_cost(iou: &DMatrix<f64>, scores: &[f64], cfg: &TrackerConfig) -> DMatrix<f64> {
    DMatrix::from_fn(iou.nrows(), iou.ncols(), |i, j| {
        let v = iou[(i, j)];
        if v < cfg.iou_gate {
            f64::INFINITY
        } else {
            1.0 - v * scores[j]
        }
    })
}

/// Convex combination of the fused and IoU-confidence costs. Infinite
/// entries in either input stay infinite.
pub fn stage1_cost(fused: &DMatrix<f64>, iou_conf: &DMatrix<f64>, cfg: &TrackerConfig) -> DMatrix<f64> {
    let w = cfg.w_fuse;
    fused.zip_map(iou_conf, |f, c| {
        if f.is_infinite() || c.is_infinite() {
            f64::INFINITY
        } else {
            w * f + (1.0 - w) * c
        }
    })
}

/// `normalize(alpha · smooth + (1 − alpha) · new)`; falls back to `new`
/// when the blend cancels out.
pub fn ema_update(smooth: &[f64], new: &[f64], alpha: f64) -> Vec<f64> {
    let blend: Vec<f64> = smooth
        .iter()
        .zip(new)
        .map(|(s, n)| alpha * s + (1.0 - alpha) * n)
        .collect();
    normalized(blend).unwrap_or_else(|_| new.to_vec())
}

/// Tracker for a single sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    kf: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
    trace: Option<Vec<StageTrace>>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        let kf = KalmanFilter::new(cfg.kf_std_weight_position, cfg.kf_std_weight_velocity);
        Ok(Tracker {
            cfg,
            kf,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            trace: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live (active and lost) tracks in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Number of identities created so far.
    pub fn created(&self) -> u64 {
        self.next_id - 1
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<StageTrace> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Processes one frame. Frame indices must be strictly increasing.
    pub fn step(&mut self, frame: u32, dets: &[Detection]) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::invalid(format!(
                    "frame {frame} does not follow frame {last}"
                )));
            }
        }
        let mut embs: Vec<Option<Vec<f64>>> = Vec::with_capacity(dets.len());
        for (k, d) in dets.iter().enumerate() {
            d.bbox.validate()?;
            if !d.score.is_finite() {
                return Err(Error::invalid(format!("detection {k}: non-finite score")));
            }
            embs.push(match &d.embedding {
                Some(e) if e.len() != self.cfg.emb_dim => {
                    return Err(Error::invalid(format!(
                        "detection {k}: embedding dimension {} != configured {}",
                        e.len(),
                        self.cfg.emb_dim
                    )))
                }
                Some(e) => Some(normalized(e.clone())?),
                None => None,
            });
        }
        self.last_frame = Some(frame);

        for t in &mut self.tracks {
            t.kstate = self.kf.predict(&t.kstate);
        }

        let high: Vec<usize> = (0..dets.len())
            .filter(|&k| dets[k].score >= self.cfg.det_high_thresh)
            .collect();
        let low: Vec<usize> = (0..dets.len())
            .filter(|&k| {
                dets[k].score >= self.cfg.det_low_thresh && dets[k].score < self.cfg.det_high_thresh
            })
            .collect();

        let pool: Vec<usize> = (0..self.tracks.len()).collect();
        let mut matched_det = vec![false; dets.len()];
        let mut matched_track = vec![false; self.tracks.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        // Stage 1.
        let (cost1, kind, appearance) = self.stage1_matrix(&pool, &high, dets, &embs)?;
        let res1 = assignment::solve(&cost1, self.cfg.stage1_match_thresh)?;
        self.record(frame, 1, kind, appearance, self.cfg.stage1_match_thresh, cost1, &pool, &high, &res1);
        for &(r, c) in &res1.matches {
            pairs.push((pool[r], high[c]));
            matched_track[pool[r]] = true;
            matched_det[high[c]] = true;
        }

        // Stage 2.
        let rem_tracks: Vec<usize> = pool.iter().copied().filter(|&t| !matched_track[t]).collect();
        let mut rem_dets: Vec<usize> = high
            .iter()
            .chain(&low)
            .copied()
            .filter(|&k| !matched_det[k])
            .collect();
        rem_dets.sort_unstable();
        let boxes: Vec<BBox> = rem_tracks.iter().map(|&t| self.tracks[t].bbox()).collect();
        let cost2 = DMatrix::from_fn(rem_tracks.len(), rem_dets.len(), |i, j| {
            1.0 - iou_raw(&boxes[i], &dets[rem_dets[j]].bbox)
        });
        let res2 = assignment::solve(&cost2, self.cfg.stage2_match_thresh)?;
        self.record(
            frame,
            2,
            CostKind::Iou,
            false,
            self.cfg.stage2_match_thresh,
            cost2,
            &rem_tracks,
            &rem_dets,
            &res2,
        );
        for &(r, c) in &res2.matches {
            pairs.push((rem_tracks[r], rem_dets[c]));
            matched_track[rem_tracks[r]] = true;
            matched_det[rem_dets[c]] = true;
        }

        for &(t, k) in &pairs {
            let z = dets[k].bbox.to_xyah()?;
            let track = &mut self.tracks[t];
            track.kstate = self.kf.update(&track.kstate, &z)?;
            track.smooth_emb = match (&track.smooth_emb, &embs[k]) {
                (Some(s), Some(e)) => Some(ema_update(s, e, self.cfg.ema_alpha)),
                (None, Some(e)) => Some(e.clone()),
                (s, None) => s.clone(),
            };
            track.status = TrackStatus::Active;
            track.frames_since_update = 0;
            track.last_score = dets[k].score;
        }

        for (t, track) in self.tracks.iter_mut().enumerate() {
            if matched_track[t] {
                continue;
            }
            track.frames_since_update += 1;
            track.status = if track.frames_since_update > self.cfg.max_lost {
                TrackStatus::Removed
            } else {
                TrackStatus::Lost
            };
        }
        self.tracks.retain(|t| t.status != TrackStatus::Removed);

        for &k in &rem_dets {
            if matched_det[k] || dets[k].score < self.cfg.new_track_thresh {
                continue;
            }
            let kstate = self.kf.initiate(&dets[k].bbox.to_xyah()?)?;
            self.tracks.push(Track {
                track_id: self.next_id,
                kstate,
                smooth_emb: embs[k].clone(),
                status: TrackStatus::Active,
                frames_since_update: 0,
                last_score: dets[k].score,
            });
            self.next_id += 1;
        }

        let outputs = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(|t| TrackOutput {
                track_id: t.track_id,
                bbox: t.bbox(),
                score: t.last_score,
            })
            .collect();
        Ok(FrameResult { frame, outputs })
    }

    fn stage1_matrix(
        &self,
        rows: &[usize],
        cols: &[usize],
        dets: &[Detection],
        embs: &[Option<Vec<f64>>],
    ) -> Result<(DMatrix<f64>, CostKind, bool)> {
        let kind = match self.cfg.mode {
            Mode::FairMot => CostKind::FairMotFusion,
            Mode::Yolo11Jde => CostKind::Yolo11JdeCombined,
        };
        let n = rows.len();
        let m = cols.len();
        let appearance = self.cfg.use_appearance
            && cols.iter().all(|&k| embs[k].is_some())
            && rows.iter().all(|&t| self.tracks[t].smooth_emb.is_some());
        if n == 0 || m == 0 {
            return Ok((DMatrix::zeros(n, m), kind, appearance));
        }

        let measurements = cols
            .iter()
            .map(|&k| dets[k].bbox.to_xyah())
            .collect::<Result<Vec<_>>>()?;
        let maha_rows: Vec<Vec<f64>> = rows
            .par_iter()
            .map(|&t| self.kf.gating_distance(&self.tracks[t].kstate, &measurements))
            .collect::<Result<_>>()?;
        let maha = DMatrix::from_fn(n, m, |i, j| maha_rows[i][j]);

        let (cos, lambda) = if appearance {
            let d = self.cfg.emb_dim;
            let te = DMatrix::from_fn(n, d, |i, c| self.tracks[rows[i]].smooth_emb.as_ref().unwrap()[c]);
            let de = DMatrix::from_fn(m, d, |j, c| embs[cols[j]].as_ref().unwrap()[c]);
            (cosine_cost(&te, &de)?, self.cfg.lambda_app)
        } else {
            (DMatrix::zeros(n, m), 0.0)
        };
        let fused = fuse_with(&cos, &maha, lambda, self.cfg.gating_chi2);

        let cost = match self.cfg.mode {
            Mode::FairMot => fused,
            Mode::Yolo11Jde => {
                let boxes: Vec<BBox> = rows.iter().map(|&t| self.tracks[t].bbox()).collect();
                let iou = DMatrix::from_fn(n, m, |i, j| iou_raw(&boxes[i], &dets[cols[j]].bbox));
                let scores: Vec<f64> = cols.iter().map(|&k| dets[k].score).collect();
                let conf = iou_confidence_cost(&iou, &scores, &self.cfg);
                stage1_cost(&fused, &conf, &self.cfg)
            }
        };
        Ok((cost, kind, appearance))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        frame: u32,
        stage: u8,
        cost_kind: CostKind,
        appearance: bool,
        threshold: f64,
        cost: DMatrix<f64>,
        rows: &[usize],
        cols: &[usize],
        res: &AssignmentResult,
    ) {
        let Some(trace) = self.trace.as_mut() else {
            return;
        };
        trace.push(StageTrace {
            frame,
            stage,
            cost_kind,
            appearance,
            threshold,
            cost,
            track_ids: rows.iter().map(|&t| self.tracks[t].track_id).collect(),
            det_indices: cols.to_vec(),
            matches: res.matches.clone(),
        });
    }
}

/// Wall-clock duration of each tracker step.
#[derive(Debug, Clone, Default)]
pub struct StepTimings {
    pub per_step: Vec<Duration>,
}

impl StepTimings {
    pub fn total(&self) -> Duration {
        self.per_step.iter().sum()
    }

    pub fn median(&self) -> Duration {
        let mut v = self.per_step.clone();
        if v.is_empty() {
            return Duration::ZERO;
        }
        v.sort_unstable();
        v[v.len() / 2]
    }

    /// Association steps per second over the whole run.
    pub fn steps_per_sec(&self) -> f64 {
        let secs = self.total().as_secs_f64();
        if secs > 0.0 {
            self.per_step.len() as f64 / secs
        } else {
            f64::INFINITY
        }
    }
}

/// Runs `tracker` over a detection stream, stepping every frame between the
/// first and last listed frame. Frames absent from `frames` are processed as
/// empty so lost-track counters advance.
pub fn run_sequence(
    tracker: &mut Tracker,
    frames: &[FrameDetections],
) -> Result<(Vec<FrameResult>, StepTimings)> {
    let mut results = Vec::new();
    let mut timings = StepTimings::default();
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Ok((results, timings));
    };
    let (first, last) = (first.frame, last.frame);
    let mut it = frames.iter().peekable();
    let empty: Vec<Detection> = Vec::new();
    for frame in first..=last {
        let dets = match it.peek() {
            Some(fd) if fd.frame == frame => &it.next().unwrap().detections,
            Some(fd) if fd.frame < frame => {
                return Err(Error::invalid(format!(
                    "detection frames out of order near frame {}",
                    fd.frame
                )))
            }
            _ => &empty,
        };
        let start = Instant::now();
        let res = tracker.step(frame, dets)?;
        timings.per_step.push(start.elapsed());
        results.push(res);
    }
    Ok((results, timings))
}
