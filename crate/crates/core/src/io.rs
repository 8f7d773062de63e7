//! Text file formats.
//!
//! MOT files: `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`.
//! Rows with 8 or 9 columns use the ground-truth layout
//! `frame,id,left,top,w,h,flag,class[,visibility]`; such a row is visible
//! when `flag != 0` and `class == 1`, otherwise it is a distractor.
//! Rows with 6 or 7 columns default `conf` to 1.
//!
//! Detection files, one record per line:
//! `frame,left,top,width,height,score,class_id[,e_1,...,e_D]`.
//! Seven fields means no embedding.
//!
//! Embedding batches, one sample per line: `label,confidence,e_1,...,e_D`.
//!
//! In every text format blank lines and lines starting with `#` are skipped.
//! Writers print floats with six decimals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evalmot::{FrameSet, LabeledBox};
use crate::geometry::BBox;
use crate::metriclearn::{Distance, LossConfig, LossVariant, Reduction, TripletBatch};
use crate::synth::{Scenario, ScenarioConfig};
use crate::tracker::{normalized, Detection, FrameDetections, FrameResult, Mode, TrackerConfig};

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn float(&self, field: &str, what: &str) -> Result<f64> {
        match field.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(format!("{what}: `{}` is not a finite number", field.trim()))),
        }
    }

    /// Integers, tolerating a `.0` suffix as written by some tools.
    fn int(&self, field: &str, what: &str) -> Result<i64> {
        let t = field.trim();
        if let Ok(v) = t.parse::<i64>() {
            return Ok(v);
        }
        match t.parse::<f64>() {
            Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
            _ => Err(self.err(format!("{what}: `{t}` is not an integer"))),
        }
    }

    fn frame(&self, field: &str) -> Result<u32> {
        let f = self.int(field, "frame")?;
        u32::try_from(f)
            .ok()
            .filter(|&f| f >= 1)
            .ok_or_else(|| self.err(format!("frame {f} must be a positive 32-bit index")))
    }

    fn bbox(&self, fields: &[&str]) -> Result<BBox> {
        let v = [
            self.float(fields[0], "bb_left")?,
            self.float(fields[1], "bb_top")?,
            self.float(fields[2], "bb_width")?,
            self.float(fields[3], "bb_height")?,
        ];
        BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| self.err(e.to_string()))
    }
}

/// Data lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "file is not valid UTF-8".into(),
        },
        _ => Error::Io(e),
    })
}

pub fn read_mot(path: &Path) -> Result<FrameSet> {
    parse_mot(path, &read_text(path)?)
}

pub fn parse_mot(path: &Path, text: &str) -> Result<FrameSet> {
    let mut set = FrameSet::new();
    for (line, rec) in records(text) {
        let ctx = LineCtx { path, line };
        let f: Vec<&str> = rec.split(',').collect();
        if !(6..=10).contains(&f.len()) {
            return Err(ctx.err(format!("expected 6 to 10 fields, found {}", f.len())));
        }
        let frame = ctx.frame(f[0])?;
        let id = ctx.int(f[1], "id")?;
        let bbox = ctx.bbox(&f[2..6])?;
        let (conf, visible) = match f.len() {
            8 | 9 => {
                let flag = ctx.float(f[6], "flag")?;
                let class = ctx.int(f[7], "class")?;
                if f.len() == 9 {
                    ctx.float(f[8], "visibility")?;
                }
                (flag, flag != 0.0 && class == 1)
            }
            6 => (1.0, true),
            _ => {
                for (k, extra) in f[7..].iter().enumerate() {
                    ctx.float(extra, ["x", "y", "z"][k])?;
                }
                (ctx.float(f[6], "conf")?, true)
            }
        };
        let row = LabeledBox {
            id,
            bbox,
            conf,
            visible,
        };
        if id < 0 {
            // Unlabeled detections share id -1.
            set.frames.entry(frame).or_default().push(row);
        } else {
            set.push(frame, row).map_err(|e| ctx.err(e.to_string()))?;
        }
    }
    Ok(set)
}

pub fn format_mot(set: &FrameSet) -> String {
    let mut out = String::new();
    for (frame, rows) in &set.frames {
        let mut rows: Vec<&LabeledBox> = rows.iter().collect();
        rows.sort_by_key(|r| r.id);
        for r in rows {
            let b = r.bbox;
            if r.visible {
                let _ = writeln!(
                    out,
                    "{frame},{},{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1",
                    r.id, b.x, b.y, b.w, b.h, r.conf
                );
            } else {
                // Distractors keep the ground-truth layout so they stay distractors.
                let _ = writeln!(
                    out,
                    "{frame},{},{:.6},{:.6},{:.6},{:.6},0,1,1.000000",
                    r.id, b.x, b.y, b.w, b.h
                );
            }
        }
    }
    out
}

pub fn write_mot(path: &Path, set: &FrameSet) -> Result<()> {
    Ok(fs::write(path, format_mot(set))?)
}

/// Detection records grouped by frame, ascending; file order kept within a
/// frame. Records without an embedding are accepted.
pub fn read_detections(path: &Path, emb_dim: usize) -> Result<Vec<FrameDetections>> {
    parse_detections(path, &read_text(path)?, emb_dim)
}

pub fn parse_detections(path: &Path, text: &str, emb_dim: usize) -> Result<Vec<FrameDetections>> {
    let mut frames: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for (line, rec) in records(text) {
        let ctx = LineCtx { path, line };
        let f: Vec<&str> = rec.split(',').collect();
        if f.len() < 7 {
            return Err(ctx.err(format!("expected at least 7 fields, found {}", f.len())));
        }
        let frame = ctx.frame(f[0])?;
        let bbox = ctx.bbox(&f[1..5])?;
        let score = ctx.float(f[5], "score")?;
        let class_id = ctx.int(f[6], "class_id")?;
        let embedding = if f.len() == 7 {
            None
        } else {
            if f.len() - 7 != emb_dim {
                return Err(ctx.err(format!(
                    "embedding has {} values, expected emb_dim = {emb_dim}",
                    f.len() - 7
                )));
            }
            let raw = f[7..]
                .iter()
                .map(|x| ctx.float(x, "embedding"))
                .collect::<Result<Vec<f64>>>()?;
            Some(normalized(raw).map_err(|e| ctx.err(e.to_string()))?)
        };
        frames.entry(frame).or_default().push(Detection {
            bbox,
            score,
            class_id,
            embedding,
        });
    }
    Ok(frames
        .into_iter()
        .map(|(frame, detections)| FrameDetections { frame, detections })
        .collect())
}

pub fn format_detections(frames: &[FrameDetections]) -> String {
    let mut sorted: Vec<&FrameDetections> = frames.iter().collect();
    sorted.sort_by_key(|f| f.frame);
    let mut out = String::new();
    for fd in sorted {
        for d in &fd.detections {
            let b = d.bbox;
            let _ = write!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                fd.frame, b.x, b.y, b.w, b.h, d.score, d.class_id
            );
            for e in d.embedding.iter().flatten() {
                let _ = write!(out, ",{e:.6}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_detections(path: &Path, frames: &[FrameDetections]) -> Result<()> {
    Ok(fs::write(path, format_detections(frames))?)
}

pub fn format_results(frames: &[FrameResult]) -> String {
    let mut sorted: Vec<&FrameResult> = frames.iter().collect();
    sorted.sort_by_key(|f| f.frame);
    let mut out = String::new();
    for fr in sorted {
        let mut outputs = fr.outputs.clone();
        outputs.sort_by_key(|o| o.track_id);
        for o in outputs {
            let b = o.bbox;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1",
                fr.frame, o.track_id, b.x, b.y, b.w, b.h, o.score
            );
        }
    }
    out
}

pub fn write_results(path: &Path, frames: &[FrameResult]) -> Result<()> {
    if let Some(fr) = frames.iter().find(|f| f.outputs.iter().any(|o| o.track_id == 0)) {
        return Err(Error::invalid(format!("track id 0 in frame {}", fr.frame)));
    }
    Ok(fs::write(path, format_results(frames))?)
}

pub fn read_embeddings(path: &Path) -> Result<TripletBatch> {
    parse_embeddings(path, &read_text(path)?)
}

/// Embedding batch; vectors are normalized on load and every line must have
/// the same dimension.
pub fn parse_embeddings(path: &Path, text: &str) -> Result<TripletBatch> {
    let mut labels = Vec::new();
    let mut confidences = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (line, rec) in records(text) {
        let ctx = LineCtx { path, line };
        let f: Vec<&str> = rec.split(',').collect();
        if f.len() < 3 {
            return Err(ctx.err(format!("expected label,confidence,embedding; found {} fields", f.len())));
        }
        let d = f.len() - 2;
        if *dim.get_or_insert(d) != d {
            return Err(ctx.err(format!("embedding has {d} values, earlier lines have {}", dim.unwrap())));
        }
        labels.push(ctx.int(f[0], "label")?);
        confidences.push(ctx.float(f[1], "confidence")?);
        let raw = f[2..]
            .iter()
            .map(|x| ctx.float(x, "embedding"))
            .collect::<Result<Vec<f64>>>()?;
        values.extend(normalized(raw).map_err(|e| ctx.err(e.to_string()))?);
    }
    let dim = dim.unwrap_or(0);
    let embs = DMatrix::from_row_slice(labels.len(), dim, &values);
    TripletBatch::new(embs, labels, confidences).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })
}

pub fn format_embeddings(batch: &TripletBatch) -> String {
    let mut out = String::new();
    for i in 0..batch.len() {
        let _ = write!(out, "{},{:.6}", batch.labels[i], batch.confidences[i]);
        for e in batch.embeddings.row(i).iter() {
            let _ = write!(out, ",{e:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings(path: &Path, batch: &TripletBatch) -> Result<()> {
    Ok(fs::write(path, format_embeddings(batch))?)
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTracker {
    det_high_thresh: Option<f64>,
    det_low_thresh: Option<f64>,
    new_track_thresh: Option<f64>,
    lambda_app: Option<f64>,
    w_fuse: Option<f64>,
    iou_gate: Option<f64>,
    stage1_match_thresh: Option<f64>,
    stage2_match_thresh: Option<f64>,
    ema_alpha: Option<f64>,
    max_lost: Option<i64>,
    gating_chi2: Option<f64>,
    emb_dim: Option<i64>,
    mode: Option<String>,
    use_appearance: Option<bool>,
    kf_std_weight_position: Option<f64>,
    kf_std_weight_velocity: Option<f64>,
    allow_threshold_override: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawLoss {
    margin: Option<f64>,
    variant: Option<String>,
    distance: Option<String>,
    weight: Option<f64>,
    confidence_keep_fraction: Option<f64>,
    reduction: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    scenario: Option<String>,
    n_objects: Option<i64>,
    n_frames: Option<i64>,
    frame_width: Option<f64>,
    frame_height: Option<f64>,
    det_drop_prob: Option<f64>,
    fp_rate: Option<f64>,
    box_jitter_std: Option<f64>,
    emb_noise_std: Option<f64>,
    emb_dim: Option<i64>,
    occlusion_gap: Option<i64>,
    seed: Option<i64>,
    with_embeddings: Option<bool>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    tracker: RawTracker,
    #[serde(default)]
    loss: RawLoss,
    #[serde(default)]
    scenario: RawScenario,
}

/// Scenario settings from a config document, applied on top of a preset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOverlay {
    pub scenario: Option<Scenario>,
    pub n_objects: Option<usize>,
    pub n_frames: Option<u32>,
    pub frame_size: (Option<f64>, Option<f64>),
    pub det_drop_prob: Option<f64>,
    pub fp_rate: Option<f64>,
    pub box_jitter_std: Option<f64>,
    pub emb_noise_std: Option<f64>,
    pub emb_dim: Option<usize>,
    pub occlusion_gap: Option<u32>,
    pub seed: Option<u64>,
    pub with_embeddings: Option<bool>,
}

impl ScenarioOverlay {
    /// Preset for the configured scenario (or `fallback`) with overrides applied.
    pub fn resolve(&self, fallback: Scenario) -> Result<ScenarioConfig> {
        let mut c = ScenarioConfig::preset(self.scenario.unwrap_or(fallback));
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(
            n_objects,
            n_frames,
            det_drop_prob,
            fp_rate,
            box_jitter_std,
            emb_noise_std,
            emb_dim,
            occlusion_gap,
            seed,
            with_embeddings
        );
        if let Some(w) = self.frame_size.0 {
            c.frame_size.0 = w;
        }
        if let Some(h) = self.frame_size.1 {
            c.frame_size.1 = h;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parsed configuration document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub tracker: TrackerConfig,
    /// Mode named explicitly in the document, if any.
    pub mode: Option<Mode>,
    pub loss: LossConfig,
    pub scenario: ScenarioOverlay,
    /// `table.key` names present in the document.
    pub explicit: BTreeSet<String>,
}

impl Config {
    /// Whether `key` (e.g. `"loss.margin"`) was set by the document.
    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }
}

pub fn read_config(path: &Path) -> Result<Config> {
    parse_config(path, &read_text(path)?)
}

fn key_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn ranged<T: TryFrom<i64>>(key: &str, v: Option<i64>, min: i64) -> Result<Option<T>> {
    v.map(|v| {
        if v < min {
            return Err(key_err(key, format!("{v} is below the minimum {min}")));
        }
        T::try_from(v).map_err(|_| key_err(key, format!("{v} is out of range")))
    })
    .transpose()
}

fn parsed<T: std::str::FromStr<Err = Error>>(key: &str, v: Option<String>) -> Result<Option<T>> {
    v.map(|s| s.parse::<T>().map_err(|e| key_err(key, e.to_string())))
        .transpose()
}

/// Parses a TOML document with optional `[tracker]`, `[loss]` and
/// `[scenario]` tables. Absent keys keep their defaults; unknown keys and
/// invalid values are errors naming the key.
pub fn parse_config(path: &Path, text: &str) -> Result<Config> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| toml_error(path, text, e))?;
    let mut cfg = Config::default();
    if let Ok(doc) = text.parse::<toml::Table>() {
        for (table, v) in &doc {
            if let Some(t) = v.as_table() {
                cfg.explicit.extend(t.keys().map(|k| format!("{table}.{k}")));
            }
        }
    }

    let t = raw.tracker;
    let tc = &mut cfg.tracker;
    macro_rules! set_f {
        ($dst:expr, $src:expr, $($f:ident),*) => { $(if let Some(v) = $src.$f { $dst.$f = v; })* };
    }
    set_f!(
        tc,
        t,
        det_high_thresh,
        det_low_thresh,
        new_track_thresh,
        lambda_app,
        w_fuse,
        iou_gate,
        stage1_match_thresh,
        stage2_match_thresh,
        ema_alpha,
        gating_chi2,
        use_appearance,
        kf_std_weight_position,
        kf_std_weight_velocity,
        allow_threshold_override
    );
    if let Some(v) = ranged("tracker.max_lost", t.max_lost, 0)? {
        tc.max_lost = v;
    }
    if let Some(v) = ranged("tracker.emb_dim", t.emb_dim, 1)? {
        tc.emb_dim = v;
    }
    cfg.mode = parsed("tracker.mode", t.mode)?;
    if let Some(m) = cfg.mode {
        tc.mode = m;
    }
    tc.validate().map_err(|e| prefix_key(e, "tracker"))?;

    let l = raw.loss;
    let lc = &mut cfg.loss;
    set_f!(lc, l, margin, weight, confidence_keep_fraction);
    if let Some(v) = parsed::<LossVariant>("loss.variant", l.variant)? {
        lc.variant = v;
    }
    if let Some(v) = parsed::<Distance>("loss.distance", l.distance)? {
        lc.distance = v;
    }
    if let Some(v) = parsed::<Reduction>("loss.reduction", l.reduction)? {
        lc.reduction = v;
    }
    lc.validate().map_err(|e| prefix_key(e, "loss"))?;

    let s = raw.scenario;
    cfg.scenario = ScenarioOverlay {
        scenario: parsed("scenario.scenario", s.scenario)?,
        n_objects: ranged("scenario.n_objects", s.n_objects, 0)?,
        n_frames: ranged("scenario.n_frames", s.n_frames, 1)?,
        frame_size: (s.frame_width, s.frame_height),
        det_drop_prob: s.det_drop_prob,
        fp_rate: s.fp_rate,
        box_jitter_std: s.box_jitter_std,
        emb_noise_std: s.emb_noise_std,
        emb_dim: ranged("scenario.emb_dim", s.emb_dim, 1)?,
        occlusion_gap: ranged("scenario.occlusion_gap", s.occlusion_gap, 0)?,
        seed: ranged("scenario.seed", s.seed, 0)?,
        with_embeddings: s.with_embeddings,
    };
    cfg.scenario
        .resolve(Scenario::Crossing)
        .map_err(|e| prefix_key(e, "scenario"))?;
    Ok(cfg)
}

fn prefix_key(e: Error, table: &str) -> Error {
    match e {
        Error::Config { key, msg } => key_err(&format!("{table}.{key}"), msg),
        other => other,
    }
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    Error::Parse {
        path: PathBuf::from(path),
        line,
        msg: e.message().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracker::TrackOutput;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.txt")
    }

    #[test]
    fn mot_example_line() {
        let set = parse_mot(p(), "1,1,10,20,30,40,1,-1,-1,-1\n").unwrap();
        let r = &set.frames[&1][0];
        assert_eq!(r.id, 1);
        assert_eq!(r.bbox, BBox::new(10.0, 20.0, 30.0, 40.0).unwrap());
        assert!(r.visible);
    }

    #[test]
    fn mot_empty_and_unsorted() {
        assert!(parse_mot(p(), "").unwrap().is_empty());
        let set = parse_mot(p(), "3,1,0,0,5,5,1,-1,-1,-1\n1,1,0,0,5,5,1,-1,-1,-1\n").unwrap();
        assert_eq!(set.frames.keys().copied().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn mot_gt_visibility_columns() {
        let text = "1,1,0,0,5,5,1,1,0.8\n1,2,0,0,5,5,0,1,1.0\n1,3,0,0,5,5,1,7,1.0\n";
        let set = parse_mot(p(), text).unwrap();
        let vis: Vec<bool> = set.frames[&1].iter().map(|r| r.visible).collect();
        assert_eq!(vis, vec![true, false, false]);
    }

    #[test]
    fn mot_errors_carry_line_numbers() {
        let text = "1,1,0,0,5,5,1,-1,-1,-1\n# note\n1,2,0,0,abc,5,1,-1,-1,-1\n";
        match parse_mot(p(), text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_mot(p(), "0,1,0,0,5,5"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_mot(p(), "1,1,0,0,5"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_mot(p(), "1,1,0,0,5,5\n1,1,2,2,5,5"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn detections_normalized_on_load() {
        let text = "2,0,0,10,10,0.9,0,2,0,0\n1,0,0,10,10,0.9,0,0,1,0\n";
        let frames = parse_detections(p(), text, 3).unwrap();
        assert_eq!(frames[0].frame, 1);
        assert_eq!(frames[0].detections[0].embedding.as_deref(), Some(&[0.0, 1.0, 0.0][..]));
        let e = frames[1].detections[0].embedding.as_ref().unwrap();
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn detection_errors() {
        assert!(matches!(
            parse_detections(p(), "1,0,0,10,10,0.9,0,1,0\n", 3),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_detections(p(), "\n1,0,0,10,10,0.9,0,0,0,0\n", 3),
            Err(Error::Parse { line: 2, .. })
        ));
        let frames = parse_detections(p(), "1,0,0,10,10,0.9,3\n", 3).unwrap();
        assert!(frames[0].detections[0].embedding.is_none());
    }

    #[test]
    fn results_format() {
        let out = |id| TrackOutput {
            track_id: id,
            bbox: BBox::new(1.0, 2.0, 3.0, 4.0).unwrap(),
            score: 0.5,
        };
        let frames = vec![
            FrameResult { frame: 4, outputs: vec![out(2), out(1)] },
            FrameResult { frame: 3, outputs: vec![out(7)] },
        ];
        let text = format_results(&frames);
        assert_eq!(
            text,
            "3,7,1.000000,2.000000,3.000000,4.000000,0.500000,-1,-1,-1\n\
             4,1,1.000000,2.000000,3.000000,4.000000,0.500000,-1,-1,-1\n\
             4,2,1.000000,2.000000,3.000000,4.000000,0.500000,-1,-1,-1\n"
        );
        assert_eq!(format_results(&[]), "");
        assert_eq!(parse_mot(p(), &text).unwrap().len(), 3);
    }

    #[test]
    fn embeddings_roundtrip() {
        let text = "0,0.9,1,0\n0,0.5,0,2\n3,0.1,0.6,0.8\n";
        let batch = parse_embeddings(p(), text).unwrap();
        assert_eq!(batch.labels, vec![0, 0, 3]);
        assert_eq!(batch.embeddings[(1, 1)], 1.0);
        let again = parse_embeddings(p(), &format_embeddings(&batch)).unwrap();
        assert_eq!(again, batch);
        assert!(parse_embeddings(p(), "0,0.9,1,0\n1,0.9,1\n").is_err());
    }

    #[test]
    fn config_defaults() {
        let cfg = parse_config(p(), "").unwrap();
        assert_eq!(cfg.loss.margin, 0.075);
        assert_eq!(cfg.tracker.max_lost, 30);
        assert_eq!(cfg.tracker.emb_dim, 128);
        assert_eq!(cfg, Config::default());
    }

    fn key_of(r: Result<Config>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_names_keys() {
        assert_eq!(key_of(parse_config(p(), "[tracker]\nmax_lost = -1\n")), "tracker.max_lost");
        assert_eq!(key_of(parse_config(p(), "[tracker]\nlambda_app = 1.5\n")), "tracker.lambda_app");
        assert_eq!(key_of(parse_config(p(), "[tracker]\nmode = \"sort\"\n")), "tracker.mode");
        assert_eq!(key_of(parse_config(p(), "[loss]\nmargin = -0.1\n")), "loss.margin");
        assert_eq!(
            key_of(parse_config(p(), "[scenario]\nscenario = \"occlusion\"\nocclusion_gap = 500\n")),
            "scenario.occlusion_gap"
        );
    }

    #[test]
    fn config_unknown_key_rejected() {
        let e = parse_config(p(), "[tracker]\nmax_lots = 3\n").unwrap_err();
        assert!(e.to_string().contains("max_lots"), "{e}");
        assert!(parse_config(p(), "[trakcer]\n").is_err());
    }

    #[test]
    fn config_overrides() {
        let cfg = parse_config(
            p(),
            "[tracker]\nmode = \"fairmot\"\nmax_lost = 5\n[loss]\nvariant = \"swap\"\n\
             [scenario]\nscenario = \"crowded\"\nseed = 9\nemb_noise_std = 0.1\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Some(Mode::FairMot));
        assert!(cfg.is_explicit("tracker.max_lost") && !cfg.is_explicit("tracker.lambda_app"));
        assert_eq!(cfg.tracker.max_lost, 5);
        assert_eq!(cfg.loss.variant, LossVariant::Swap);
        let sc = cfg.scenario.resolve(Scenario::Crossing).unwrap();
        assert_eq!(sc.scenario, Scenario::Crowded);
        assert_eq!((sc.seed, sc.emb_noise_std), (9, 0.1));
    }

    fn arb_set() -> impl Strategy<Value = FrameSet> {
        prop::collection::vec(
            (1u32..20, 0i64..6, -50.0..500.0f64, -50.0..500.0f64, 1.0..80.0f64, 1.0..80.0f64, 0.0..1.0f64, any::<bool>()),
            0..40,
        )
        .prop_map(|rows| {
            let mut set = FrameSet::new();
            for (f, id, x, y, w, h, conf, visible) in rows {
                let conf = if visible { conf } else { 0.0 };
                let _ = set.push(f, LabeledBox { id, bbox: BBox { x, y, w, h }, conf, visible });
            }
            set
        })
    }

    fn close(a: &BBox, b: &BBox) -> bool {
        [(a.x, b.x), (a.y, b.y), (a.w, b.w), (a.h, b.h)].iter().all(|(u, v)| (u - v).abs() <= 1e-6)
    }

    proptest! {
        #[test]
        fn mot_roundtrip(set in arb_set()) {
            let back = parse_mot(p(), &format_mot(&set)).unwrap();
            prop_assert_eq!(back.len(), set.len());
            for (f, rows) in &set.frames {
                for r in rows {
                    let b = back.frames[f].iter().find(|b| b.id == r.id).unwrap();
                    prop_assert!(close(&b.bbox, &r.bbox));
                    prop_assert_eq!(b.visible, r.visible);
                    prop_assert!((b.conf - r.conf).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn parsers_never_panic(text in "[0-9a-z,.#\\-\\n \\[\\]=\"]{0,200}") {
            let _ = parse_mot(p(), &text);
            let _ = parse_detections(p(), &text, 2);
            let _ = parse_embeddings(p(), &text);
            let _ = parse_config(p(), &text);
        }

        #[test]
        fn numeric_fuzz_never_panics(fields in prop::collection::vec("-?[0-9]{0,12}(\\.[0-9]{0,8})?(e[0-9]{1,3})?|nan|inf", 0..14)) {
            let line = fields.join(",");
            let _ = parse_mot(p(), &line);
            let _ = parse_detections(p(), &line, 4);
            let _ = parse_embeddings(p(), &line);
        }
    }
}
