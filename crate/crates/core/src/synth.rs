//! Seeded synthetic sequences: ground truth plus noisy detections with
//! embeddings.
//!
//! Each identity owns a fixed unit prototype embedding; emitted embeddings
//! are `normalize(prototype + N(0, emb_noise_std²) per component)`.
//! Prototypes are orthonormal whenever there are no more identities than
//! embedding dimensions.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::evalmot::{FrameSet, LabeledBox};
use crate::geometry::BBox;
use crate::tracker::{normalized, Detection, FrameDetections};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Pairs of same-sized objects passing through a shared point with equal
    /// speed at a shallow angle; each pair has its own crossing point.
    Crossing,
    /// Linear lanes; identity 1 disappears for `occlusion_gap` frames.
    Occlusion,
    /// Many objects on straight paths between random points.
    Crowded,
    /// Horizontal drift with sinusoidal vertical motion.
    NonLinear,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::Crossing,
        Scenario::Occlusion,
        Scenario::Crowded,
        Scenario::NonLinear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Crossing => "crossing",
            Scenario::Occlusion => "occlusion",
            Scenario::Crowded => "crowded",
            Scenario::NonLinear => "nonlinear",
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s.to_ascii_lowercase().replace(['-', '_'], ""))
            .ok_or_else(|| Error::invalid(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_objects: usize,
    pub n_frames: u32,
    /// Width and height in pixels.
    pub frame_size: (f64, f64),
    pub det_drop_prob: f64,
    /// Expected false positives per frame.
    pub fp_rate: f64,
    pub box_jitter_std: f64,
    pub emb_noise_std: f64,
    pub emb_dim: usize,
    pub occlusion_gap: u32,
    pub seed: u64,
    /// When false, detections carry no embeddings.
    pub with_embeddings: bool,
}

impl ScenarioConfig {
    /// Noise-free defaults for `scenario`.
    pub fn preset(scenario: Scenario) -> Self {
        let (n_objects, n_frames, occlusion_gap) = match scenario {
            Scenario::Crossing => (10, 120, 0),
            Scenario::Occlusion => (4, 150, 20),
            Scenario::Crowded => (40, 200, 0),
            Scenario::NonLinear => (6, 200, 0),
        };
        ScenarioConfig {
            scenario,
            n_objects,
            n_frames,
            frame_size: (1920.0, 1080.0),
            det_drop_prob: 0.0,
            fp_rate: 0.0,
            box_jitter_std: 0.0,
            emb_noise_std: 0.0,
            emb_dim: 128,
            occlusion_gap,
            seed: 0,
            with_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: String| Error::Config { key: key.into(), msg };
        if !(0.0..=1.0).contains(&self.det_drop_prob) {
            return Err(err("det_drop_prob", format!("{} is outside [0, 1]", self.det_drop_prob)));
        }
        for (key, v) in [
            ("fp_rate", self.fp_rate),
            ("box_jitter_std", self.box_jitter_std),
            ("emb_noise_std", self.emb_noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(err(key, format!("{v} must be finite and non-negative")));
            }
        }
        if self.n_frames == 0 {
            return Err(err("n_frames", "must be positive".into()));
        }
        if self.emb_dim == 0 {
            return Err(err("emb_dim", "must be positive".into()));
        }
        let (w, h) = self.frame_size;
        if !(w >= 320.0 && h >= 240.0 && w.is_finite() && h.is_finite()) {
            return Err(err("frame_size", format!("{w}x{h} is smaller than 320x240")));
        }
        if self.occlusion_gap >= self.n_frames {
            return Err(err(
                "occlusion_gap",
                format!("{} must be below n_frames = {}", self.occlusion_gap, self.n_frames),
            ));
        }
        if self.scenario == Scenario::Occlusion && self.occlusion_gap + 2 > self.n_frames {
            return Err(err(
                "occlusion_gap",
                "needs at least one visible frame before and after the gap".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub gt: FrameSet,
    /// One entry per frame `1..=n_frames`, possibly empty.
    pub detections: Vec<FrameDetections>,
    pub prototypes: Vec<Vec<f64>>,
}

/// Top-left trajectory of one object.
struct Object {
    w: f64,
    h: f64,
    /// Center position at frame `t`.
    path: Box<dyn Fn(f64) -> (f64, f64)>,
    hidden: Option<(u32, u32)>,
}

pub fn generate(cfg: &ScenarioConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes = prototypes(&mut rng, cfg.n_objects, cfg.emb_dim);
    let objects = layout(&mut rng, cfg);
    let (fw, fh) = cfg.frame_size;

    let jitter = Normal::new(0.0, cfg.box_jitter_std).expect("validated std");
    let emb_noise = Normal::new(0.0, cfg.emb_noise_std).expect("validated std");
    let fp_count = (cfg.fp_rate > 0.0).then(|| Poisson::new(cfg.fp_rate).expect("validated rate"));

    let mut gt = FrameSet::new();
    let mut detections = Vec::with_capacity(cfg.n_frames as usize);
    for frame in 1..=cfg.n_frames {
        let t = frame as f64;
        let mut dets = Vec::new();
        for (k, obj) in objects.iter().enumerate() {
            if obj.hidden.is_some_and(|(a, b)| (a..=b).contains(&frame)) {
                continue;
            }
            let (cx, cy) = (obj.path)(t);
            let x = (cx - obj.w / 2.0).clamp(0.0, fw - obj.w);
            let y = (cy - obj.h / 2.0).clamp(0.0, fh - obj.h);
            let truth = BBox::new(x, y, obj.w, obj.h)?;
            gt.push(
                frame,
                LabeledBox {
                    id: k as i64 + 1,
                    bbox: truth,
                    conf: 1.0,
                    visible: true,
                },
            )?;

            if cfg.det_drop_prob > 0.0 && rng.random::<f64>() < cfg.det_drop_prob {
                continue;
            }
            let bbox = if cfg.box_jitter_std > 0.0 {
                BBox {
                    x: truth.x + jitter.sample(&mut rng),
                    y: truth.y + jitter.sample(&mut rng),
                    w: (truth.w + jitter.sample(&mut rng)).max(1.0),
                    h: (truth.h + jitter.sample(&mut rng)).max(1.0),
                }
            } else {
                truth
            };
            let score = rng.random_range(0.8..1.0);
            let embedding = cfg.with_embeddings.then(|| {
                if cfg.emb_noise_std > 0.0 {
                    let noisy = prototypes[k].iter().map(|p| p + emb_noise.sample(&mut rng)).collect();
                    normalized(noisy).unwrap_or_else(|_| prototypes[k].clone())
                } else {
                    prototypes[k].clone()
                }
            });
            dets.push(Detection::new(bbox, score, 0, embedding)?);
        }

        if let Some(p) = &fp_count {
            let n = p.sample(&mut rng) as usize;
            for _ in 0..n {
                let h = rng.random_range(40.0..160.0);
                let w = h * rng.random_range(0.3..0.6);
                let bbox = BBox::new(rng.random_range(0.0..fw - w), rng.random_range(0.0..fh - h), w, h)?;
                let score = rng.random_range(0.1..0.75);
                let embedding = cfg.with_embeddings.then(|| random_unit(&mut rng, cfg.emb_dim));
                dets.push(Detection::new(bbox, score, 0, embedding)?);
            }
        }
        dets.shuffle(&mut rng);
        detections.push(FrameDetections {
            frame,
            detections: dets,
        });
    }
    Ok(SynthSequence {
        gt,
        detections,
        prototypes,
    })
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec<f64> = (0..dim).map(|_| std.sample(rng)).collect();
        if let Ok(u) = normalized(v) {
            return u;
        }
    }
}

/// Random prototypes, Gram-Schmidt orthonormalized while `n <= dim`.
fn prototypes(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v = random_unit(rng, dim);
        if out.len() < dim {
            for _ in 0..2 {
                for b in &out {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            v = normalized(v).unwrap_or_else(|_| random_unit(rng, dim));
        }
        out.push(v);
    }
    out
}

fn layout(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> Vec<Object> {
    let (fw, fh) = cfg.frame_size;
    let n = cfg.n_objects;
    let frames = cfg.n_frames as f64;
    let size = |rng: &mut ChaCha8Rng| {
        let h = rng.random_range(60.0..140.0f64).min(fh / 3.0);
        (h * rng.random_range(0.35..0.5), h)
    };
    let mut objects = Vec::with_capacity(n);

    match cfg.scenario {
        Scenario::Crossing => {
            let pairs = n.div_ceil(2).max(1);
            let band = fw / pairs as f64;
            for p in 0..pairs {
                let (w, h) = size(rng);
                let speed = rng.random_range(2.0..3.5);
                let half_angle = rng.random_range(8.0..14.0f64).to_radians();
                let tc = frames / 2.0 + rng.random_range(-frames / 10.0..=frames / 10.0);
                let center = (band * (p as f64 + 0.5), rng.random_range(fh * 0.3..fh * 0.7));
                let (vx, vy) = (speed * half_angle.cos(), speed * half_angle.sin());
                for sign in [1.0, -1.0] {
                    if objects.len() == n {
                        break;
                    }
                    let (c, vy) = (center, sign * vy);
                    objects.push(Object {
                        w,
                        h,
                        path: Box::new(move |t| (c.0 + vx * (t - tc), c.1 + vy * (t - tc))),
                        hidden: None,
                    });
                }
            }
        }
        Scenario::Occlusion | Scenario::Crowded => {
            let lanes = cfg.scenario == Scenario::Occlusion;
            for k in 0..n {
                let (w, h) = size(rng);
                let (start, end) = if lanes {
                    let lane_h = fh / n.max(1) as f64;
                    let y = (lane_h * (k as f64 + 0.5)).clamp(h / 2.0, fh - h / 2.0);
                    let x0 = rng.random_range(w..fw / 2.0);
                    let travel = rng.random_range(0.5..2.0) * frames;
                    ((x0, y), ((x0 + travel).min(fw - w), y))
                } else {
                    let speed = rng.random_range(0.5..3.0);
                    let angle = rng.random_range(0.0..2.0 * PI);
                    let span = (frames - 1.0).max(0.0);
                    let (mut dx, mut dy) = (speed * angle.cos() * span, speed * angle.sin() * span);
                    let fit = [(fw - w) / dx.abs(), (fh - h) / dy.abs(), 1.0]
                        .into_iter()
                        .fold(f64::INFINITY, f64::min);
                    dx *= fit;
                    dy *= fit;
                    let coord = |rng: &mut ChaCha8Rng, d: f64, half: f64, full: f64| {
                        let lo = half + (-d).max(0.0);
                        let hi = full - half - d.max(0.0);
                        if hi > lo { rng.random_range(lo..hi) } else { lo }
                    };
                    let x = coord(rng, dx, w / 2.0, fw);
                    let y = coord(rng, dy, h / 2.0, fh);
                    ((x, y), (x + dx, y + dy))
                };
                let hidden = (lanes && k == 0 && cfg.occlusion_gap > 0).then(|| {
                    let first = ((cfg.n_frames - cfg.occlusion_gap) / 2).max(2);
                    (first, first + cfg.occlusion_gap - 1)
                });
                objects.push(Object {
                    w,
                    h,
                    path: Box::new(move |t| {
                        let s = (t - 1.0) / (frames - 1.0).max(1.0);
                        (start.0 + (end.0 - start.0) * s, start.1 + (end.1 - start.1) * s)
                    }),
                    hidden,
                });
            }
        }
        Scenario::NonLinear => {
            for k in 0..n {
                let (w, h) = size(rng);
                let amp = rng.random_range(10.0..30.0);
                let period = rng.random_range(40.0..80.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                let lane_h = fh / n.max(1) as f64;
                let y0 = (lane_h * (k as f64 + 0.5)).clamp(h / 2.0 + amp, fh - h / 2.0 - amp);
                let x0 = rng.random_range(w..fw / 2.0);
                let vx = rng.random_range(0.5..2.5);
                objects.push(Object {
                    w,
                    h,
                    path: Box::new(move |t| (x0 + vx * t, y0 + amp * (2.0 * PI * t / period + phase).sin())),
                    hidden: None,
                });
            }
        }
    }
    objects
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
        1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    #[test]
    fn noiseless_detections_reproduce_truth() {
        for sc in Scenario::ALL {
            let cfg = ScenarioConfig::preset(sc);
            let seq = generate(&cfg).unwrap();
            assert_eq!(seq.detections.len(), cfg.n_frames as usize);
            for fd in &seq.detections {
                let gt_rows = seq.gt.frames.get(&fd.frame).cloned().unwrap_or_default();
                assert_eq!(gt_rows.len(), fd.detections.len());
                for d in &fd.detections {
                    let g = gt_rows.iter().find(|g| g.bbox == d.bbox).expect("exact box");
                    let e = d.embedding.as_ref().unwrap();
                    assert!(cos_dist(e, &seq.prototypes[g.id as usize - 1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let mut cfg = ScenarioConfig::preset(Scenario::Crowded);
        cfg.fp_rate = 2.0;
        cfg.box_jitter_std = 3.0;
        cfg.emb_noise_std = 0.2;
        cfg.det_drop_prob = 0.1;
        cfg.seed = 42;
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        cfg.seed = 43;
        assert_ne!(generate(&cfg).unwrap().gt, {
            cfg.seed = 42;
            generate(&cfg).unwrap().gt
        });
    }

    #[test]
    fn gt_inside_frame() {
        for sc in Scenario::ALL {
            for seed in 0..5 {
                let cfg = ScenarioConfig { seed, ..ScenarioConfig::preset(sc) };
                let seq = generate(&cfg).unwrap();
                for r in seq.gt.frames.values().flatten() {
                    assert!(r.bbox.x >= 0.0 && r.bbox.y >= 0.0);
                    assert!(r.bbox.right() <= cfg.frame_size.0 + 1e-9);
                    assert!(r.bbox.bottom() <= cfg.frame_size.1 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn crowded_speed_does_not_depend_on_length() {
        for n_frames in [2, 30, 200, 2000] {
            let cfg = ScenarioConfig { n_frames, n_objects: 100, ..ScenarioConfig::preset(Scenario::Crowded) };
            let seq = generate(&cfg).unwrap();
            for (f, rows) in seq.gt.frames.range(2..) {
                for r in rows {
                    let prev = seq.gt.frames[&(f - 1)].iter().find(|p| p.id == r.id).unwrap();
                    let (dx, dy) = (r.bbox.x - prev.bbox.x, r.bbox.y - prev.bbox.y);
                    assert!(dx.hypot(dy) < 3.0 + 1e-9, "frames {n_frames}, id {}", r.id);
                }
            }
        }
    }

    #[test]
    fn occlusion_hides_identity_for_exact_gap() {
        for gap in [1, 30, 31] {
            let cfg = ScenarioConfig { occlusion_gap: gap, ..ScenarioConfig::preset(Scenario::Occlusion) };
            let seq = generate(&cfg).unwrap();
            let missing = (1..=cfg.n_frames)
                .filter(|f| !seq.gt.frames[f].iter().any(|r| r.id == 1))
                .collect::<Vec<_>>();
            assert_eq!(missing.len(), gap as usize);
            assert!(missing.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn prototypes_orthonormal() {
        let seq = generate(&ScenarioConfig::preset(Scenario::NonLinear)).unwrap();
        for (i, a) in seq.prototypes.iter().enumerate() {
            for (j, b) in seq.prototypes.iter().enumerate() {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crossing_embeddings_stay_separated_under_small_noise() {
        let noise = 0.01;
        for seed in 0..20 {
            let cfg = ScenarioConfig { seed, emb_noise_std: noise, ..ScenarioConfig::preset(Scenario::Crossing) };
            let seq = generate(&cfg).unwrap();
            let mut min_inter = f64::INFINITY;
            for fd in &seq.detections {
                let gt_rows = &seq.gt.frames[&fd.frame];
                let ids: Vec<i64> = fd
                    .detections
                    .iter()
                    .map(|d| gt_rows.iter().find(|g| g.bbox == d.bbox).unwrap().id)
                    .collect();
                for a in 0..ids.len() {
                    for b in 0..ids.len() {
                        if ids[a] != ids[b] {
                            let (ea, eb) = (&fd.detections[a].embedding, &fd.detections[b].embedding);
                            min_inter = min_inter.min(cos_dist(ea.as_ref().unwrap(), eb.as_ref().unwrap()));
                        }
                    }
                }
            }
            assert!(min_inter > 4.0 * noise, "seed {seed}: {min_inter}");
        }
    }

    #[test]
    fn intra_identity_spread_grows_with_noise() {
        let mut last = -1.0;
        for noise in [0.0, 0.02, 0.05, 0.1, 0.2] {
            let cfg = ScenarioConfig {
                emb_noise_std: noise,
                n_objects: 1,
                n_frames: 200,
                ..ScenarioConfig::preset(Scenario::NonLinear)
            };
            let seq = generate(&cfg).unwrap();
            let embs: Vec<&Vec<f64>> = seq
                .detections
                .iter()
                .flat_map(|f| f.detections.iter().map(|d| d.embedding.as_ref().unwrap()))
                .collect();
            let mean: f64 = embs.windows(2).map(|w| cos_dist(w[0], w[1])).sum::<f64>()
                / (embs.len() - 1) as f64;
            assert!(mean > last, "noise {noise}: {mean} <= {last}");
            last = mean;
        }
    }

    #[test]
    fn invalid_configs() {
        let base = ScenarioConfig::preset(Scenario::Occlusion);
        assert!(generate(&ScenarioConfig { det_drop_prob: 1.5, ..base.clone() }).is_err());
        assert!(generate(&ScenarioConfig { occlusion_gap: 150, ..base.clone() }).is_err());
        assert!("nope".parse::<Scenario>().is_err());
        assert_eq!("non-linear".parse::<Scenario>().unwrap(), Scenario::NonLinear);
    }

    #[test]
    fn appearance_free_sequences() {
        let cfg = ScenarioConfig { with_embeddings: false, ..ScenarioConfig::preset(Scenario::Crossing) };
        let seq = generate(&cfg).unwrap();
        assert!(seq.detections.iter().flat_map(|f| &f.detections).all(|d| d.embedding.is_none()));
    }
}
