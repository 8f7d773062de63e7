//! Subcommands of the `jdetrack` binary.
//!
//! Each `cmd_*` function writes human-readable output followed by
//! `key=value` lines to `out`, and diagnostics to `err`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use jdetrack_core::evalmot;
use jdetrack_core::io::{self, Config};
use jdetrack_core::metriclearn::{
    self, Distance, LossVariant, MiningStrategy, Reduction,
};
use jdetrack_core::synth::{self, Scenario};
use jdetrack_core::tracker::{run_sequence, Mode, StageTrace, Tracker};
use jdetrack_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "jdetrack", version, about = "Online multi-object association, evaluation and triplet mining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a detection file and write MOTChallenge results.
    Track(TrackArgs),
    /// Score a result file against ground truth (CLEAR MOT and IDF1).
    Eval(EvalArgs),
    /// Generate a synthetic sequence (gt.txt and det.txt).
    Synth(SynthArgs),
    /// Mine triplets from an embedding batch and report loss and diagnostics.
    MineBench(MineArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Detection file: frame,left,top,width,height,score,class_id[,embedding...].
    #[arg(long)]
    pub dets: PathBuf,
    /// TOML config; keys set there take precedence over flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path for MOTChallenge results.
    #[arg(long)]
    pub out: PathBuf,
    /// Stage-1 cost: fairmot or yolo11jde.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Worker threads for the association step (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Print one line per assignment stage to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth MOT file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Hypothesis (tracker result) MOT file.
    #[arg(long)]
    pub hyp: PathBuf,
    /// IoU threshold for a match.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// crossing, occlusion, crowded or nonlinear.
    #[arg(long)]
    pub scenario: Scenario,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML config whose [scenario] keys take precedence over flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of objects.
    #[arg(long)]
    pub n_objects: Option<usize>,
    /// Number of frames.
    #[arg(long)]
    pub n_frames: Option<u32>,
    /// Box jitter standard deviation in pixels.
    #[arg(long)]
    pub box_jitter_std: Option<f64>,
    /// Per-component embedding noise standard deviation.
    #[arg(long)]
    pub emb_noise_std: Option<f64>,
    /// Probability that a true detection is dropped.
    #[arg(long)]
    pub det_drop_prob: Option<f64>,
    /// Expected false positives per frame.
    #[arg(long)]
    pub fp_rate: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    pub emb_dim: Option<usize>,
    /// Frames during which identity 1 is hidden (occlusion scenario).
    #[arg(long)]
    pub occlusion_gap: Option<u32>,
    /// Omit embeddings from det.txt.
    #[arg(long)]
    pub no_embeddings: bool,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// Embedding batch: label,confidence,e1,...,eD per line.
    #[arg(long)]
    pub embs: PathBuf,
    /// Mining strategy as POS,NEG with hard, semihard or easy.
    #[arg(long, default_value = "hard,semihard")]
    pub strategy: MiningStrategy,
    /// Triplet margin.
    #[arg(long)]
    pub margin: Option<f64>,
    /// hinge, smooth or swap.
    #[arg(long)]
    pub variant: Option<LossVariant>,
    /// Fraction of most confident samples kept before mining.
    #[arg(long)]
    pub keep: Option<f64>,
    /// euclidean or cosine.
    #[arg(long)]
    pub metric: Option<Distance>,
    /// sum or mean.
    #[arg(long)]
    pub reduction: Option<Reduction>,
    /// TOML config whose [loss] keys take precedence over flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Track(a) => cmd_track(&a, out, err),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::MineBench(a) => cmd_mine_bench(&a, out),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), io::read_config)
}

fn trace_line(t: &StageTrace) -> String {
    format!(
        "frame={} stage={} cost={} appearance={} rows={} cols={} matches={}",
        t.frame,
        t.stage,
        t.cost_kind.name(),
        t.appearance,
        t.track_ids.len(),
        t.det_indices.len(),
        t.matches.len()
    )
}

pub fn cmd_track(a: &TrackArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut tcfg = cfg.tracker.clone();
    if !cfg.is_explicit("tracker.mode") {
        if let Some(m) = a.mode {
            tcfg.mode = m;
        }
    }
    let frames = io::read_detections(&a.dets, tcfg.emb_dim)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = a.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;

    let mode = tcfg.mode;
    let mut tracker = Tracker::new(tcfg)?;
    if a.verbose {
        tracker.enable_trace();
    }
    let (results, timings) = pool.install(|| run_sequence(&mut tracker, &frames))?;
    if a.verbose {
        for t in tracker.take_trace() {
            writeln!(err, "{}", trace_line(&t))?;
        }
    }
    io::write_results(&a.out, &results)?;

    let median_ms = timings.median().as_secs_f64() * 1e3;
    writeln!(
        out,
        "tracked {} frames with {} identities in {:.3} s ({:.1} steps/s, median step {:.3} ms)",
        results.len(),
        tracker.created(),
        timings.total().as_secs_f64(),
        timings.steps_per_sec(),
        median_ms
    )?;
    writeln!(out, "mode={}", mode.name())?;
    writeln!(out, "frames={}", results.len())?;
    writeln!(out, "tracks_created={}", tracker.created())?;
    writeln!(out, "total_s={:.6}", timings.total().as_secs_f64())?;
    writeln!(out, "steps_per_sec={:.3}", timings.steps_per_sec())?;
    writeln!(out, "median_step_ms={median_ms:.6}")?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let gt = io::read_mot(&a.gt)?;
    let hyp = io::read_mot(&a.hyp)?;
    if gt.frames.values().flatten().all(|r| !r.visible) {
        return Err(Error::Undefined(format!(
            "ground truth {} has no visible objects",
            a.gt.display()
        )));
    }
    let r = evalmot::evaluate(&gt, &hyp, a.iou)?;
    writeln!(out, "{:>8} {:>8} {:>6} {:>6} {:>6} {:>8} {:>8}", "MOTA", "IDF1", "IDSW", "FP", "FN", "GT", "MATCHES")?;
    writeln!(
        out,
        "{:>8.4} {:>8.4} {:>6} {:>6} {:>6} {:>8} {:>8}",
        r.mota, r.idf1, r.id_switches, r.fp, r.fn_, r.gt_count, r.matches
    )?;
    for (k, v) in [
        ("mota", format!("{:.6}", r.mota)),
        ("idf1", format!("{:.6}", r.idf1)),
        ("id_switches", r.id_switches.to_string()),
        ("fp", r.fp.to_string()),
        ("fn", r.fn_.to_string()),
        ("gt_count", r.gt_count.to_string()),
        ("matches", r.matches.to_string()),
        ("idtp", r.idtp.to_string()),
        ("idfp", r.idfp.to_string()),
        ("idfn", r.idfn.to_string()),
    ] {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut sc = cfg.scenario.resolve(a.scenario)?;
    let free = |key: &str| !cfg.is_explicit(&format!("scenario.{key}"));
    if free("seed") {
        sc.seed = a.seed;
    }
    macro_rules! flag {
        ($($f:ident),*) => { $(if let (Some(v), true) = (a.$f, free(stringify!($f))) { sc.$f = v; })* };
    }
    flag!(n_objects, n_frames, box_jitter_std, emb_noise_std, det_drop_prob, fp_rate, emb_dim, occlusion_gap);
    if a.no_embeddings && free("with_embeddings") {
        sc.with_embeddings = false;
    }
    let seq = synth::generate(&sc)?;
    fs::create_dir_all(&a.out)?;
    io::write_mot(&a.out.join("gt.txt"), &seq.gt)?;
    io::write_detections(&a.out.join("det.txt"), &seq.detections)?;
    let n_dets: usize = seq.detections.iter().map(|f| f.detections.len()).sum();
    writeln!(
        out,
        "wrote {} ({} frames, {} objects, {} detections) to {}",
        sc.scenario.name(),
        sc.n_frames,
        sc.n_objects,
        n_dets,
        a.out.display()
    )?;
    writeln!(out, "scenario={}", sc.scenario.name())?;
    writeln!(out, "seed={}", sc.seed)?;
    writeln!(out, "frames={}", sc.n_frames)?;
    writeln!(out, "objects={}", sc.n_objects)?;
    writeln!(out, "gt_rows={}", seq.gt.len())?;
    writeln!(out, "detections={n_dets}")?;
    writeln!(out, "emb_dim={}", sc.emb_dim)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

pub fn cmd_mine_bench(a: &MineArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut loss = cfg.loss.clone();
    let free = |key: &str| !cfg.is_explicit(&format!("loss.{key}"));
    if let (Some(m), true) = (a.margin, free("margin")) {
        loss.margin = m;
    }
    if let (Some(v), true) = (a.variant, free("variant")) {
        loss.variant = v;
    }
    if let (Some(k), true) = (a.keep, free("confidence_keep_fraction")) {
        loss.confidence_keep_fraction = k;
    }
    if let (Some(d), true) = (a.metric, free("distance")) {
        loss.distance = d;
    }
    if let (Some(r), true) = (a.reduction, free("reduction")) {
        loss.reduction = r;
    }
    loss.validate()?;

    let batch = io::read_embeddings(&a.embs)?;
    let pool = metriclearn::most_confident(&batch.confidences, loss.confidence_keep_fraction);
    let triplets = metriclearn::mine(&batch, a.strategy, loss.confidence_keep_fraction, loss.distance);
    let terms = metriclearn::margin_terms(&batch.embeddings, &triplets, &loss)?;
    let violating = terms.iter().filter(|&&z| z > 0.0).count();
    let (value, _) = metriclearn::triplet_loss(&batch.embeddings, &triplets, &loss)?;
    let diag = metriclearn::embedding_diagnostics(&batch.embeddings, &batch.labels)?;

    writeln!(
        out,
        "strategy {} on {} of {} samples: {} triplets, {} violate the margin, loss {:.6}",
        a.strategy,
        pool.len(),
        batch.len(),
        triplets.len(),
        violating,
        value
    )?;
    writeln!(out, "strategy={}", a.strategy)?;
    writeln!(out, "samples={}", batch.len())?;
    writeln!(out, "pool_size={}", pool.len())?;
    writeln!(out, "triplets={}", triplets.len())?;
    writeln!(out, "violating={violating}")?;
    writeln!(out, "loss={value:.6}")?;
    writeln!(out, "silhouette={}", opt(diag.silhouette))?;
    writeln!(out, "retrieval_map={}", opt(diag.retrieval_map))?;
    writeln!(out, "mean_pos_euclidean={}", opt(diag.mean_pos_euclidean))?;
    writeln!(out, "mean_neg_euclidean={}", opt(diag.mean_neg_euclidean))?;
    writeln!(out, "mean_pos_cosine={}", opt(diag.mean_pos_cosine))?;
    writeln!(out, "mean_neg_cosine={}", opt(diag.mean_neg_cosine))?;
    Ok(())
}
