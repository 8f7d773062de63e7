//! CLEAR-MOT and identity (IDF1) metrics.
//!
//! Ground-truth rows flagged not visible act as distractors: they are never
//! counted as misses, and a hypothesis that overlaps one (and is otherwise
//! unmatched) is not counted as a false positive.

use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::DMatrix;

use crate::assignment;
use crate::error::{Error, Result};
use crate::geometry::{iou_raw, BBox};
use crate::tracker::FrameResult;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBox {
    pub id: i64,
    pub bbox: BBox,
    pub conf: f64,
    pub visible: bool,
}

/// Per-frame labeled boxes, keyed by frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameSet {
    pub frames: BTreeMap<u32, Vec<LabeledBox>>,
}

impl FrameSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row, rejecting a duplicate `(frame, id)` pair.
    pub fn push(&mut self, frame: u32, row: LabeledBox) -> Result<()> {
        let rows = self.frames.entry(frame).or_default();
        if rows.iter().any(|r| r.id == row.id) {
            return Err(Error::invalid(format!(
                "identity {} appears twice in frame {frame}",
                row.id
            )));
        }
        rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn identities(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.frames.values().flatten().map(|r| r.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Tracker output as hypothesis rows.
    pub fn from_results(results: &[FrameResult]) -> FrameSet {
        let mut frames: BTreeMap<u32, Vec<LabeledBox>> = BTreeMap::new();
        for fr in results {
            let rows = frames.entry(fr.frame).or_default();
            rows.extend(fr.outputs.iter().map(|o| LabeledBox {
                id: o.track_id as i64,
                bbox: o.bbox,
                conf: o.score,
                visible: true,
            }));
        }
        FrameSet { frames }
    }

    /// Same rows with every frame index shifted by `offset`.
    pub fn shifted(&self, offset: i64) -> Result<FrameSet> {
        let mut frames = BTreeMap::new();
        for (&f, rows) in &self.frames {
            let nf = u32::try_from(f as i64 + offset)
                .map_err(|_| Error::invalid(format!("frame {f} + {offset} out of range")))?;
            frames.insert(nf, rows.clone());
        }
        Ok(FrameSet { frames })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearCounts {
    pub mota: f64,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub gt_count: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdScores {
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearReport {
    pub mota: f64,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub gt_count: usize,
    pub matches: usize,
    pub idf1: f64,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// Both metric families with the same IoU threshold.
pub fn evaluate(gt: &FrameSet, hyp: &FrameSet, iou_thresh: f64) -> Result<ClearReport> {
    let c = clear_metrics(gt, hyp, iou_thresh)?;
    let id = idf1(gt, hyp, iou_thresh)?;
    Ok(ClearReport {
        mota: c.mota,
        fp: c.fp,
        fn_: c.fn_,
        id_switches: c.id_switches,
        gt_count: c.gt_count,
        matches: c.matches,
        idf1: id.idf1,
        idtp: id.idtp,
        idfp: id.idfp,
        idfn: id.idfn,
    })
}

fn check_thresh(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("IoU threshold {t} is outside (0, 1]")));
    }
    Ok(())
}

/// Optimal one-to-one matching on `1 − IoU` among pairs with IoU ≥ thresh.
fn match_iou(rows: &[&BBox], cols: &[&BBox], thresh: f64) -> Result<Vec<(usize, usize)>> {
    let cost = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        let v = iou_raw(rows[i], cols[j]);
        if v >= thresh {
            1.0 - v
        } else {
            f64::INFINITY
        }
    });
    Ok(assignment::solve(&cost, 1.0)?.matches)
}

pub fn clear_metrics(gt: &FrameSet, hyp: &FrameSet, iou_thresh: f64) -> Result<ClearCounts> {
    check_thresh(iou_thresh)?;
    let empty = Vec::new();
    let frames: Vec<u32> = gt
        .frames
        .keys()
        .chain(hyp.frames.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    // gt id -> hyp id of its most recent match
    let mut last_match: HashMap<i64, i64> = HashMap::new();
    let (mut fp, mut fn_, mut ids, mut gt_count, mut matches) = (0, 0, 0, 0, 0);

    for f in frames {
        let g_rows = gt.frames.get(&f).unwrap_or(&empty);
        let h_rows = hyp.frames.get(&f).unwrap_or(&empty);
        let targets: Vec<&LabeledBox> = g_rows.iter().filter(|g| g.visible).collect();
        let distractors: Vec<&LabeledBox> = g_rows.iter().filter(|g| !g.visible).collect();
        gt_count += targets.len();

        let mut g_taken = vec![false; targets.len()];
        let mut h_taken = vec![false; h_rows.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        // Carry over last correspondences that still overlap.
        for (gi, g) in targets.iter().enumerate() {
            let Some(&hid) = last_match.get(&g.id) else { continue };
            if let Some(hi) = h_rows.iter().position(|h| h.id == hid) {
                if !h_taken[hi] && iou_raw(&g.bbox, &h_rows[hi].bbox) >= iou_thresh {
                    g_taken[gi] = true;
                    h_taken[hi] = true;
                    pairs.push((gi, hi));
                }
            }
        }

        let free_g: Vec<usize> = (0..targets.len()).filter(|&i| !g_taken[i]).collect();
        let free_h: Vec<usize> = (0..h_rows.len()).filter(|&i| !h_taken[i]).collect();
        let gb: Vec<&BBox> = free_g.iter().map(|&i| &targets[i].bbox).collect();
        let hb: Vec<&BBox> = free_h.iter().map(|&i| &h_rows[i].bbox).collect();
        for (r, c) in match_iou(&gb, &hb, iou_thresh)? {
            let (gi, hi) = (free_g[r], free_h[c]);
            g_taken[gi] = true;
            h_taken[hi] = true;
            pairs.push((gi, hi));
        }

        for &(gi, hi) in &pairs {
            let gid = targets[gi].id;
            let hid = h_rows[hi].id;
            if let Some(prev) = last_match.insert(gid, hid) {
                if prev != hid {
                    ids += 1;
                }
            }
        }
        matches += pairs.len();
        fn_ += g_taken.iter().filter(|t| !**t).count();
        fp += (0..h_rows.len())
            .filter(|&hi| !h_taken[hi])
            .filter(|&hi| {
                !distractors
                    .iter()
                    .any(|d| iou_raw(&d.bbox, &h_rows[hi].bbox) >= iou_thresh)
            })
            .count();
    }

    if gt_count == 0 {
        return Err(Error::Undefined("MOTA is undefined without ground truth".into()));
    }
    let mota = 1.0 - (fp + fn_ + ids) as f64 / gt_count as f64;
    Ok(ClearCounts {
        mota,
        fp,
        fn_,
        id_switches: ids,
        gt_count,
        matches,
    })
}

/// Global identity matching over whole trajectories.
pub fn idf1(gt: &FrameSet, hyp: &FrameSet, iou_thresh: f64) -> Result<IdScores> {
    check_thresh(iou_thresh)?;
    let mut gt_len: BTreeMap<i64, usize> = BTreeMap::new();
    let mut hyp_len: BTreeMap<i64, usize> = BTreeMap::new();
    let mut overlap: HashMap<(i64, i64), usize> = HashMap::new();
    let empty = Vec::new();

    let frames: HashSet<u32> = gt.frames.keys().chain(hyp.frames.keys()).copied().collect();
    for f in frames {
        let g_rows = gt.frames.get(&f).unwrap_or(&empty);
        let h_rows = hyp.frames.get(&f).unwrap_or(&empty);
        let targets: Vec<&LabeledBox> = g_rows.iter().filter(|g| g.visible).collect();
        let distractors: Vec<&LabeledBox> = g_rows.iter().filter(|g| !g.visible).collect();
        for g in &targets {
            *gt_len.entry(g.id).or_default() += 1;
        }
        for h in h_rows {
            let hits_target = targets.iter().any(|g| iou_raw(&g.bbox, &h.bbox) >= iou_thresh);
            let hits_distractor = distractors
                .iter()
                .any(|d| iou_raw(&d.bbox, &h.bbox) >= iou_thresh);
            if hits_distractor && !hits_target {
                continue;
            }
            *hyp_len.entry(h.id).or_default() += 1;
            for g in &targets {
                if iou_raw(&g.bbox, &h.bbox) >= iou_thresh {
                    *overlap.entry((g.id, h.id)).or_default() += 1;
                }
            }
        }
    }

    let total_gt: usize = gt_len.values().sum();
    let total_hyp: usize = hyp_len.values().sum();
    if total_gt == 0 && total_hyp == 0 {
        return Ok(IdScores {
            idf1: 1.0,
            idtp: 0,
            idfp: 0,
            idfn: 0,
        });
    }

    let g_ids: Vec<i64> = gt_len.keys().copied().collect();
    let h_ids: Vec<i64> = hyp_len.keys().copied().collect();
    // Maximizing matched overlap minimizes IDFP + IDFN.
    let cost = DMatrix::from_fn(g_ids.len(), h_ids.len(), |i, j| {
        -(overlap.get(&(g_ids[i], h_ids[j])).copied().unwrap_or(0) as f64)
    });
    let res = assignment::solve(&cost, 0.0)?;
    let idtp: usize = res
        .matches
        .iter()
        .map(|&(i, j)| overlap.get(&(g_ids[i], h_ids[j])).copied().unwrap_or(0))
        .sum();
    let idfn = total_gt - idtp;
    let idfp = total_hyp - idtp;
    let idf1 = 2.0 * idtp as f64 / (2 * idtp + idfp + idfn) as f64;
    Ok(IdScores {
        idf1,
        idtp,
        idfp,
        idfn,
    })
}
