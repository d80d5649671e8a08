use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{EvalSplit, Frame, Scene, SceneDataset};
use super::metrics::{metric_iou, metric_l1_depth, metric_l1_rgb};
use crate::error::{Error, Result};
use crate::renderer::RenderConfig;
use crate::training::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub repetitions: usize,
    /// Frames drawn per repetition: one target, the rest are sources.
    pub frames_per_rep: usize,
    pub source_counts: Vec<usize>,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            repetitions: 5,
            frames_per_rep: 8,
            source_counts: vec![1, 3, 5, 7],
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

/// Scores of one scene at one source count, averaged over repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub scene: String,
    pub split: EvalSplit,
    pub n_src: usize,
    pub l1_rgb: f64,
    pub iou: f64,
    pub l1_depth: f64,
    /// Repetitions in which some pixel qualified for the depth error.
    pub depth_samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

/// Means of each metric over scenes at one source count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub n_src: usize,
    pub l1_rgb: f64,
    pub iou: f64,
    pub l1_depth: f64,
}

impl EvalReport {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<usize, Vec<&EvalRow>> = BTreeMap::new();
        for r in &self.rows {
            groups.entry(r.n_src).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|(n_src, rows)| {
                let n = rows.len() as f64;
                let depth: Vec<f64> = rows.iter().filter(|r| r.depth_samples > 0).map(|r| r.l1_depth).collect();
                Aggregate {
                    n_src,
                    l1_rgb: rows.iter().map(|r| r.l1_rgb).sum::<f64>() / n,
                    iou: rows.iter().map(|r| r.iou).sum::<f64>() / n,
                    l1_depth: if depth.is_empty() { 0.0 } else { depth.iter().sum::<f64>() / depth.len() as f64 },
                }
            })
            .collect()
    }

    pub fn aggregate(&self, n_src: usize) -> Option<Aggregate> {
        self.aggregates().into_iter().find(|a| a.n_src == n_src)
    }

    /// Per-scene rows followed by one `mean` row per source count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,split,n_src,l1_rgb,iou,l1_depth\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{:.6},{:.6}", r.scene, r.split.name(), r.n_src, r.l1_rgb, r.iou, r.l1_depth);
        }
        if let Some(split) = self.rows.first().map(|r| r.split) {
            for a in self.aggregates() {
                let _ = writeln!(out, "mean,{},{},{:.6},{:.6},{:.6}", split.name(), a.n_src, a.l1_rgb, a.iou, a.l1_depth);
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Scores of a single render against its frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameScore {
    pub l1_rgb: f64,
    pub iou: f64,
    pub l1_depth: Option<f64>,
}

pub fn score_frame(model: &Model, scene: &Scene, sources: &[usize], target: usize, render: &RenderConfig) -> Result<FrameScore> {
    let src: Vec<&Frame> = sources.iter().map(|&i| &scene.frames[i]).collect();
    let t = &scene.frames[target];
    // Midpoint sampling ignores the generator; any seed works.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let img = model.render(&src, &t.camera, scene.near, scene.far, render, &mut rng)?;
    let depth = metric_l1_depth(&img.depth.data, &t.depth.data, &t.mask.data, &img.mask.data)?;
    Ok(FrameScore {
        l1_rgb: metric_l1_rgb(&img.rgb.data, &t.image.data, &t.mask.data)?,
        iou: metric_iou(&img.mask.data, &t.mask.data, 0.5)?,
        l1_depth: depth.valid.then_some(depth.l1),
    })
}

/// Repeatedly draws frames from each scene of `split`, renders the first
/// from growing prefixes of the rest, and averages the scores per source
/// count. Counts larger than the frames drawn are skipped.
pub fn evaluate(model: &Model, dataset: &SceneDataset, split: EvalSplit, cfg: &EvalConfig) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for (k, scene) in dataset.scenes_for(split).enumerate() {
        let frames = scene.eval_frames(split);
        if frames.len() < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        let counts: Vec<usize> = cfg.source_counts.iter().copied().filter(|&n| n >= 1).collect();
        let mut sums: BTreeMap<usize, (f64, f64, f64, usize, usize)> = BTreeMap::new();
        for _ in 0..cfg.repetitions {
            let mut pool = frames.clone();
            let take = cfg.frames_per_rep.min(pool.len());
            let (drawn, _) = pool.partial_shuffle(&mut rng, take);
            let (target, rest) = (drawn[0], &drawn[1..]);
            for &n in counts.iter().filter(|&&n| n <= rest.len()) {
                let s = score_frame(model, scene, &rest[..n], target, &cfg.render)?;
                let e = sums.entry(n).or_default();
                e.0 += s.l1_rgb;
                e.1 += s.iou;
                if let Some(d) = s.l1_depth {
                    e.2 += d;
                    e.3 += 1;
                }
                e.4 += 1;
            }
        }
        for (n_src, (l1, iou, depth, n_depth, reps)) in sums {
            rows.push(EvalRow {
                scene: scene.id.clone(),
                split,
                n_src,
                l1_rgb: l1 / reps as f64,
                iou: iou / reps as f64,
                l1_depth: if n_depth == 0 { 0.0 } else { depth / n_depth as f64 },
                depth_samples: n_depth,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySplit(split.name().into()));
    }
    Ok(EvalReport { rows })
}
