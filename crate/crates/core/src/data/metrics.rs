use crate::error::{Error, Result};
use crate::renderer::MIN_DEPTH_MASK;

/// Mean absolute difference over pixels and channels between `pred` and the
/// mask-multiplied ground truth.
pub fn metric_l1_rgb(pred: &[f64], gt: &[f64], mask: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() != 3 * mask.len() {
        return Err(Error::shape("metric_l1_rgb", &[pred.len(), pred.len() / 3], &[gt.len(), mask.len()]));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .chunks_exact(3)
        .zip(gt.chunks_exact(3))
        .zip(mask)
        .flat_map(|((p, g), m)| (0..3).map(move |k| (p[k] - m * g[k]).abs()))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Intersection over union of `pred > threshold` against a binary mask;
/// 1 when both are empty.
pub fn metric_iou(pred: &[f64], gt: &[f64], threshold: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("metric_iou", &[gt.len()], &[pred.len()]));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p > threshold, g >= 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Depth error and whether any pixel was scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthError {
    pub l1: f64,
    /// False when no pixel lies inside the mask with a confident
    /// prediction; `l1` is then 0.
    pub valid: bool,
}

/// Mean absolute depth difference over pixels inside the ground-truth mask
/// whose predicted intersection probability is at least
/// [`MIN_DEPTH_MASK`].
pub fn metric_l1_depth(pred: &[f64], gt: &[f64], gt_mask: &[f64], pred_mask: &[f64]) -> Result<DepthError> {
    if pred.len() != gt.len() || pred.len() != gt_mask.len() || pred.len() != pred_mask.len() {
        return Err(Error::shape("metric_l1_depth", &[pred.len(); 3], &[gt.len(), gt_mask.len(), pred_mask.len()]));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..pred.len() {
        if gt_mask[i] >= 0.5 && pred_mask[i] >= MIN_DEPTH_MASK {
            sum += (pred[i] - gt[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Ok(DepthError { l1: 0.0, valid: false });
    }
    Ok(DepthError {
        l1: sum / n as f64,
        valid: true,
    })
}
