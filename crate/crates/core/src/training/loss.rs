use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_mask: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_mask: 0.05 }
    }
}

/// Mean squared difference between rendered pixels and the mask-multiplied
/// target, over pixels and channels.
pub fn loss_rgb(render: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    if render.len() != target.len() || render.len() != 3 * mask.len() {
        return Err(Error::shape("loss_rgb", &[render.len(), render.len() / 3], &[target.len(), mask.len()]));
    }
    if render.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = render
        .chunks_exact(3)
        .zip(target.chunks_exact(3))
        .zip(mask)
        .flat_map(|((r, t), m)| (0..3).map(move |k| (r[k] - m * t[k]).powi(2)))
        .sum();
    Ok(sum / render.len() as f64)
}

/// Mean binary cross-entropy of rendered intersection probabilities.
pub fn loss_mask(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("loss_mask", &[gt.len()], &[pred.len()]));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&p, &g)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(g * p.ln() + (1.0 - g) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn total_loss(l_rgb: f64, l_mask: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda_mask * l_mask + l_rgb
}

/// Differentiable `(l_rgb, l_mask)` for a renderer output `[n, 4]` against
/// already masked targets `[n, 3]` and binary masks `[n, 1]`.
pub fn tape_losses(tape: &mut Tape, output: Var, target: &Tensor, gt_mask: &Tensor) -> Result<(Var, Var)> {
    let n = tape.shape(output)[0];
    if tape.shape(output) != [n, 4] || target.shape() != [n, 3] || gt_mask.shape() != [n, 1] {
        return Err(Error::shape("tape_losses", &[n, 3, n, 1], &[target.len(), gt_mask.len()]));
    }
    let rgb = tape.slice_cols(output, 0, 3)?;
    let mask = tape.slice_cols(output, 3, 4)?;
    let t = tape.constant(target.clone());
    let diff = tape.sub(rgb, t)?;
    let sq = tape.square(diff)?;
    let l_rgb = tape.mean(sq)?;

    let g = tape.constant(gt_mask.clone());
    let inv_g = tape.constant(Tensor::new(vec![n, 1], gt_mask.data().iter().map(|v| 1.0 - v).collect())?);
    let p = tape.clamp(mask, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let log_p = tape.log(p)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let log_q = tape.log(q)?;
    let a = tape.mul(log_p, g)?;
    let b = tape.mul(log_q, inv_g)?;
    let ll = tape.add(a, b)?;
    let mean = tape.mean(ll)?;
    let l_mask = tape.neg(mean)?;
    Ok((l_rgb, l_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn rgb_examples() {
        let t = [0.2, 0.4, 0.6, 1.0, 1.0, 1.0];
        assert_eq!(loss_rgb(&[0.2, 0.4, 0.6, 0.0, 0.0, 0.0], &t, &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_rgb(&[0.0; 3], &[1.0; 3], &[1.0]).unwrap(), 1.0);
        assert_eq!(loss_rgb(&[0.5; 3], &[1.0; 3], &[1.0]).unwrap(), 0.25);
        assert!(loss_rgb(&[0.5; 3], &[1.0; 6], &[1.0]).is_err());
    }

    #[test]
    fn mask_examples() {
        assert!((loss_mask(&[0.5], &[1.0]).unwrap() - LN_2).abs() < 1e-15);
        let perfect = loss_mask(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(perfect <= -(1.0f64 - 1e-6).ln() + 1e-18);
        assert!((loss_mask(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0]).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn total_examples() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(0.2, 1.0, &cfg), 0.25);
        assert_eq!(total_loss(0.37, 0.0, &cfg), 0.37);
        assert_eq!(total_loss(0.37, 5.0, &LossConfig { lambda_mask: 0.0 }), 0.37);
    }

    #[test]
    fn tape_losses_match_plain() {
        let out = Tensor::new(vec![2, 4], vec![0.1, 0.5, 0.2, 0.7, 0.0, 0.3, 0.9, 0.2]).unwrap();
        let target = Tensor::new(vec![2, 3], vec![0.2, 0.4, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mask = Tensor::new(vec![2, 1], vec![1.0, 0.0]).unwrap();
        let mut tape = Tape::new();
        let o = tape.input(out.clone());
        let (a, b) = tape_losses(&mut tape, o, &target, &mask).unwrap();
        let rgb: Vec<f64> = out.data().chunks(4).flat_map(|r| r[..3].to_vec()).collect();
        let m: Vec<f64> = out.data().chunks(4).map(|r| r[3]).collect();
        assert!((tape.value(a).item() - loss_rgb(&rgb, target.data(), mask.data()).unwrap()).abs() < 1e-15);
        assert!((tape.value(b).item() - loss_mask(&m, mask.data()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn loss_ignores_ray_order() {
        let n = 50;
        let render: Vec<f64> = (0..3 * n).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let target: Vec<f64> = (0..3 * n).map(|i| ((i * 53) % 97) as f64 / 97.0).collect();
        let mask: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let pred: Vec<f64> = (0..n).map(|i| ((i * 11) % 13) as f64 / 13.0).collect();
        let perm: Vec<usize> = (0..n).rev().collect();
        let pick3 = |v: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&i| v[3 * i..3 * i + 3].to_vec()).collect() };
        let pick1 = |v: &[f64]| -> Vec<f64> { perm.iter().map(|&i| v[i]).collect() };
        let cfg = LossConfig::default();
        let a = total_loss(loss_rgb(&render, &target, &mask).unwrap(), loss_mask(&pred, &mask).unwrap(), &cfg);
        let b = total_loss(
            loss_rgb(&pick3(&render), &pick3(&target), &pick1(&mask)).unwrap(),
            loss_mask(&pick1(&pred), &pick1(&mask)).unwrap(),
            &cfg,
        );
        assert!((a - b).abs() < 1e-12);
    }
}
