use super::DepthSamples;
use crate::diff::{Op, Tensor};
use crate::error::{Error, Result};

/// Conditional depth is reported as zero below this intersection probability.
pub const MIN_DEPTH_MASK: f64 = 1e-4;
const DEPTH_EPS: f64 = 1e-8;

/// Per-interval transmittance, termination probabilities and the total
/// intersection probability.
#[derive(Clone, Debug, PartialEq)]
pub struct EaWeights {
    pub transmittance: Vec<f64>,
    pub probs: Vec<f64>,
    pub mask: f64,
}

impl EaWeights {
    /// Probability that the ray passes every interval.
    pub fn escape(&self) -> f64 {
        1.0 - self.mask
    }
}

pub fn ea_weights(samples: &DepthSamples, sigmas: &[f64]) -> Result<EaWeights> {
    if sigmas.len() != samples.len() {
        return Err(Error::shape("ea_weights densities", &[samples.len()], &[sigmas.len()]));
    }
    if let Some((index, &value)) = sigmas.iter().enumerate().find(|(_, s)| !(**s >= 0.0)) {
        return Err(Error::NegativeDensity { index, value });
    }
    let (transmittance, probs, escape) = march(&samples.intervals(), sigmas);
    Ok(EaWeights {
        transmittance,
        probs,
        mask: 1.0 - escape,
    })
}

/// `(T_i, p_i, Π T_i)`. Each `p_i` is the step in `1 − Π_{j≤i} T_j`. Those
/// values are multiples of 2⁻⁵³ in [0, 1], so every step is exact and a
/// left-to-right `Σ p_i` reproduces `1 − Π T_i` bit for bit.
fn march(deltas: &[f64], sigmas: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let mut t = Vec::with_capacity(deltas.len());
    let mut p = Vec::with_capacity(deltas.len());
    let (mut acc, mut hit) = (1.0, 0.0);
    for (d, s) in deltas.iter().zip(sigmas) {
        let ti = (-d * s).exp();
        t.push(ti);
        acc *= ti;
        let next = 1.0 - acc;
        p.push(next - hit);
        hit = next;
    }
    (t, p, acc)
}

/// Expected color, expected density and conditional expected depth.
pub fn composite(probs: &[f64], colors: &[[f64; 3]], sigmas: &[f64], samples: &DepthSamples) -> Result<([f64; 3], f64, f64)> {
    let n = probs.len();
    if colors.len() != n || sigmas.len() != n || samples.len() != n {
        return Err(Error::shape("composite lengths", &[n, n, n], &[colors.len(), sigmas.len(), samples.len()]));
    }
    let mut color = [0.0; 3];
    let mut opacity = 0.0;
    let mut mask = 0.0;
    let mut depth = 0.0;
    for i in 0..n {
        for c in 0..3 {
            color[c] += probs[i] * colors[i][c];
        }
        opacity += probs[i] * sigmas[i];
        mask += probs[i];
        depth += probs[i] * samples.depths()[i];
    }
    Ok((color, opacity, conditional_depth(depth, mask)))
}

pub(crate) fn conditional_depth(weighted: f64, mask: f64) -> f64 {
    if mask < MIN_DEPTH_MASK {
        0.0
    } else {
        weighted / mask.max(DEPTH_EPS)
    }
}

/// Emission-absorption compositing of `rays` rays with a fixed number of
/// samples each.
///
/// Inputs are colors `[rays·samples, 3]` and densities `[rays·samples, 1]`,
/// ordered ray by ray. The output is `[rays, 4]`: the masked pixel
/// `m̂·Σ p_i c_i` followed by `m̂`.
#[derive(Clone, Debug)]
pub struct EaComposite {
    pub samples: usize,
    /// Interval widths, one per sample.
    pub deltas: Vec<f64>,
}

impl EaComposite {
    fn rays(&self) -> usize {
        self.deltas.len() / self.samples.max(1)
    }
}

impl Op for EaComposite {
    fn name(&self) -> &'static str {
        "ea_composite"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (rgb, sigma) = (inputs[0], inputs[1]);
        let total = self.deltas.len();
        if rgb.shape() != [total, 3] || sigma.shape() != [total, 1] || self.samples == 0 || total % self.samples != 0 {
            return Err(Error::shape("ea_composite inputs", &[total, 3, total, 1], &[rgb.len(), sigma.len()]));
        }
        let s = self.samples;
        let mut out = Vec::with_capacity(self.rays() * 4);
        for r in 0..self.rays() {
            let range = r * s..(r + 1) * s;
            let (_, p, escape) = march(&self.deltas[range.clone()], &sigma.data()[range.clone()]);
            let c = &rgb.data()[3 * r * s..3 * (r + 1) * s];
            let mut chat = [0.0; 3];
            for (i, pi) in p.iter().enumerate() {
                for k in 0..3 {
                    chat[k] += pi * c[3 * i + k];
                }
            }
            let m = 1.0 - escape;
            out.extend([m * chat[0], m * chat[1], m * chat[2], m]);
        }
        Tensor::new(vec![self.rays(), 4], out)
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (rgb, sigma) = (inputs[0], inputs[1]);
        let s = self.samples;
        let mut g_rgb = vec![0.0; rgb.len()];
        let mut g_sigma = vec![0.0; sigma.len()];
        let mut g = vec![0.0; s];
        for r in 0..self.rays() {
            let range = r * s..(r + 1) * s;
            let deltas = &self.deltas[range.clone()];
            let (t, p, escape) = march(deltas, &sigma.data()[range.clone()]);
            let c = &rgb.data()[3 * r * s..3 * (r + 1) * s];
            let m = 1.0 - escape;
            let gp = &grad.data()[4 * r..4 * r + 3];
            let mut chat = [0.0; 3];
            for (i, pi) in p.iter().enumerate() {
                for k in 0..3 {
                    chat[k] += pi * c[3 * i + k];
                }
            }
            // d/dm̂ through both the mask output and the pixel's m̂ factor.
            let gm = grad.data()[4 * r + 3] + (0..3).map(|k| chat[k] * gp[k]).sum::<f64>();
            for i in 0..s {
                g[i] = (0..3).map(|k| c[3 * i + k] * m * gp[k]).sum();
                for k in 0..3 {
                    g_rgb[3 * (r * s + i) + k] = p[i] * m * gp[k];
                }
            }
            // Accumulated transmittance before sample i, and Σ_{j>i} p_j g_j.
            let mut acc = 1.0;
            let mut tail: f64 = (0..s).map(|i| p[i] * g[i]).sum();
            for i in 0..s {
                tail -= p[i] * g[i];
                g_sigma[r * s + i] = deltas[i] * (t[i] * acc * g[i] - tail + escape * gm);
                acc *= t[i];
            }
        }
        vec![
            needs[0].then(|| Tensor::new(rgb.shape().to_vec(), g_rgb).expect("input shape")),
            needs[1].then(|| Tensor::new(sigma.shape().to_vec(), g_sigma).expect("input shape")),
        ]
    }
}
