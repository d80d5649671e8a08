use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::geometry::Vec3;

/// Frequency counts for positions and view directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmonicConfig {
    pub n_freqs_x: usize,
    pub n_freqs_r: usize,
    pub include_input: bool,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        HarmonicConfig {
            n_freqs_x: 10,
            n_freqs_r: 4,
            include_input: true,
        }
    }
}

impl HarmonicConfig {
    pub fn position_len(&self) -> usize {
        encoded_len(3, self.n_freqs_x, self.include_input)
    }

    pub fn direction_len(&self) -> usize {
        encoded_len(3, self.n_freqs_r, self.include_input)
    }

    pub fn encode_positions(&self, points: &[Vec3]) -> Tensor {
        encode_rows(points, self.n_freqs_x, self.include_input)
    }

    pub fn encode_directions(&self, dirs: &[Vec3]) -> Tensor {
        encode_rows(dirs, self.n_freqs_r, self.include_input)
    }
}

pub fn encoded_len(dim: usize, n_freqs: usize, include_input: bool) -> usize {
    dim * (2 * n_freqs + include_input as usize)
}

fn encode_into(v: &[f64], n_freqs: usize, include_input: bool, out: &mut Vec<f64>) {
    for &x in v {
        if include_input {
            out.push(x);
        }
        let mut freq = 1.0;
        for _ in 0..n_freqs {
            let (s, c) = (freq * x).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
}

/// Per coordinate: `[x?, sin(x), cos(x), sin(2x), cos(2x), …, sin(2^{n-1}x), cos(2^{n-1}x)]`.
pub fn harmonic_encode(v: &[f64], n_freqs: usize, include_input: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(v.len(), n_freqs, include_input));
    encode_into(v, n_freqs, include_input, &mut out);
    out
}

/// Encodes each 3-vector into one row of an `[n, encoded_len]` tensor.
pub fn encode_rows(points: &[Vec3], n_freqs: usize, include_input: bool) -> Tensor {
    let width = encoded_len(3, n_freqs, include_input);
    let mut data = Vec::with_capacity(points.len() * width);
    for p in points {
        encode_into(p.as_slice(), n_freqs, include_input, &mut data);
    }
    Tensor::new(vec![points.len(), width], data).expect("row width is fixed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_maps_to_sin_cos_pairs() {
        assert_eq!(harmonic_encode(&[0.0, 0.0], 2, false), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_turn() {
        let e = harmonic_encode(&[std::f64::consts::FRAC_PI_2], 1, false);
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);
    }

    #[test]
    fn half_scalar_two_freqs() {
        let e = harmonic_encode(&[0.5], 2, false);
        let expected = [0.4794, 0.8776, 0.8415, 0.5403];
        for (a, b) in e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn include_input_prefixes_each_coordinate() {
        let e = harmonic_encode(&[0.25, -1.0], 1, true);
        assert_eq!(e.len(), encoded_len(2, 1, true));
        assert_eq!(e[0], 0.25);
        assert_eq!(e[3], -1.0);
    }

    proptest! {
        #[test]
        fn pair_energy_equals_frequency_count(x in -100.0f64..100.0, n in 1usize..12) {
            let e = harmonic_encode(&[x], n, false);
            let energy: f64 = e.iter().map(|v| v * v).sum();
            prop_assert!((energy - n as f64).abs() < 1e-12);
        }
    }
}
