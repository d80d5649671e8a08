use rand::Rng;

use crate::error::{Error, Result};

/// Ascending camera-frame depths along one ray. The far bound closes the
/// last interval.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSamples {
    depths: Vec<f64>,
    far: f64,
}

/// Floor added to every bin weight before inverting the CDF.
pub const PDF_FLOOR: f64 = 1e-5;

impl DepthSamples {
    pub fn new(depths: Vec<f64>, far: f64) -> Result<Self> {
        let ascending = depths.windows(2).all(|w| w[0] <= w[1]);
        let bounded = depths.last().map_or(true, |&z| z <= far);
        if !ascending || !bounded || depths.iter().any(|z| !z.is_finite()) {
            let near = depths.first().copied().unwrap_or(far);
            return Err(Error::InvalidBounds { near, far });
        }
        Ok(DepthSamples { depths, far })
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// `Z_{i+1} − Z_i`, with the far bound after the last sample.
    pub fn intervals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depths.len());
        for (i, &z) in self.depths.iter().enumerate() {
            let next = self.depths.get(i + 1).copied().unwrap_or(self.far);
            out.push(next - z);
        }
        out
    }
}

fn check_bounds(near: f64, far: f64) -> Result<()> {
    if !(near.is_finite() && far.is_finite() && near < far) {
        return Err(Error::InvalidBounds { near, far });
    }
    Ok(())
}

/// One sample per equal stratum of `[near, far]`: the midpoint, or a uniform
/// draw when `jitter` is set.
pub fn stratified_depths(near: f64, far: f64, n: usize, jitter: bool, rng: &mut impl Rng) -> Result<DepthSamples> {
    check_bounds(near, far)?;
    if n == 0 {
        return Err(Error::InvalidConfig("stratified sampling needs n ≥ 1".into()));
    }
    let depths = (0..n)
        .map(|i| {
            let t = if jitter { rng.gen::<f64>() } else { 0.5 };
            let mut u = (i as f64 + t) / n as f64;
            // i + t can round up to i + 1
            if u >= (i + 1) as f64 / n as f64 {
                u = i as f64 / n as f64;
            }
            near + (far - near) * u
        })
        .collect();
    DepthSamples::new(depths, far)
}

/// New depths drawn from the piecewise-constant density over coarse bins,
/// not merged with the coarse ones. Deterministic mode inverts the CDF at
/// stratum midpoints.
pub fn fine_depths(coarse: &DepthSamples, probs: &[f64], n_fine: usize, jitter: bool, rng: &mut impl Rng) -> Vec<f64> {
    let edges: Vec<f64> = coarse.depths.iter().copied().chain([coarse.far]).collect();
    let weights: Vec<f64> = probs.iter().map(|p| p.max(0.0) + PDF_FLOOR).collect();
    let total: f64 = weights.iter().sum();
    let mut cdf = Vec::with_capacity(weights.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    cdf[last] = 1.0;

    let mut out = Vec::with_capacity(n_fine);
    let mut bin = 0;
    for i in 0..n_fine {
        let t = if jitter { rng.gen::<f64>() } else { 0.5 };
        let u = (i as f64 + t) / n_fine as f64;
        while bin + 1 < weights.len() && cdf[bin + 1] <= u {
            bin += 1;
        }
        let width = cdf[bin + 1] - cdf[bin];
        let frac = if width > 0.0 { ((u - cdf[bin]) / width).clamp(0.0, 1.0) } else { 0.5 };
        out.push(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    out
}

/// Fine depths merged with the coarse ones in ascending order.
pub fn importance_depths(
    coarse: &DepthSamples,
    probs: &[f64],
    n_fine: usize,
    jitter: bool,
    rng: &mut impl Rng,
) -> Result<DepthSamples> {
    if probs.len() != coarse.len() {
        return Err(Error::shape("importance_depths probabilities", &[coarse.len()], &[probs.len()]));
    }
    let mut all = coarse.depths.clone();
    all.extend(fine_depths(coarse, probs, n_fine, jitter, rng));
    all.sort_by(f64::total_cmp);
    DepthSamples::new(all, coarse.far)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn midpoints() {
        assert_eq!(stratified_depths(0.0, 1.0, 1, false, &mut rng()).unwrap().depths(), &[0.5]);
        assert_eq!(stratified_depths(0.0, 1.0, 2, false, &mut rng()).unwrap().depths(), &[0.25, 0.75]);
    }

    #[test]
    fn rejects_bad_bounds() {
        for (near, far) in [(1.0, 1.0), (2.0, 1.0), (f64::NAN, 1.0)] {
            assert!(matches!(stratified_depths(near, far, 4, false, &mut rng()), Err(Error::InvalidBounds { .. })));
        }
    }

    #[test]
    fn jitter_stays_in_stratum() {
        let mut r = rng();
        let n = 7;
        for _ in 0..10_000 {
            let s = stratified_depths(0.0, 1.0, n, true, &mut r).unwrap();
            for (i, &z) in s.depths().iter().enumerate() {
                assert!(z >= i as f64 / n as f64 && z < (i + 1) as f64 / n as f64);
            }
        }
    }

    #[test]
    fn last_interval_closes_at_far() {
        let s = DepthSamples::new(vec![1.0, 1.5, 3.0], 4.0).unwrap();
        assert_eq!(s.intervals(), vec![0.5, 1.5, 1.0]);
    }

    #[test]
    fn concentrated_mass_stays_in_bin() {
        let coarse = DepthSamples::new(vec![0.0, 1.0, 2.0, 3.0], 4.0).unwrap();
        let fine = fine_depths(&coarse, &[0.0, 0.0, 1.0, 0.0], 64, true, &mut rng());
        assert!(fine.iter().all(|&z| (2.0..=3.0).contains(&z)));
    }

    #[test]
    fn uniform_pdf_spreads_evenly() {
        let coarse = DepthSamples::new(vec![0.0, 1.0, 2.0, 3.0], 4.0).unwrap();
        let fine = fine_depths(&coarse, &[0.25; 4], 8, false, &mut rng());
        let expected = [0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.25, 3.75];
        for (a, b) in fine.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn inverts_two_bin_cdf() {
        let coarse = DepthSamples::new(vec![0.0, 1.0], 2.0).unwrap();
        let fine = fine_depths(&coarse, &[0.75, 0.25], 1, false, &mut rng());
        assert!((fine[0] - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn merged_samples_are_sorted() {
        let coarse = stratified_depths(1.0, 5.0, 16, true, &mut rng()).unwrap();
        let probs: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin().abs() / 16.0).collect();
        let merged = importance_depths(&coarse, &probs, 32, true, &mut rng()).unwrap();
        assert_eq!(merged.len(), 48);
        assert!(merged.depths().windows(2).all(|w| w[0] <= w[1]));
        assert!(merged.depths().iter().all(|&z| (1.0..=5.0).contains(&z)));
    }

    proptest! {
        #[test]
        fn fine_samples_stay_within_bounds(
            probs in prop::collection::vec(0.0f64..1.0, 1..20),
            n in 1usize..40,
            seed in 0u64..100,
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let coarse = stratified_depths(0.5, 3.0, probs.len(), true, &mut r).unwrap();
            let fine = fine_depths(&coarse, &probs, n, true, &mut r);
            prop_assert!(fine.iter().all(|&z| z >= coarse.depths()[0] && z <= 3.0));
        }
    }
}
