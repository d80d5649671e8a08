use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarmonicConfig;
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Shape of the radiance MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub width: usize,
    /// Number of hidden trunk layers.
    pub depth: usize,
    /// Trunk layer that re-receives the encoded position and latent code.
    pub skip: usize,
    pub harmonic: HarmonicConfig,
    pub latent_dim: usize,
}

impl FieldConfig {
    pub fn new(width: usize, latent_dim: usize) -> Self {
        FieldConfig {
            width,
            depth: 6,
            skip: 4,
            harmonic: HarmonicConfig::default(),
            latent_dim,
        }
    }

    fn input_len(&self) -> usize {
        self.harmonic.position_len() + self.latent_dim
    }

    fn color_hidden(&self) -> usize {
        (self.width / 2).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.skip >= self.depth {
            return Err(Error::InvalidConfig(format!(
                "field needs width ≥ 1, depth ≥ 1 and skip < depth, got {self:?}"
            )));
        }
        if self.harmonic.n_freqs_x == 0 || self.harmonic.n_freqs_r == 0 {
            return Err(Error::InvalidConfig("harmonic encodings need at least one frequency".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every linear layer in parameter order.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut layers = Vec::with_capacity(self.depth + 3);
        for i in 0..self.depth {
            let fan_in = if i == 0 {
                self.input_len()
            } else if i == self.skip {
                self.width + self.input_len()
            } else {
                self.width
            };
            layers.push((fan_in, self.width));
        }
        layers.push((self.width, 1));
        layers.push((self.width + self.harmonic.direction_len(), self.color_hidden()));
        layers.push((self.color_hidden(), 3));
        layers
    }
}

/// MLP mapping `(γ(x), γ(r), z)` to color and density.
///
/// The trunk sees only `γ(x)` and `z`; the view direction enters the color
/// branch alone, so density is independent of it.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    config: FieldConfig,
    params: Vec<Tensor>,
}

/// Bias of the density head at initialization.
pub const DENSITY_BIAS_INIT: f64 = -1.0;

impl RadianceField {
    /// Xavier-uniform weights, zero biases, density bias at
    /// [`DENSITY_BIAS_INIT`].
    pub fn new(config: FieldConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let mut params = Vec::with_capacity(2 * layers.len());
        for (i, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
            params.push(Tensor::new(vec![fan_in, fan_out], w)?);
            let bias = if i == config.depth { DENSITY_BIAS_INIT } else { 0.0 };
            params.push(Tensor::full(vec![1, fan_out], bias));
        }
        Ok(RadianceField { config, params })
    }

    /// Every parameter set to zero.
    pub fn zeros(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .layers()
            .into_iter()
            .flat_map(|(i, o)| [Tensor::zeros(vec![i, o]), Tensor::zeros(vec![1, o])])
            .collect();
        Ok(RadianceField { config, params })
    }

    pub fn from_params(config: FieldConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = Self::zeros(config)?.params;
        if expected.len() != params.len() {
            return Err(Error::shape("RadianceField params", &[expected.len()], &[params.len()]));
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.shape() != p.shape() {
                return Err(Error::shape("RadianceField param", e.shape(), p.shape()));
            }
        }
        Ok(RadianceField { config, params })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Batched evaluation on a tape. `params` are this field's parameters
    /// registered on the same tape, in [`RadianceField::params`] order.
    /// Returns `rgb: [n, 3]` and `sigma: [n, 1]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], gx: Var, gr: Var, z: Var) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let n = tape.shape(gx)[0];
        let expect = |tape: &Tape, v: Var, cols: usize, what: &'static str| -> Result<()> {
            if tape.shape(v) != [n, cols] {
                return Err(Error::shape(what, &[n, cols], tape.shape(v)));
            }
            Ok(())
        };
        expect(tape, gx, cfg.harmonic.position_len(), "field position encoding")?;
        expect(tape, gr, cfg.harmonic.direction_len(), "field direction encoding")?;
        expect(tape, z, cfg.latent_dim, "field latent code")?;
        if params.len() != self.params.len() {
            return Err(Error::shape("field params", &[self.params.len()], &[params.len()]));
        }

        let input = tape.concat_cols(&[gx, z])?;
        let mut h = input;
        for i in 0..cfg.depth {
            if i == cfg.skip && i > 0 {
                h = tape.concat_cols(&[h, input])?;
            }
            let pre = tape.linear(h, params[2 * i], params[2 * i + 1])?;
            h = tape.squareplus(pre)?;
        }
        let k = 2 * cfg.depth;
        let sigma_pre = tape.linear(h, params[k], params[k + 1])?;
        let sigma = tape.softplus(sigma_pre)?;

        let hr = tape.concat_cols(&[h, gr])?;
        let c_pre = tape.linear(hr, params[k + 2], params[k + 3])?;
        let c_hidden = tape.squareplus(c_pre)?;
        let rgb_pre = tape.linear(c_hidden, params[k + 4], params[k + 5])?;
        let rgb = tape.sigmoid(rgb_pre)?;
        Ok((rgb, sigma))
    }
}

/// Single-point evaluation on already-encoded inputs.
pub fn field_forward(rf: &RadianceField, gx: &[f64], gr: &[f64], z: &[f64]) -> Result<([f64; 3], f64)> {
    let mut tape = Tape::new();
    let params: Vec<Var> = rf.params().iter().map(|p| tape.constant(p.clone())).collect();
    let gx = tape.constant(Tensor::new(vec![1, gx.len()], gx.to_vec())?);
    let gr = tape.constant(Tensor::new(vec![1, gr.len()], gr.to_vec())?);
    let z = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
    let (rgb, sigma) = rf.forward(&mut tape, &params, gx, gr, z)?;
    let c = tape.value(rgb).data();
    Ok(([c[0], c[1], c[2]], tape.value(sigma).item()))
}
