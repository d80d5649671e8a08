use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Channels appended after the pyramid levels: masked rgb and the mask.
pub const RAW_CHANNELS: usize = 4;

const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PAD: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub levels: usize,
    /// Channels of each upsampled level and of the global code.
    pub channels: usize,
    /// Channels inside the stride-2 blocks.
    pub hidden: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            levels: 4,
            channels: 16,
            hidden: 16,
        }
    }
}

impl ExtractorConfig {
    /// Channel count of the dense field.
    pub fn field_dim(&self) -> usize {
        self.levels * self.channels + RAW_CHANNELS
    }

    fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.channels == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(format!("extractor sizes must be positive, got {self:?}")));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut cin = RAW_CHANNELS;
        for _ in 0..self.levels {
            shapes.push(vec![self.hidden, KERNEL, KERNEL, cin]);
            shapes.push(vec![1, self.hidden]);
            shapes.push(vec![self.channels, 1, 1, self.hidden]);
            shapes.push(vec![1, self.channels]);
            cin = self.hidden;
        }
        shapes.push(vec![self.hidden, self.channels]);
        shapes.push(vec![1, self.channels]);
        shapes
    }
}

/// Stride-2 conv pyramid producing a dense per-pixel feature field and a
/// global code from a masked source image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    params: Vec<Tensor>,
}

/// Dense features stored channels-last as `[height, width, dim]`, plus the
/// image-level code.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField {
    pub values: Tensor,
    pub global: Vec<f64>,
}

impl FeatureField {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let d = self.dim();
        let i = (y * self.width() + x) * d;
        &self.values.data()[i..i + d]
    }
}

impl FeatureExtractor {
    /// He-uniform weights and zero biases.
    pub fn new(config: ExtractorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = config
            .shapes()
            .into_iter()
            .map(|shape| {
                if shape[0] == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = if shape.len() == 4 { shape[1..].iter().product() } else { shape[0] };
                let limit = (6.0 / fan_in as f64).sqrt();
                let n = shape.iter().product();
                Tensor::new(shape, (0..n).map(|_| rng.gen_range(-limit..limit)).collect()).expect("sized from shape")
            })
            .collect();
        Ok(FeatureExtractor { config, params })
    }

    pub fn from_params(config: ExtractorConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.shapes();
        if shapes.len() != params.len() {
            return Err(Error::shape("FeatureExtractor params", &[shapes.len()], &[params.len()]));
        }
        for (s, p) in shapes.iter().zip(&params) {
            if s.as_slice() != p.shape() {
                return Err(Error::shape("FeatureExtractor param", s, p.shape()));
            }
        }
        Ok(FeatureExtractor { config, params })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// `[h, w, 4]` network input: rgb multiplied by the mask, then the mask.
    pub fn input_tensor(image: &Raster, mask: &Raster) -> Result<Tensor> {
        if !image.same_size(mask) || image.channels != 3 || mask.channels != 1 {
            return Err(Error::shape(
                "feature_extract image/mask",
                &[image.height, image.width, 3, 1],
                &[mask.height, mask.width, image.channels, mask.channels],
            ));
        }
        let mut data = Vec::with_capacity(image.width * image.height * RAW_CHANNELS);
        for (rgb, &m) in image.data.chunks_exact(3).zip(&mask.data) {
            data.extend(rgb.iter().map(|c| c * m));
            data.push(m);
        }
        Tensor::new(vec![image.height, image.width, RAW_CHANNELS], data)
    }

    /// Runs the pyramid on a `[h, w, 4]` input. Returns the field
    /// `[h, w, dim]` and the global code `[1, channels]`.
    pub fn forward(&self, tape: &mut Tape, params: &[Var], input: Var) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != RAW_CHANNELS {
            return Err(Error::shape("extractor input", &[0, 0, RAW_CHANNELS], &shape));
        }
        if params.len() != self.params.len() {
            return Err(Error::shape("extractor params", &[self.params.len()], &[params.len()]));
        }
        let (h, w) = (shape[0], shape[1]);
        let align = 1 << cfg.levels;
        if h % align != 0 || w % align != 0 {
            return Err(Error::shape("extractor input size (multiple of 2^levels)", &[align, align], &[h, w]));
        }

        let mut x = input;
        let mut parts = Vec::with_capacity(cfg.levels + 1);
        for l in 0..cfg.levels {
            let p = &params[4 * l..4 * l + 4];
            let conv = tape.conv2d(x, p[0], STRIDE, PAD)?;
            let biased = tape.add(conv, p[1])?;
            x = tape.squareplus(biased)?;
            let proj = tape.conv2d(x, p[2], 1, 0)?;
            let proj = tape.add(proj, p[3])?;
            let up = tape.resize(proj, h, w)?;
            parts.push(tape.reshape(up, [h * w, cfg.channels])?);
        }
        parts.push(tape.reshape(input, [h * w, RAW_CHANNELS])?);
        let flat = tape.concat_cols(&parts)?;
        let field = tape.reshape(flat, [h, w, cfg.field_dim()])?;

        let deep = tape.shape(x).to_vec();
        let rows = tape.reshape(x, [deep[0] * deep[1], cfg.hidden])?;
        let pooled = tape.sum_axis(rows, 0)?;
        let pooled = tape.scale(pooled, 1.0 / (deep[0] * deep[1]) as f64)?;
        let k = 4 * cfg.levels;
        let global = tape.linear(pooled, params[k], params[k + 1])?;
        Ok((field, global))
    }
}

/// Evaluates the extractor outside any training graph.
pub fn feature_extract(fx: &FeatureExtractor, image: &Raster, mask: &Raster) -> Result<FeatureField> {
    let input = FeatureExtractor::input_tensor(image, mask)?;
    let mut tape = Tape::new();
    let params: Vec<Var> = fx.params().iter().map(|p| tape.constant(p.clone())).collect();
    let input = tape.constant(input);
    let (field, global) = fx.forward(&mut tape, &params, input)?;
    Ok(FeatureField {
        values: tape.value(field).clone(),
        global: tape.value(global).data().to_vec(),
    })
}
