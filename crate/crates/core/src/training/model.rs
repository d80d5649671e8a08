use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fields::{feature_extract, ExtractorConfig, FeatureExtractor, FeatureField, FieldConfig, HarmonicConfig, RadianceField};
use crate::geometry::Camera;
use crate::raster::Raster;
use crate::renderer::{render_image, Conditioning, NeuralSource, RenderConfig, RenderedImage};
use crate::wcr::ViewVars;

/// How ray points are conditioned on the source views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Per-point features sampled where the point projects into each view.
    Wcr,
    /// One averaged image-level code for every point.
    GlobalCode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub width: usize,
    pub depth: usize,
    pub skip: usize,
    pub harmonic: HarmonicConfig,
    pub extractor: ExtractorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Wcr,
            width: 128,
            depth: 6,
            skip: 4,
            harmonic: HarmonicConfig::default(),
            extractor: ExtractorConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Length of the code concatenated to the encoded position.
    pub fn latent_dim(&self) -> usize {
        match self.kind {
            ModelKind::Wcr => self.extractor.field_dim() + 1 + self.extractor.channels,
            ModelKind::GlobalCode => self.extractor.channels,
        }
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            width: self.width,
            depth: self.depth,
            skip: self.skip,
            harmonic: self.harmonic,
            latent_dim: self.latent_dim(),
        }
    }
}

/// Radiance MLP plus the source-image extractor that conditions it.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    pub field: RadianceField,
    pub extractor: FeatureExtractor,
}

/// Source views ready to condition a render.
#[derive(Clone, Debug)]
pub struct EncodedViews {
    pub cameras: Vec<Camera>,
    pub features: Vec<FeatureField>,
}

impl Model {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let field = RadianceField::new(config.field_config(), rng)?;
        let extractor = FeatureExtractor::new(config.extractor, rng)?;
        Ok(Model { config, field, extractor })
    }

    /// Splits `params` (field first, then extractor) back into a model.
    pub fn from_params(config: ModelConfig, mut params: Vec<Tensor>) -> Result<Self> {
        let n_field = RadianceField::zeros(config.field_config())?.params().len();
        if params.len() < n_field {
            return Err(Error::shape("Model params", &[n_field], &[params.len()]));
        }
        let ext = params.split_off(n_field);
        Ok(Model {
            config,
            field: RadianceField::from_params(config.field_config(), params)?,
            extractor: FeatureExtractor::from_params(config.extractor, ext)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.field.params().iter().chain(self.extractor.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.field.params_mut().iter_mut().chain(self.extractor.params_mut().iter_mut()).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Extracts features from each source frame.
    pub fn encode(&self, frames: &[&Frame]) -> Result<EncodedViews> {
        let features = frames
            .iter()
            .map(|f| feature_extract(&self.extractor, &f.image, &f.mask))
            .collect::<Result<_>>()?;
        Ok(EncodedViews {
            cameras: frames.iter().map(|f| f.camera).collect(),
            features,
        })
    }

    /// Binds field parameters and encoded views as constants on `tape`.
    pub fn source<'a>(&'a self, tape: &mut Tape, views: &'a EncodedViews) -> Result<NeuralSource<'a>> {
        if views.features.is_empty() {
            return Err(Error::NoValidViews);
        }
        let params = self.field.params().iter().map(|p| tape.constant(p.clone())).collect();
        let globals: Vec<Var> = views
            .features
            .iter()
            .map(|f| Tensor::new(vec![1, f.global.len()], f.global.clone()).map(|t| tape.constant(t)))
            .collect::<Result<_>>()?;
        let conditioning = match self.config.kind {
            ModelKind::Wcr => Conditioning::Views(
                views
                    .cameras
                    .iter()
                    .zip(&views.features)
                    .zip(globals)
                    .map(|((camera, f), global)| ViewVars {
                        camera,
                        field: tape.constant(f.values.clone()),
                        global,
                    })
                    .collect(),
            ),
            ModelKind::GlobalCode => Conditioning::Global(globals),
        };
        Ok(NeuralSource {
            field: &self.field,
            params,
            conditioning,
        })
    }

    /// Renders `target` conditioned on `sources`.
    pub fn render(
        &self,
        sources: &[&Frame],
        target: &Camera,
        near: f64,
        far: f64,
        cfg: &RenderConfig,
        rng: &mut impl Rng,
    ) -> Result<RenderedImage> {
        let views = self.encode(sources)?;
        let mut tape = Tape::new();
        let source = self.source(&mut tape, &views)?;
        render_image(&mut tape, &source, target, near, far, cfg, rng)
    }
}

/// Averages per-image codes.
pub fn mean_code(codes: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = codes.first().ok_or(Error::NoValidViews)?;
    let mut out = vec![0.0; first.len()];
    for c in codes {
        if c.len() != out.len() {
            return Err(Error::shape("mean_code", &[out.len()], &[c.len()]));
        }
        for (o, v) in out.iter_mut().zip(c) {
            *o += v;
        }
    }
    let n = codes.len() as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

/// Object code of the baseline: the extractor's image-level codes of the
/// masked source images, averaged.
pub fn global_code_baseline(extractor: &FeatureExtractor, images: &[(&Raster, &Raster)]) -> Result<Vec<f64>> {
    let codes = images
        .iter()
        .map(|(img, mask)| feature_extract(extractor, img, mask).map(|f| f.global))
        .collect::<Result<Vec<_>>>()?;
    mean_code(&codes)
}
