use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{tape_losses, total_loss, LossConfig};
use super::model::{Model, ModelConfig, ModelKind};
use crate::data::{Scene, SceneDataset};
use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fields::{load_checkpoint, save_checkpoint, FeatureExtractor};
use crate::geometry::{PixelCoord, Ray};
use crate::renderer::{render_rays, Conditioning, NeuralSource, RenderConfig};
use crate::wcr::ViewVars;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rays_per_iter: usize,
    pub batch_scenes: usize,
    pub lr: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub src_views_min: usize,
    pub src_views_max: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Rays rendered per tape; bounds memory, not the result.
    pub chunk_rays: usize,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rays_per_iter: 1024,
            batch_scenes: 8,
            lr: 1e-4,
            n_coarse: 128,
            n_fine: 128,
            src_views_min: 1,
            src_views_max: 7,
            iterations: 10_000,
            seed: 0,
            chunk_rays: 256,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.rays_per_iter == 0 || self.batch_scenes == 0 || self.chunk_rays == 0 {
            return bad("rays_per_iter, batch_scenes and chunk_rays must be ≥ 1");
        }
        if self.src_views_min == 0 || self.src_views_min > self.src_views_max {
            return bad("source view range must satisfy 1 ≤ min ≤ max");
        }
        if !(self.lr > 0.0) || self.n_coarse == 0 {
            return bad("lr must be positive and n_coarse ≥ 1");
        }
        if !(self.loss.lambda_mask >= 0.0) {
            return bad("lambda_mask must be ≥ 0");
        }
        Ok(())
    }

    /// Sampling used while training: jittered depths.
    pub fn render_config(&self) -> RenderConfig {
        RenderConfig {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            jitter: true,
            chunk_rays: self.chunk_rays,
        }
    }

    /// Sampling used for evaluation renders: midpoint depths.
    pub fn eval_render_config(&self) -> RenderConfig {
        RenderConfig {
            jitter: false,
            ..self.render_config()
        }
    }
}

/// Loss terms of one optimizer step, averaged over its rays.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub loss_rgb: f64,
    pub loss_mask: f64,
}

/// Frames and pixels drawn from one scene for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDraw {
    pub target: usize,
    pub sources: Vec<usize>,
    /// Row-major pixel indices of the target frame.
    pub pixels: Vec<usize>,
}

/// Draws a target and a disjoint set of sources uniformly without
/// replacement from the scene's training frames, then `n_rays` pixels of
/// the target uniformly at random.
pub fn draw_scene(scene: &Scene, cfg: &TrainConfig, n_rays: usize, rng: &mut impl Rng) -> Result<SceneDraw> {
    let mut frames = scene.train_frames();
    if frames.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let n_src = rng.gen_range(cfg.src_views_min..=cfg.src_views_max).min(frames.len() - 1);
    let (picked, _) = frames.partial_shuffle(rng, n_src + 1);
    let target = picked[0];
    let sources = picked[1..].to_vec();
    let cam = &scene.frames[target].camera.intrinsics;
    let n_pix = cam.width * cam.height;
    let pixels = (0..n_rays).map(|_| rng.gen_range(0..n_pix)).collect();
    Ok(SceneDraw { target, sources, pixels })
}

struct DrawTargets {
    rays: Vec<Ray>,
    /// `[n, 3]`, rgb multiplied by the mask.
    rgb: Vec<f64>,
    mask: Vec<f64>,
}

fn draw_targets(scene: &Scene, draw: &SceneDraw) -> Result<DrawTargets> {
    let frame = &scene.frames[draw.target];
    let w = frame.image.width;
    let mut out = DrawTargets {
        rays: Vec::with_capacity(draw.pixels.len()),
        rgb: Vec::with_capacity(3 * draw.pixels.len()),
        mask: Vec::with_capacity(draw.pixels.len()),
    };
    for &p in &draw.pixels {
        let (x, y) = (p % w, p / w);
        out.rays.push(frame.camera.ray(PixelCoord::new(x as f64, y as f64), scene.near, scene.far)?);
        let m = frame.mask.pixel(x, y)[0];
        out.rgb.extend(frame.image.pixel(x, y).iter().map(|c| c * m));
        out.mask.push(m);
    }
    Ok(out)
}

fn targets_slice(t: &DrawTargets, range: std::ops::Range<usize>) -> Result<(Tensor, Tensor)> {
    let n = range.len();
    let rgb = Tensor::new(vec![n, 3], t.rgb[3 * range.start..3 * range.end].to_vec())?;
    let mask = Tensor::new(vec![n, 1], t.mask[range].to_vec())?;
    Ok((rgb, mask))
}

fn conditioning<'a>(kind: ModelKind, scene: &'a Scene, sources: &[usize], fields: &[Var], globals: &[Var]) -> Conditioning<'a> {
    match kind {
        ModelKind::Wcr => Conditioning::Views(
            sources
                .iter()
                .zip(fields.iter().zip(globals))
                .map(|(&s, (&field, &global))| ViewVars {
                    camera: &scene.frames[s].camera,
                    field,
                    global,
                })
                .collect(),
        ),
        ModelKind::GlobalCode => Conditioning::Global(globals.to_vec()),
    }
}

/// `λ·L_mask + L_rgb` over every ray of a draw, recorded on one tape with
/// the given model parameters (field first, then extractor).
#[allow(clippy::too_many_arguments)]
pub fn draw_loss(
    tape: &mut Tape,
    model: &Model,
    params: &[Var],
    scene: &Scene,
    draw: &SceneDraw,
    render: &RenderConfig,
    loss: &LossConfig,
    rng: &mut impl Rng,
) -> Result<Var> {
    let n_field = model.field.params().len();
    let (fp, ep) = params.split_at(n_field);
    let mut fields = Vec::new();
    let mut globals = Vec::new();
    for &s in &draw.sources {
        let f = &scene.frames[s];
        let input = tape.constant(FeatureExtractor::input_tensor(&f.image, &f.mask)?);
        let (field, global) = model.extractor.forward(tape, ep, input)?;
        fields.push(field);
        globals.push(global);
    }
    let source = NeuralSource {
        field: &model.field,
        params: fp.to_vec(),
        conditioning: conditioning(model.config().kind, scene, &draw.sources, &fields, &globals),
    };
    let targets = draw_targets(scene, draw)?;
    let out = render_rays(tape, &source, &targets.rays, render, rng)?;
    let (rgb, mask) = targets_slice(&targets, 0..targets.rays.len())?;
    let (l_rgb, l_mask) = tape_losses(tape, out.output, &rgb, &mask)?;
    let weighted = tape.scale(l_mask, loss.lambda_mask)?;
    tape.add(weighted, l_rgb)
}

fn accumulate(slot: &mut Option<Tensor>, g: Option<Tensor>) {
    match (slot.as_mut(), g) {
        (Some(acc), Some(g)) => acc.add_assign(&g),
        (None, Some(g)) => *slot = Some(g),
        _ => {}
    }
}

/// Gradient of `weight · (λ·L_mask + L_rgb)` for one draw, added into
/// `grads`. Rays are rendered in chunks on short-lived tapes; the feature
/// extractor runs once on its own tape and receives the summed adjoints of
/// its outputs at the end. Returns the weighted `(l_rgb, l_mask)`.
#[allow(clippy::too_many_arguments)]
pub fn draw_gradients(
    model: &Model,
    scene: &Scene,
    draw: &SceneDraw,
    render: &RenderConfig,
    loss: &LossConfig,
    weight: f64,
    grads: &mut [Tensor],
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let n_field = model.field.params().len();
    let kind = model.config().kind;

    let mut enc_tape = Tape::new();
    let ep: Vec<Var> = model.extractor.params().iter().map(|p| enc_tape.param(p.clone())).collect();
    let mut encoded = Vec::with_capacity(draw.sources.len());
    for &s in &draw.sources {
        let f = &scene.frames[s];
        let input = enc_tape.constant(FeatureExtractor::input_tensor(&f.image, &f.mask)?);
        encoded.push(model.extractor.forward(&mut enc_tape, &ep, input)?);
    }
    let mut field_adj: Vec<Option<Tensor>> = vec![None; encoded.len()];
    let mut global_adj: Vec<Option<Tensor>> = vec![None; encoded.len()];

    let targets = draw_targets(scene, draw)?;
    let n = targets.rays.len();
    let (mut sum_rgb, mut sum_mask) = (0.0, 0.0);
    let mut start = 0;
    while start < n {
        let end = (start + render.chunk_rays.max(1)).min(n);
        let mut tape = Tape::new();
        let fp: Vec<Var> = model.field.params().iter().map(|p| tape.param(p.clone())).collect();
        let fields: Vec<Var> = match kind {
            ModelKind::Wcr => encoded.iter().map(|(f, _)| tape.input(enc_tape.value(*f).clone())).collect(),
            ModelKind::GlobalCode => Vec::new(),
        };
        let globals: Vec<Var> = encoded.iter().map(|(_, g)| tape.input(enc_tape.value(*g).clone())).collect();
        let source = NeuralSource {
            field: &model.field,
            params: fp.clone(),
            conditioning: conditioning(kind, scene, &draw.sources, &fields, &globals),
        };
        let out = render_rays(&mut tape, &source, &targets.rays[start..end], render, rng)?;
        let (rgb, mask) = targets_slice(&targets, start..end)?;
        let (l_rgb, l_mask) = tape_losses(&mut tape, out.output, &rgb, &mask)?;
        let w = weight * (end - start) as f64 / n as f64;
        sum_rgb += w * tape.value(l_rgb).item();
        sum_mask += w * tape.value(l_mask).item();
        let seed = |v: Var, s: f64| (v, Tensor::full(tape.shape(v).to_vec(), s));
        let mut g = tape.backward_seeds(vec![seed(l_rgb, w), seed(l_mask, loss.lambda_mask * w)])?;
        for (acc, v) in grads[..n_field].iter_mut().zip(&fp) {
            if let Some(gv) = g.take(*v) {
                acc.add_assign(&gv);
            }
        }
        for (slot, v) in field_adj.iter_mut().zip(&fields) {
            accumulate(slot, g.take(*v));
        }
        for (slot, v) in global_adj.iter_mut().zip(&globals) {
            accumulate(slot, g.take(*v));
        }
        start = end;
    }

    let mut seeds = Vec::new();
    for ((field, global), (fa, ga)) in encoded.iter().zip(field_adj.into_iter().zip(global_adj)) {
        if let Some(a) = fa {
            seeds.push((*field, a));
        }
        if let Some(a) = ga {
            seeds.push((*global, a));
        }
    }
    if !seeds.is_empty() {
        let mut g = enc_tape.backward_seeds(seeds)?;
        for (acc, v) in grads[n_field..].iter_mut().zip(&ep) {
            if let Some(gv) = g.take(*v) {
                acc.add_assign(&gv);
            }
        }
    }
    Ok((sum_rgb, sum_mask))
}

/// One optimizer step: `batch_scenes` draws, each contributing an equal
/// share of the loss, then a single Adam update of field and extractor.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    dataset: &SceneDataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<StepStats> {
    let scenes: Vec<&Scene> = dataset.train_scenes().filter(|s| s.train_frames().len() >= 2).collect();
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_scene = (cfg.rays_per_iter / cfg.batch_scenes).max(1);
    let render = cfg.render_config();
    let mut grads: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let weight = 1.0 / cfg.batch_scenes as f64;
    let (mut l_rgb, mut l_mask) = (0.0, 0.0);
    for _ in 0..cfg.batch_scenes {
        let scene = scenes[rng.gen_range(0..scenes.len())];
        let draw = draw_scene(scene, cfg, per_scene, rng)?;
        let (r, m) = draw_gradients(model, scene, &draw, &render, &cfg.loss, weight, &mut grads, rng)?;
        l_rgb += r;
        l_mask += m;
    }
    adam_step(adam, &mut model.params_mut(), &grads, cfg.lr)?;
    Ok(StepStats {
        loss: total_loss(l_rgb, l_mask, &cfg.loss),
        loss_rgb: l_rgb,
        loss_mask: l_mask,
    })
}

/// Model, optimizer state and sampler of one training run.
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.model, &mut rng)?;
        let adam = AdamState::new(model.params());
        Ok(Trainer {
            model,
            adam,
            config,
            iteration: 0,
            rng,
        })
    }

    pub fn step(&mut self, dataset: &SceneDataset) -> Result<StepStats> {
        let stats = train_step(&mut self.model, &mut self.adam, dataset, &self.config, &mut self.rng)?;
        self.iteration += 1;
        Ok(stats)
    }
}

pub const LOG_HEADER: &str = "iter,loss,loss_rgb,loss_mask,seconds";

/// Runs `config.iterations` steps, writing one CSV row per step to `log`.
pub fn train(dataset: &SceneDataset, config: &TrainConfig, mut log: Option<&mut dyn Write>) -> Result<Model> {
    let mut trainer = Trainer::new(*config)?;
    let start = Instant::now();
    let log_err = |e: std::io::Error| Error::io("<training log>", e);
    if let Some(w) = log.as_mut() {
        writeln!(w, "{LOG_HEADER}").map_err(log_err)?;
    }
    for _ in 0..config.iterations {
        let s = trainer.step(dataset)?;
        if let Some(w) = log.as_mut() {
            let secs = start.elapsed().as_secs_f64();
            writeln!(w, "{},{},{},{},{secs:.3}", trainer.iteration, s.loss, s.loss_rgb, s.loss_mask).map_err(log_err)?;
        }
    }
    Ok(trainer.model)
}

/// Checkpoint with the training configuration as its header.
pub fn save_model(path: &Path, model: &Model, config: &TrainConfig) -> Result<()> {
    let header = TrainConfig {
        model: *model.config(),
        ..*config
    };
    let value = serde_json::to_value(header).map_err(|e| Error::io(path, e))?;
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    save_checkpoint(path, &value, &params)
}

pub fn load_model(path: &Path) -> Result<(Model, TrainConfig)> {
    let (value, params) = load_checkpoint(path)?;
    let config: TrainConfig = serde_json::from_value(value).map_err(|e| Error::io(path, e))?;
    Ok((Model::from_params(config.model, params)?, config))
}
