use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{dequantize_u8, quantize_u8, read_json, read_pfm, read_png, write_json, write_pfm, write_png};
use super::synth::{oracle_render, CameraRing, SyntheticSceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Mat3, Pose, Vec3};
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneSplit {
    Train,
    Test,
}

/// Which frames of a scene an evaluation draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSplit {
    /// Held-out frames of training scenes.
    TrainTest,
    /// All frames of unseen scenes.
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::TrainTest => "train-test",
            EvalSplit::Test => "test",
        }
    }
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-test" => Ok(EvalSplit::TrainTest),
            "test" => Ok(EvalSplit::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub camera: Camera,
    /// 3 channels, already multiplied by the soft mask and quantized to
    /// 8 bits.
    pub image: Raster,
    /// Binary object mask.
    pub mask: Raster,
    /// Camera-frame depth, 0 where nothing is hit.
    pub depth: Raster,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub split: SceneSplit,
    pub near: f64,
    pub far: f64,
    pub frames: Vec<Frame>,
    /// Sorted held-out frame indices; empty for test scenes.
    pub train_test: Vec<usize>,
    pub spec: Option<SyntheticSceneSpec>,
}

impl Scene {
    /// Frames available for training, the complement of `train_test`.
    pub fn train_frames(&self) -> Vec<usize> {
        match self.split {
            SceneSplit::Train => (0..self.frames.len()).filter(|i| self.train_test.binary_search(i).is_err()).collect(),
            SceneSplit::Test => Vec::new(),
        }
    }

    pub fn eval_frames(&self, split: EvalSplit) -> Vec<usize> {
        match (split, self.split) {
            (EvalSplit::TrainTest, SceneSplit::Train) => self.train_test.clone(),
            (EvalSplit::Test, SceneSplit::Test) => (0..self.frames.len()).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneDataset {
    pub scenes: Vec<Scene>,
}

impl SceneDataset {
    pub fn train_scenes(&self) -> impl Iterator<Item = &Scene> {
        self.scenes.iter().filter(|s| s.split == SceneSplit::Train)
    }

    pub fn scenes_for(&self, split: EvalSplit) -> impl Iterator<Item = &Scene> {
        let want = match split {
            EvalSplit::TrainTest => SceneSplit::Train,
            EvalSplit::Test => SceneSplit::Test,
        };
        self.scenes.iter().filter(move |s| s.split == want)
    }

    pub fn scene(&self, id: &str) -> Result<&Scene> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no scene `{id}` in dataset")))
    }
}

/// Parameters of a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

/// One test scene per nine, at least one.
pub fn n_test_scenes(n_scenes: usize) -> usize {
    ((n_scenes as f64 / 9.0).round() as usize).max(1)
}

/// Held-out frames per training scene.
pub fn n_train_test_frames(n_frames: usize) -> usize {
    (n_frames / 4).min(16)
}

/// Renders every frame of a scene with the analytic oracle.
pub fn render_scene(id: String, split: SceneSplit, spec: &SyntheticSceneSpec, rng: &mut impl Rng) -> Result<Scene> {
    spec.validate()?;
    let (near, far) = spec.bounds();
    let mut frames = Vec::with_capacity(spec.ring.n_frames);
    for f in 0..spec.ring.n_frames {
        let camera = spec.camera(f)?;
        let (mut rgb, mask, mut depth) = oracle_render(spec, &camera)?;
        for v in &mut rgb.data {
            *v = dequantize_u8(quantize_u8(*v));
        }
        let mask = Raster::new(mask.width, mask.height, 1, mask.data.iter().map(|&m| (m >= 0.5) as u8 as f64).collect())?;
        for v in &mut depth.data {
            *v = *v as f32 as f64;
        }
        frames.push(Frame {
            camera,
            image: rgb,
            mask,
            depth,
        });
    }
    let train_test = match split {
        SceneSplit::Train => {
            let mut idx: Vec<usize> = (0..frames.len()).collect();
            idx.shuffle(rng);
            let mut held: Vec<usize> = idx[..n_train_test_frames(frames.len())].to_vec();
            held.sort_unstable();
            held
        }
        SceneSplit::Test => Vec::new(),
    };
    Ok(Scene {
        id,
        split,
        near,
        far,
        frames,
        train_test,
        spec: Some(spec.clone()),
    })
}

/// Random soft-sphere scenes rendered in memory. Test scenes are seen from
/// azimuths interleaved with the training ring.
pub fn synthesize(cfg: &SynthConfig) -> Result<SceneDataset> {
    if cfg.n_scenes < 2 {
        return Err(Error::InvalidConfig("a dataset needs at least 2 scenes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n_scenes).collect();
    order.shuffle(&mut rng);
    let test: Vec<usize> = order[..n_test_scenes(cfg.n_scenes)].to_vec();
    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    for i in 0..cfg.n_scenes {
        let split = if test.contains(&i) { SceneSplit::Test } else { SceneSplit::Train };
        let ring = match split {
            SceneSplit::Train => CameraRing::new(cfg.n_frames),
            SceneSplit::Test => CameraRing::new(cfg.n_frames).interleaved(),
        };
        let spec = SyntheticSceneSpec::random(&mut rng, ring, cfg.width, cfg.height);
        let mut scene_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        scenes.push(render_scene(format!("scene_{i:03}"), split, &spec, &mut scene_rng)?);
    }
    Ok(SceneDataset { scenes })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    scenes: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    split: SceneSplit,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    near: f64,
    far: f64,
    width: usize,
    height: usize,
    train_test: Vec<usize>,
    frames: Vec<FrameFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<SyntheticSceneSpec>,
}

#[derive(Serialize, Deserialize)]
struct FrameFile {
    /// Row-major intrinsic matrix.
    k: [[f64; 3]; 3],
    /// Row-major world-to-camera rotation.
    r: [[f64; 3]; 3],
    t: [f64; 3],
    image: String,
    mask: String,
    depth: String,
}

fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn from_rows(r: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::from_fn(|i, j| r[i][j])
}

/// Writes `manifest.json` and one directory per scene with `cameras.json`,
/// PNG images and masks, and PFM depth maps.
pub fn write_dataset(dataset: &SceneDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        scenes: dataset
            .scenes
            .iter()
            .map(|s| ManifestEntry {
                id: s.id.clone(),
                split: s.split,
            })
            .collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    for scene in &dataset.scenes {
        let sdir = dir.join(&scene.id);
        fs::create_dir_all(&sdir).map_err(|e| Error::io(&sdir, e))?;
        let mut frames = Vec::with_capacity(scene.frames.len());
        for (i, f) in scene.frames.iter().enumerate() {
            let (image, mask, depth) = (format!("{i:03}_rgb.png"), format!("{i:03}_mask.png"), format!("{i:03}_depth.pfm"));
            write_png(&sdir.join(&image), &f.image)?;
            write_png(&sdir.join(&mask), &f.mask)?;
            write_pfm(&sdir.join(&depth), &f.depth)?;
            let t = f.camera.pose.translation();
            frames.push(FrameFile {
                k: rows(&f.camera.intrinsics.matrix()),
                r: rows(f.camera.pose.rotation()),
                t: [t.x, t.y, t.z],
                image,
                mask,
                depth,
            });
        }
        let (width, height) = scene
            .frames
            .first()
            .map(|f| (f.camera.intrinsics.width, f.camera.intrinsics.height))
            .unwrap_or((0, 0));
        let file = SceneFile {
            near: scene.near,
            far: scene.far,
            width,
            height,
            train_test: scene.train_test.clone(),
            frames,
            spec: scene.spec.clone(),
        };
        write_json(&sdir.join("cameras.json"), &file)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for entry in manifest.scenes {
        let sdir = dir.join(&entry.id);
        let file: SceneFile = read_json(&sdir.join("cameras.json"))?;
        let mut frames = Vec::with_capacity(file.frames.len());
        for f in &file.frames {
            let intr = Intrinsics::from_matrix(&from_rows(&f.k), file.width, file.height)?;
            let pose = Pose::new(from_rows(&f.r), Vec3::from(f.t))?;
            frames.push(Frame {
                camera: Camera::new(intr, pose),
                image: read_png(&sdir.join(&f.image), 3)?,
                mask: read_png(&sdir.join(&f.mask), 1)?,
                depth: read_pfm(&sdir.join(&f.depth))?,
            });
        }
        if file.train_test.iter().any(|&i| i >= frames.len()) {
            return Err(Error::io(&sdir, "held-out frame index out of range"));
        }
        let mut train_test = file.train_test;
        train_test.sort_unstable();
        train_test.dedup();
        scenes.push(Scene {
            id: entry.id,
            split: entry.split,
            near: file.near,
            far: file.far,
            frames,
            train_test,
            spec: file.spec,
        });
    }
    Ok(SceneDataset { scenes })
}

/// Synthesizes a dataset and writes it to `dir`.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SceneDataset> {
    let ds = synthesize(cfg)?;
    write_dataset(&ds, dir)?;
    Ok(ds)
}
