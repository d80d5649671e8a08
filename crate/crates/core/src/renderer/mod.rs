//! Emission-absorption ray marching.
//!
//! Each ray is sampled at stratified depths, the field is queried there, and
//! the samples are composited front to back. A second, importance-sampled
//! pass concentrates samples where the first found mass. Depths are
//! camera-frame `z` values, so interval widths are differences in `z`.

mod ea;
mod march;
mod sampling;

pub use ea::{composite, ea_weights, EaComposite, EaWeights, MIN_DEPTH_MASK};
pub use march::{
    render_image, render_ray, render_rays, Conditioning, FnSource, NeuralSource, RadianceSource, RayRender,
    RenderConfig, RenderedImage, RenderedRays,
};
pub use sampling::{fine_depths, importance_depths, stratified_depths, DepthSamples, PDF_FLOOR};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, Tape, Tensor, Var};
    use crate::fields::{FieldConfig, HarmonicConfig, RadianceField};
    use crate::geometry::{Camera, Intrinsics, PixelCoord, Pose, Ray, Vec3};
    use crate::wcr::ViewVars;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn front_camera(size: usize) -> Camera {
        let pose = Pose::look_at(Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), Vec3::y()).unwrap();
        Camera::new(Intrinsics::from_fov(40.0, size, size).unwrap(), pose)
    }

    fn blob(p: &Vec3, _d: &Vec3) -> ([f64; 3], f64) {
        let sigma = 3.0 * (-p.norm_squared() / (2.0 * 0.5 * 0.5)).exp();
        let c = [0.5 + 0.4 * (2.0 * p.x).sin(), 0.5 + 0.4 * (3.0 * p.y).cos(), 0.3 + 0.2 * p.z];
        (c, sigma)
    }

    #[test]
    fn empty_scene_renders_black() {
        let source = FnSource(|_: &Vec3, _: &Vec3| ([0.7; 3], 0.0));
        let cam = front_camera(8);
        let img = render_image(&mut Tape::new(), &source, &cam, 2.0, 6.0, &RenderConfig::default(), &mut rng()).unwrap();
        assert!(img.rgb.data.iter().all(|&v| v == 0.0));
        assert!(img.mask.data.iter().all(|&v| v == 0.0));
        assert!(img.depth.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn opaque_slab_gives_its_color_and_depth() {
        let c = [0.9, 0.3, 0.1];
        let d = 3.37;
        let source = FnSource(move |p: &Vec3, _: &Vec3| (c, if p.z >= d - 4.0 && p.z <= d - 3.0 { 1e3 } else { 0.0 }));
        let cam = front_camera(4);
        let cfg = RenderConfig::default();
        let (near, far) = (1.0, 6.0);
        let stratum = (far - near) / cfg.n_coarse as f64;
        for px in [PixelCoord::new(0.0, 0.0), PixelCoord::new(1.5, 2.0), PixelCoord::new(3.0, 3.0)] {
            let ray = cam.ray(px, near, far).unwrap();
            let r = render_ray(&ray, &source, &mut Tape::new(), &cfg, &mut rng()).unwrap();
            for k in 0..3 {
                assert!((r.pixel()[k] - c[k]).abs() < 1e-6, "{:?}", r.pixel());
            }
            assert!((r.expected_depth - d).abs() <= stratum, "{} vs {d}", r.expected_depth);
        }
    }

    #[test]
    fn doubling_samples_barely_moves_smooth_scene() {
        let source = FnSource(blob);
        let cam = front_camera(6);
        let coarse = RenderConfig {
            n_coarse: 64,
            n_fine: 64,
            ..Default::default()
        };
        let fine = RenderConfig {
            n_coarse: 128,
            n_fine: 128,
            ..Default::default()
        };
        let a = render_image(&mut Tape::new(), &source, &cam, 2.0, 6.0, &coarse, &mut rng()).unwrap();
        let b = render_image(&mut Tape::new(), &source, &cam, 2.0, 6.0, &fine, &mut rng()).unwrap();
        for (x, y) in a.rgb.data.iter().zip(&b.rgb.data) {
            assert!((x - y).abs() < 2e-2);
        }
    }

    #[test]
    fn error_halves_when_samples_double() {
        let source = FnSource(blob);
        let cam = front_camera(5);
        let rays: Vec<Ray> = cam.pixel_rays(2.0, 6.0).unwrap();
        let render = |n: usize| -> Vec<[f64; 3]> {
            let cfg = RenderConfig {
                n_coarse: n,
                n_fine: 0,
                ..Default::default()
            };
            let out = render_rays(&mut Tape::new(), &source, &rays, &cfg, &mut rng()).unwrap();
            out.rays.iter().map(|r| r.pixel()).collect()
        };
        let oracle = render(4096);
        let err = |n: usize| -> f64 {
            render(n)
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).sum::<f64>())
                .sum::<f64>()
        };
        let (e32, e64, e128) = (err(32), err(64), err(128));
        assert!(e64 <= e32 / 2.0 && e128 <= e64 / 2.0, "{e32} {e64} {e128}");
    }

    #[test]
    fn eval_renders_are_bit_identical() {
        let source = FnSource(blob);
        let cam = front_camera(6);
        let cfg = RenderConfig {
            chunk_rays: 7,
            ..Default::default()
        };
        let a = render_image(&mut Tape::new(), &source, &cam, 2.0, 6.0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = render_image(&mut Tape::new(), &source, &cam, 2.0, 6.0, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batched_rays_match_single_rays() {
        let source = FnSource(blob);
        let cam = front_camera(3);
        let rays = cam.pixel_rays(2.0, 6.0).unwrap();
        let cfg = RenderConfig {
            n_coarse: 16,
            n_fine: 16,
            ..Default::default()
        };
        let mut tape = Tape::new();
        let batch = render_rays(&mut tape, &source, &rays, &cfg, &mut rng()).unwrap();
        let out = tape.value(batch.output).clone();
        for (i, ray) in rays.iter().enumerate() {
            let single = render_ray(ray, &source, &mut Tape::new(), &cfg, &mut rng()).unwrap();
            assert_eq!(single, batch.rays[i]);
            let row = &out.data()[4 * i..4 * i + 4];
            for k in 0..3 {
                assert!((row[k] - single.pixel()[k]).abs() < 1e-15);
            }
            assert!((row[3] - single.mask).abs() < 1e-15);
            assert!((single.probs.iter().sum::<f64>() + single.escape - 1.0).abs() < 1e-9);
        }
    }

    fn tiny_field(latent: usize) -> RadianceField {
        let cfg = FieldConfig {
            width: 8,
            depth: 2,
            skip: 1,
            harmonic: HarmonicConfig {
                n_freqs_x: 1,
                n_freqs_r: 1,
                include_input: true,
            },
            latent_dim: latent,
        };
        let mut rf = RadianceField::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        // Push density up so the rays carry visible mass.
        let k = 2 * cfg.depth + 1;
        rf.params_mut()[k].data_mut()[0] = 1.0;
        rf
    }

    #[test]
    fn pixel_gradients_reach_field_and_code() {
        let rf = tiny_field(3);
        let cam = front_camera(4);
        let rays = vec![
            cam.ray(PixelCoord::new(1.0, 2.0), 3.0, 5.0).unwrap(),
            cam.ray(PixelCoord::new(2.5, 0.5), 3.0, 5.0).unwrap(),
        ];
        let cfg = RenderConfig {
            n_coarse: 4,
            n_fine: 0,
            ..Default::default()
        };
        let mut inputs = rf.params().to_vec();
        inputs.push(Tensor::new(vec![1, 3], vec![0.3, -0.2, 0.5]).unwrap());
        let n = rf.params().len();
        let report = grad_check(
            |tape: &mut Tape, v: &[Var]| {
                let source = NeuralSource {
                    field: &rf,
                    params: v[..n].to_vec(),
                    conditioning: Conditioning::Global(vec![v[n]]),
                };
                let out = render_rays(tape, &source, &rays, &cfg, &mut rng())?;
                let sq = tape.square(out.output)?;
                tape.sum(sq)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{:?}", report.per_input);
    }

    #[test]
    fn pixel_gradients_reach_source_features() {
        let (d, c) = (2, 2);
        let rf = tiny_field(d + 1 + c);
        let target = front_camera(4);
        let src_pose = Pose::look_at(Vec3::new(3.0, 0.5, -2.5), Vec3::zeros(), Vec3::y()).unwrap();
        let src_cam = Camera::new(Intrinsics::from_fov(50.0, 6, 6).unwrap(), src_pose);
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let field = Tensor::new(vec![6, 6, d], (0..6 * 6 * d).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect()).unwrap();
        let code = Tensor::new(vec![1, c], vec![0.4, -0.1]).unwrap();
        let rays = vec![
            target.ray(PixelCoord::new(1.0, 2.0), 3.5, 4.5).unwrap(),
            target.ray(PixelCoord::new(2.0, 1.5), 3.5, 4.5).unwrap(),
        ];
        let cfg = RenderConfig {
            n_coarse: 4,
            n_fine: 0,
            ..Default::default()
        };
        let mut inputs = rf.params().to_vec();
        inputs.push(field);
        inputs.push(code);
        let n = rf.params().len();
        let report = grad_check(
            |tape: &mut Tape, v: &[Var]| {
                let source = NeuralSource {
                    field: &rf,
                    params: v[..n].to_vec(),
                    conditioning: Conditioning::Views(vec![ViewVars {
                        camera: &src_cam,
                        field: v[n],
                        global: v[n + 1],
                    }]),
                };
                let out = render_rays(tape, &source, &rays, &cfg, &mut rng())?;
                let sq = tape.square(out.output)?;
                tape.sum(sq)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{:?}", report.per_input);
    }
}
