use wcr::data::{synthesize, SynthConfig};
use wcr::training::{ModelConfig, ModelKind, TrainConfig, Trainer};

fn moving_average(losses: &[f64]) -> f64 {
    losses.iter().sum::<f64>() / losses.len() as f64
}

#[test]
fn single_scene_loss_halves_within_500_steps() {
    let ds = synthesize(&SynthConfig {
        n_scenes: 2,
        n_frames: 12,
        width: 16,
        height: 16,
        seed: 5,
    })
    .unwrap();
    assert_eq!(ds.train_scenes().count(), 1);
    let cfg = TrainConfig {
        rays_per_iter: 64,
        batch_scenes: 1,
        lr: 5e-4,
        n_coarse: 16,
        n_fine: 16,
        iterations: 500,
        seed: 2,
        model: ModelConfig {
            kind: ModelKind::GlobalCode,
            width: 32,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg).unwrap();
    let losses: Vec<f64> = (0..cfg.iterations).map(|_| trainer.step(&ds).unwrap().loss).collect();
    let start = moving_average(&losses[..10]);
    let end = moving_average(&losses[losses.len() - 10..]);
    assert!(end <= 0.5 * start, "loss {start} -> {end}");
}
