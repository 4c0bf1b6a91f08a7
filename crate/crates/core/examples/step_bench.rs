//! Rough per-phase timing of one training step at desk scale.

use std::time::Instant;

use noise2norm::model::{init_model, mnet_forward, ModelConfig};
use noise2norm::msssim::{mix_loss, LossConfig, SsimParams};
use noise2norm::noise::{inject_noise, make_multiscale, NoiseConfig};
use noise2norm::tensor::{autograd, ops, Shape, Tensor};
use noise2norm::training::{adamw_step, AdamState, TrainConfig};

fn main() {
    let model_cfg = ModelConfig::default();
    let noise_cfg = NoiseConfig::default();
    let ssim = SsimParams::default();
    let loss_cfg = LossConfig::default();
    let train_cfg = TrainConfig::default();

    let mut params = init_model::<f32>(&model_cfg, 1).unwrap();
    let mut adam = AdamState::new(&params);
    let raw = Tensor::<f32>::randn(Shape::new(4, 3, 64, 64), 0.5, 0.15, 2).unwrap();
    let raw = Tensor::from_vec(
        raw.shape(),
        raw.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
    .unwrap();

    // warmup + phase timing
    for round in 0..3 {
        let t0 = Instant::now();
        let (x0, noisy) = inject_noise(&raw, &noise_cfg, 42).unwrap();
        let scales = make_multiscale(&noisy, model_cfg.num_scales).unwrap();
        let t1 = Instant::now();

        // untracked forward
        let recon = mnet_forward(&scales, &params, &model_cfg).unwrap();
        let t2 = Instant::now();

        // untracked loss
        let _ = mix_loss(&recon, &x0, &ssim, &loss_cfg).unwrap();
        let t3 = Instant::now();

        // full recorded step
        params.zero_grads();
        autograd::start_graph::<f32>().unwrap();
        let recon = mnet_forward(&scales, &params, &model_cfg).unwrap();
        let loss = mix_loss(&recon, &x0, &ssim, &loss_cfg).unwrap();
        let t4 = Instant::now();
        autograd::backward(&loss).unwrap();
        let t5 = Instant::now();
        adamw_step(&mut params, &mut adam, 1e-4, &train_cfg).unwrap();
        let t6 = Instant::now();

        println!(
            "round {round}: prep {:5.1}ms | fwd {:5.1}ms | loss {:5.1}ms | rec-fwd+loss {:6.1}ms | bwd {:6.1}ms | adam {:5.1}ms",
            (t1 - t0).as_secs_f64() * 1e3,
            (t2 - t1).as_secs_f64() * 1e3,
            (t3 - t2).as_secs_f64() * 1e3,
            (t4 - t3).as_secs_f64() * 1e3,
            (t5 - t4).as_secs_f64() * 1e3,
            (t6 - t5).as_secs_f64() * 1e3,
        );
        let _ = ops::sum_all(&loss);
    }
}
