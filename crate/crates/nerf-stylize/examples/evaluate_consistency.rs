//! The warped perceptual consistency metric on its own: builds two tiny
//! frame sequences on ground-truth geometry (one perfectly consistent, one
//! with per-frame flicker) and prints their per-gap reports.
//!
//! ```bash
//! cargo run --release --example evaluate_consistency
//! ```

use nerf_stylize::consistency::{evaluate_sequence, EvalSequence};
use nerf_stylize::pipeline::synthetic::{generate_synthetic_scene, SceneSpec};
use nerf_stylize::stylizer::default_encoder;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nerf_stylize::Result<()> {
    let spec = SceneSpec {
        train_views: 12,
        test_views: 0,
        width: 64,
        height: 64,
        ..SceneSpec::default()
    };
    let dataset = generate_synthetic_scene(&spec, 7)?;
    let encoder = default_encoder::<f32>();
    let tolerance = (0.05 * (dataset.far - dataset.near)) as f32;

    let consistent = EvalSequence {
        frames: dataset.views.iter().map(|v| v.image.clone()).collect(),
        depths: dataset
            .views
            .iter()
            .map(|v| v.depth.clone().unwrap())
            .collect(),
        cameras: dataset.views.iter().map(|v| v.camera.clone()).collect(),
        style_id: "ground-truth renders".into(),
    };

    // the same frames with independent per-frame brightness flicker
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut flicker = consistent.clone();
    flicker.style_id = "per-frame flicker".into();
    for frame in flicker.frames.iter_mut() {
        let gain = 1.0 + rng.gen_range(-0.25f32..0.25);
        frame.mapv_inplace(|v| (v * gain).clamp(0.0, 1.0));
    }

    for seq in [&consistent, &flicker] {
        let report = evaluate_sequence(&encoder, seq, &[2, 6], 0, tolerance)?;
        print!("{}", report.to_text());
    }
    Ok(())
}
