//! Fits a small radiance field on a synthetic scene and reports held-out
//! PSNR plus depth-map coverage. Takes about a minute.
//!
//! ```bash
//! cargo run --release --example train_nerf
//! ```

use nerf_stylize::config::{ModelConfig, RunConfig};
use nerf_stylize::pipeline::driver;

fn main() -> nerf_stylize::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.output_dir = "example-out/train_nerf".into();
    cfg.model = ModelConfig::desk_scale();
    cfg.scene.train_views = 12;
    cfg.scene.test_views = 2;
    cfg.scene.width = 64;
    cfg.scene.height = 64;
    cfg.schedule.nerf_steps = 400;
    cfg.schedule.nerf_batch_rays = 1024;

    driver::make_scene(&cfg)?;
    let psnr = driver::train_nerf(&cfg)?;
    println!("held-out PSNR after {} steps: {psnr:.2} dB", cfg.schedule.nerf_steps);
    println!("checkpoint: {}", driver::Artifacts::new(&cfg.output_dir).nerf_ckpt().display());
    Ok(())
}
