//! Conditional stylized rendering: after a micro training run, renders the
//! densified camera path under two different styles with the inference-time
//! latent (the embedded distribution's mean).
//!
//! ```bash
//! cargo run --release --example render_path
//! ```

use nerf_stylize::config::{ModelConfig, RunConfig};
use nerf_stylize::pipeline::driver::{self, PathSource};

fn main() -> nerf_stylize::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.output_dir = "example-out/render_path".into();
    cfg.model = ModelConfig::desk_scale();
    cfg.scene.train_views = 6;
    cfg.scene.test_views = 0;
    cfg.scene.width = 48;
    cfg.scene.height = 48;
    cfg.styles.count = 2;
    cfg.styles.size = 48;
    cfg.schedule.nerf_steps = 250;
    cfg.schedule.vae_steps = 400;
    cfg.schedule.decoder_pretrain_steps = 100;
    cfg.schedule.mutual_steps = 300;
    cfg.schedule.decoder_freeze_steps = 120;
    cfg.schedule.mutual_batch_rays = 128;
    cfg.schedule.augment_views = 6;
    cfg.model.k_train = 24;
    cfg.model.k_eval = 32;

    driver::make_scene(&cfg)?;
    driver::train_nerf(&cfg)?;
    driver::train_vae_stage(&cfg)?;
    driver::pretrain_decoder_stage(&cfg)?;
    driver::mutual_train(&cfg)?;

    for j in 0..cfg.styles.count {
        let style = cfg.style_dir().join(format!("style_{j:02}.png"));
        let dir = driver::render(
            &cfg,
            &style,
            &PathSource::Densify(2),
            &format!("style_{j:02}"),
            false,
        )?;
        println!("style {j}: frames in {}", dir.display());
    }
    Ok(())
}
