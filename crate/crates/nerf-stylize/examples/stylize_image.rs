//! The 2D stylization path in isolation: encode, align statistics to a
//! style, decode. Pre-trains a small decoder for a few hundred steps first
//! so the output is meaningful. Takes a couple of minutes.
//!
//! ```bash
//! cargo run --release --example stylize_image
//! ```

use nerf_stylize::config::{ModelConfig, RunConfig};
use nerf_stylize::dataset::save_png;
use nerf_stylize::pipeline::driver;
use nerf_stylize::stylizer::{style_stats, Stylizer2d};

fn main() -> nerf_stylize::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.output_dir = "example-out/stylize_image".into();
    cfg.model = ModelConfig::desk_scale();
    cfg.scene.train_views = 8;
    cfg.scene.test_views = 0;
    cfg.scene.width = 64;
    cfg.scene.height = 64;
    cfg.styles.count = 3;
    cfg.styles.size = 64;
    cfg.schedule.nerf_steps = 300;
    cfg.schedule.decoder_pretrain_steps = 300;
    cfg.schedule.augment_views = 8;

    driver::make_scene(&cfg)?;
    driver::train_nerf(&cfg)?;
    driver::pretrain_decoder_stage(&cfg)?;

    let arts = driver::Artifacts::new(&cfg.output_dir);
    let encoder = driver::ensure_encoder(&arts)?;
    let decoder = nerf_stylize::stylizer::Decoder::from_checkpoint(
        &nerf_stylize::checkpoint::Checkpoint::read(&arts.decoder_pretrained_ckpt())?,
    )?;
    let stylizer = Stylizer2d { encoder, decoder };

    let dataset = nerf_stylize::dataset::ingest_dataset(&cfg.dataset_dir())?;
    let content = &dataset.views[3].image;
    let styles = driver::load_styles(&cfg)?;
    let out = std::path::Path::new("example-out/stylize_image");
    save_png(&out.join("content.png"), content)?;
    for (id, style_img) in &styles {
        let stats = style_stats(&stylizer.encoder.encode(style_img)?);
        let stylized = stylizer.stylize(content, &stats)?;
        save_png(&out.join(format!("stylized_{id}.png")), &stylized)?;
        println!("stylized content with {id}");
    }
    println!("outputs under {}", out.display());
    Ok(())
}
