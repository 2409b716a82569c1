//! Stage entry points shared by the command-line interface and the
//! integration tests. Each driver reads its prerequisites from the output
//! directory, runs one stage deterministically, and writes checkpoints,
//! loss logs, and content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraPose;
use crate::checkpoint::{sha256_file, Checkpoint};
use crate::config::RunConfig;
use crate::consistency::{evaluate_sequence, ConsistencyReport, EvalSequence};
use crate::dataset::{
    ingest_dataset, load_png, quantize_u8, save_dataset, save_depth, save_png, Dataset,
    SceneManifest, ViewRecord,
};
use crate::error::{Error, Result};
use crate::latent::{
    encode_style, inference_code, init_codes, train_vae, StyleDistribution, VaeConfig, VaeParams,
};
use crate::pipeline::{
    augment_views, interpolate_path, mutual_learn, pretrain_decoder, write_loss_csv, AugmentedView,
    LossRecord, MutualContext, PretrainConfig, TrainingState, ViewPairs,
};
use crate::radiance::{fit_nerf, psnr, render_image, NerfArch, NerfFitConfig, PosedImage,
    RadianceFieldParams,
};
use crate::rng::subseed;
use crate::stylized::{render_stylized_image, StyleArch, StylizedFieldParams};
use crate::stylizer::{
    default_encoder, style_stats, Decoder, Encoder, StyleStats, Stylizer2d, ENCODER_SHA256,
};

/// Canonical artifact locations under the run's output directory.
pub struct Artifacts {
    pub out: PathBuf,
}

impl Artifacts {
    pub fn new(out: impl Into<PathBuf>) -> Artifacts {
        Artifacts { out: out.into() }
    }

    pub fn encoder_ckpt(&self) -> PathBuf {
        self.out.join("checkpoints/encoder.ckpt")
    }
    pub fn nerf_ckpt(&self) -> PathBuf {
        self.out.join("checkpoints/nerf.ckpt")
    }
    pub fn vae_ckpt(&self) -> PathBuf {
        self.out.join("checkpoints/vae.ckpt")
    }
    pub fn decoder_pretrained_ckpt(&self) -> PathBuf {
        self.out.join("checkpoints/decoder_pretrained.ckpt")
    }
    pub fn state_ckpt(&self) -> PathBuf {
        self.out.join("checkpoints/training_state.ckpt")
    }
    pub fn log(&self, stage: &str) -> PathBuf {
        self.out.join(format!("logs/{stage}.csv"))
    }
    pub fn hashes(&self) -> PathBuf {
        self.out.join("hashes.json")
    }

    /// Records `path`'s content hash in the run's hash manifest.
    pub fn record_hash(&self, path: &Path) -> Result<()> {
        let mut map: BTreeMap<String, String> = if self.hashes().exists() {
            let text = std::fs::read_to_string(self.hashes())
                .map_err(|e| Error::io(self.hashes(), e))?;
            serde_json::from_str(&text).unwrap_or_default()
        } else {
            BTreeMap::new()
        };
        let rel = path
            .strip_prefix(&self.out)
            .unwrap_or(path)
            .to_string_lossy()
            .to_string();
        map.insert(rel, sha256_file(path)?);
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        std::fs::write(
            self.hashes(),
            serde_json::to_string_pretty(&map).expect("hash map serializes"),
        )
        .map_err(|e| Error::io(self.hashes(), e))?;
        Ok(())
    }
}

fn require(path: PathBuf, command: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPrerequisite {
            path,
            command: command.into(),
        })
    }
}

/// Writes the frozen encoder asset if missing, verifies its pinned hash,
/// and loads it.
pub fn ensure_encoder(arts: &Artifacts) -> Result<Encoder<f32>> {
    let path = arts.encoder_ckpt();
    if !path.exists() {
        default_encoder::<f32>().to_checkpoint().write(&path)?;
        arts.record_hash(&path)?;
    }
    let hash = sha256_file(&path)?;
    if hash != ENCODER_SHA256 {
        return Err(Error::Checkpoint(format!(
            "encoder asset {} hash {hash} does not match the pinned {ENCODER_SHA256}",
            path.display()
        )));
    }
    Encoder::from_checkpoint(&Checkpoint::read(&path)?)
}

fn load_dataset_for(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    if !dir.join(crate::dataset::MANIFEST_NAME).exists() {
        return Err(Error::MissingPrerequisite {
            path: dir.join(crate::dataset::MANIFEST_NAME),
            command: "make-scene".into(),
        });
    }
    ingest_dataset(&dir)
}

/// Style images sorted by file name, with their ids.
pub fn load_styles(cfg: &RunConfig) -> Result<Vec<(String, ndarray::Array3<f32>)>> {
    let dir = cfg.style_dir();
    if !dir.exists() {
        return Err(Error::MissingPrerequisite {
            path: dir,
            command: "make-scene".into(),
        });
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!(
            "no style PNGs found in {}",
            dir.display()
        )));
    }
    let mut styles = Vec::with_capacity(names.len());
    for path in names {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        styles.push((id, load_png(&path)?));
    }
    Ok(styles)
}

fn load_radiance(arts: &Artifacts) -> Result<RadianceFieldParams<f32>> {
    let path = require(arts.nerf_ckpt(), "train-nerf")?;
    RadianceFieldParams::from_checkpoint(&Checkpoint::read(&path)?)
}

fn load_vae(arts: &Artifacts) -> Result<VaeParams<f32>> {
    let path = require(arts.vae_ckpt(), "train-vae")?;
    VaeParams::from_checkpoint(&Checkpoint::read(&path)?)
}

fn load_pretrained_decoder(arts: &Artifacts) -> Result<Decoder<f32>> {
    let path = require(arts.decoder_pretrained_ckpt(), "pretrain-decoder")?;
    Decoder::from_checkpoint(&Checkpoint::read(&path)?)
}

fn load_state(arts: &Artifacts, cfg: &RunConfig) -> Result<TrainingState> {
    let path = require(arts.state_ckpt(), "mutual-train")?;
    TrainingState::from_checkpoint(
        &Checkpoint::read(&path)?,
        cfg.schedule.lr_mutual,
        cfg.schedule.lr_decoder,
    )
}

fn depth_tolerance(cfg: &RunConfig, near: f64, far: f64) -> f32 {
    (cfg.depth_tolerance_frac * (far - near)) as f32
}

/// `make-scene`: synthesize the posed dataset and the style set.
pub fn make_scene(cfg: &RunConfig) -> Result<()> {
    let arts = Artifacts::new(&cfg.output_dir);
    let dataset = crate::pipeline::synthetic::generate_synthetic_scene(&cfg.scene, cfg.seed)?;
    let dir = cfg.dataset_dir();
    save_dataset(&dir, &dataset)?;
    arts.record_hash(&dir.join(crate::dataset::MANIFEST_NAME))?;
    let styles =
        crate::pipeline::synthetic::generate_styles(cfg.styles.count, cfg.styles.size, cfg.seed);
    let style_dir = cfg.style_dir();
    for (j, style) in styles.iter().enumerate() {
        let path = style_dir.join(format!("style_{j:02}.png"));
        save_png(&path, style)?;
        arts.record_hash(&path)?;
    }
    ensure_encoder(&arts)?;
    println!(
        "scene: {} train + {} test views at {}x{}, {} styles, near {:.3} far {:.3}",
        cfg.scene.train_views,
        cfg.scene.test_views,
        cfg.scene.width,
        cfg.scene.height,
        cfg.styles.count,
        dataset.near,
        dataset.far
    );
    Ok(())
}

fn nerf_arch(cfg: &RunConfig) -> NerfArch {
    NerfArch {
        l_pos: cfg.model.l_pos,
        l_dir: cfg.model.l_dir,
        depth: cfg.model.nerf_depth,
        width: cfg.model.nerf_width,
        skip_at: cfg.model.nerf_skip,
    }
}

/// `train-nerf`: fit the radiance field on the training split and report
/// held-out PSNR.
pub fn train_nerf(cfg: &RunConfig) -> Result<f64> {
    let arts = Artifacts::new(&cfg.output_dir);
    let dataset = load_dataset_for(cfg)?;
    let train: Vec<PosedImage> = dataset
        .train_views()
        .iter()
        .map(|v| PosedImage {
            camera: v.camera.clone(),
            image: v.image.clone(),
        })
        .collect();
    let fit = NerfFitConfig {
        steps: cfg.schedule.nerf_steps,
        batch_rays: cfg.schedule.nerf_batch_rays,
        learning_rate: cfg.schedule.lr_nerf,
        k_samples: cfg.model.k_train,
    };
    let (mut params, history) = fit_nerf::<f32>(
        &train,
        &nerf_arch(cfg),
        &fit,
        dataset.near,
        dataset.far,
        cfg.seed,
    )?;
    params.background = cfg.model.background();
    let rows: Vec<LossRecord> = history
        .iter()
        .enumerate()
        .map(|(step, value)| LossRecord {
            step: step as u64,
            term: "nerf_mse".into(),
            value: *value,
        })
        .collect();
    write_loss_csv(&arts.log("train-nerf"), &rows)?;
    arts.record_hash(&arts.log("train-nerf"))?;
    params
        .to_checkpoint(serde_json::json!({ "config": cfg.snapshot() }))
        .write(&arts.nerf_ckpt())?;
    arts.record_hash(&arts.nerf_ckpt())?;

    let mut mean_psnr = f64::NAN;
    let tests = dataset.test_views();
    if !tests.is_empty() {
        let mut acc = 0.0;
        for view in &tests {
            let (img, _, _) = render_image(
                &params,
                &view.camera,
                cfg.model.k_eval,
                params.near,
                params.far,
                params.background_f(),
            );
            acc += psnr(&img, &view.image);
        }
        mean_psnr = acc / tests.len() as f64;
        println!(
            "radiance field: {} steps, final loss {:.5}, held-out PSNR {:.2} dB",
            cfg.schedule.nerf_steps,
            history.last().copied().unwrap_or(f64::NAN),
            mean_psnr
        );
    }
    Ok(mean_psnr)
}

/// `train-vae`: embed the style set as latent Gaussians.
pub fn train_vae_stage(cfg: &RunConfig) -> Result<()> {
    let arts = Artifacts::new(&cfg.output_dir);
    let encoder = ensure_encoder(&arts)?;
    let styles = load_styles(cfg)?;
    let corpus: Vec<ndarray::Array1<f32>> = styles
        .iter()
        .map(|(_, img)| Ok(style_stats(&encoder.encode(img)?).to_vector()))
        .collect::<Result<_>>()?;
    let vae_cfg = VaeConfig {
        latent_dim: cfg.model.latent_dim,
        hidden: cfg.model.vae_hidden,
        steps: cfg.schedule.vae_steps,
        learning_rate: cfg.schedule.lr_vae,
        beta: cfg.loss.vae_beta,
    };
    let (params, history) = train_vae(&corpus, &vae_cfg, cfg.seed)?;
    let rows: Vec<LossRecord> = history
        .iter()
        .enumerate()
        .map(|(step, value)| LossRecord {
            step: step as u64,
            term: "vae".into(),
            value: *value,
        })
        .collect();
    write_loss_csv(&arts.log("train-vae"), &rows)?;
    arts.record_hash(&arts.log("train-vae"))?;
    params
        .to_checkpoint(serde_json::json!({
            "config": cfg.snapshot(),
            "input_dim": corpus[0].len(),
            "latent_dim": cfg.model.latent_dim,
        }))
        .write(&arts.vae_ckpt())?;
    arts.record_hash(&arts.vae_ckpt())?;
    println!(
        "vae: {} styles embedded, final loss {:.5}",
        styles.len(),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Shared setup for the stages that need augmented views and style stats.
struct MutualSetup {
    radiance: RadianceFieldParams<f32>,
    views: Vec<AugmentedView>,
    style_ids: Vec<String>,
    stats: Vec<StyleStats<f32>>,
}

fn mutual_setup(cfg: &RunConfig, arts: &Artifacts, encoder: &Encoder<f32>) -> Result<MutualSetup> {
    let dataset = load_dataset_for(cfg)?;
    let radiance = load_radiance(arts)?;
    let cams: Vec<CameraPose> = dataset
        .train_views()
        .iter()
        .map(|v| v.camera.clone())
        .collect();
    let views = augment_views(
        &radiance,
        &cams,
        cfg.schedule.augment_views,
        cfg.model.k_eval,
    )?;
    let styles = load_styles(cfg)?;
    let mut style_ids = Vec::with_capacity(styles.len());
    let mut stats = Vec::with_capacity(styles.len());
    for (id, img) in &styles {
        style_ids.push(id.clone());
        stats.push(style_stats(&encoder.encode(img)?));
    }
    Ok(MutualSetup {
        radiance,
        views,
        style_ids,
        stats,
    })
}

/// `pretrain-decoder`: distill cross-view consistency into the decoder.
pub fn pretrain_decoder_stage(cfg: &RunConfig) -> Result<()> {
    let arts = Artifacts::new(&cfg.output_dir);
    let encoder = ensure_encoder(&arts)?;
    let setup = mutual_setup(cfg, &arts, &encoder)?;
    let tol = depth_tolerance(cfg, setup.radiance.near, setup.radiance.far);
    let pairs = ViewPairs::build(&setup.views, tol, cfg.loss.min_pair_coverage)?;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "decoder-init", 0));
    let decoder = Decoder::init(&mut rng);
    let pre_cfg = PretrainConfig {
        steps: cfg.schedule.decoder_pretrain_steps,
        learning_rate: cfg.schedule.lr_decoder,
        lambda_s: cfg.loss.weights.lambda_s,
        lambda_co: cfg.loss.lambda_co,
        seed: cfg.seed,
    };
    let (decoder, history) = pretrain_decoder(
        &encoder,
        decoder,
        &setup.views,
        &setup.stats,
        &pairs,
        &pre_cfg,
    )?;
    write_loss_csv(&arts.log("pretrain-decoder"), &history)?;
    arts.record_hash(&arts.log("pretrain-decoder"))?;
    decoder
        .to_checkpoint(serde_json::json!({ "config": cfg.snapshot() }))
        .write(&arts.decoder_pretrained_ckpt())?;
    arts.record_hash(&arts.decoder_pretrained_ckpt())?;
    println!(
        "decoder pre-training: {} steps over {} co-visible pairs",
        cfg.schedule.decoder_pretrain_steps,
        pairs.pairs.len()
    );
    Ok(())
}

/// Frozen inputs of the mutual loop, prepared once.
pub struct MutualAssets {
    pub radiance: RadianceFieldParams<f32>,
    pub encoder: Encoder<f32>,
    pub views: Vec<AugmentedView>,
    pub style_ids: Vec<String>,
    pub stats: Vec<StyleStats<f32>>,
    pub distributions: Vec<StyleDistribution<f32>>,
}

impl MutualAssets {
    pub fn context<'a>(&'a self, cfg: &RunConfig) -> MutualContext<'a> {
        MutualContext {
            radiance: &self.radiance,
            encoder: &self.encoder,
            views: &self.views,
            style_stats: &self.stats,
            distributions: &self.distributions,
            weights: cfg.loss.weights,
            exact_nll: cfg.loss.exact_nll,
            k_samples: cfg.model.k_train,
            batch_rays: cfg.schedule.mutual_batch_rays,
            seed: cfg.seed,
        }
    }
}

/// Loads all mutual-train prerequisites and builds the initial state.
pub fn prepare_mutual(cfg: &RunConfig) -> Result<(MutualAssets, TrainingState)> {
    let arts = Artifacts::new(&cfg.output_dir);
    let encoder = ensure_encoder(&arts)?;
    let setup = mutual_setup(cfg, &arts, &encoder)?;
    let vae = load_vae(&arts)?;
    let decoder = load_pretrained_decoder(&arts)?;
    let distributions: Vec<StyleDistribution<f32>> = setup
        .stats
        .iter()
        .map(|s| encode_style(&vae, &s.to_vector()))
        .collect::<Result<_>>()?;
    let view_ids: Vec<String> = setup.views.iter().map(|v| v.name.clone()).collect();
    let codes = init_codes(&distributions, &view_ids, &setup.style_ids, cfg.seed);
    let style_arch = StyleArch {
        l_pos: cfg.model.l_pos,
        depth: cfg.model.style_depth,
        width: cfg.model.style_width,
        latent_dim: cfg.model.latent_dim,
        use_view_dirs: cfg.model.use_view_dirs,
        l_dir: cfg.model.l_dir,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "style-init", 0));
    let stylized = StylizedFieldParams::init(&style_arch, &mut rng);
    let state = TrainingState::new(
        stylized,
        decoder,
        codes,
        cfg.schedule.lr_mutual,
        cfg.schedule.lr_decoder,
    );
    Ok((
        MutualAssets {
            radiance: setup.radiance,
            encoder,
            views: setup.views,
            style_ids: setup.style_ids,
            stats: setup.stats,
            distributions,
        },
        state,
    ))
}

/// Writes the mutual-loop artifacts: loss log and training-state checkpoint.
pub fn finish_mutual(cfg: &RunConfig, state: &TrainingState) -> Result<()> {
    let arts = Artifacts::new(&cfg.output_dir);
    write_loss_csv(&arts.log("mutual-train"), &state.history)?;
    arts.record_hash(&arts.log("mutual-train"))?;
    state
        .to_checkpoint(serde_json::json!({ "config": cfg.snapshot() }))
        .write(&arts.state_ckpt())?;
    arts.record_hash(&arts.state_ckpt())?;
    let early = crate::pipeline::term_mean(&state.history, "mimic", 0..100);
    let late_start = cfg.schedule.mutual_steps - cfg.schedule.mutual_steps / 20;
    let late = crate::pipeline::term_mean(
        &state.history,
        "mimic",
        late_start..cfg.schedule.mutual_steps,
    );
    println!(
        "mutual learning: {} steps, mimic first-100 mean {:.5} -> last-5% mean {:.5}",
        cfg.schedule.mutual_steps, early, late
    );
    Ok(())
}

/// `mutual-train`: the collaborative loop over style module, codes, and
/// decoder.
pub fn mutual_train(cfg: &RunConfig) -> Result<()> {
    let (assets, mut state) = prepare_mutual(cfg)?;
    let ctx = assets.context(cfg);
    mutual_learn(&mut state, &ctx, &cfg.schedule)?;
    finish_mutual(cfg, &state)
}

/// Where `render` gets its camera path.
pub enum PathSource {
    /// JSON file in the dataset-manifest format (images are ignored).
    File(PathBuf),
    /// Interpolate the training cameras to `factor` times as many poses.
    Densify(usize),
}

/// `render`: stylize a camera path with one style image. With
/// `baseline_2d`, render the plain field and stylize each frame
/// independently with the 2D network instead.
pub fn render(
    cfg: &RunConfig,
    style_path: &Path,
    source: &PathSource,
    out_name: &str,
    baseline_2d: bool,
) -> Result<PathBuf> {
    let arts = Artifacts::new(&cfg.output_dir);
    let encoder = ensure_encoder(&arts)?;
    let radiance = load_radiance(&arts)?;
    let state = load_state(&arts, cfg)?;
    let style_image = load_png(style_path)?;
    let stats = style_stats(&encoder.encode(&style_image)?);
    let style_id = style_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "style".into());

    let cameras: Vec<CameraPose> = match source {
        PathSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let manifest: SceneManifest =
                serde_json::from_str(&text).map_err(|e| Error::Manifest {
                    line: e.line(),
                    message: e.to_string(),
                })?;
            manifest
                .views
                .iter()
                .map(|v| v.to_camera())
                .collect::<Result<_>>()?
        }
        PathSource::Densify(factor) => {
            let dataset = load_dataset_for(cfg)?;
            let cams: Vec<CameraPose> = dataset
                .train_views()
                .iter()
                .map(|v| v.camera.clone())
                .collect();
            interpolate_path(&cams, cams.len() * factor.max(&1))?
        }
    };

    let out_dir = cfg.output_dir.join("renders").join(out_name);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let k = cfg.model.k_eval;

    let stylizer = Stylizer2d {
        encoder: encoder.clone(),
        decoder: state.decoder.clone(),
    };
    let code = if baseline_2d {
        None
    } else {
        let vae = load_vae(&arts)?;
        let dist = encode_style(&vae, &stats.to_vector())?;
        Some(inference_code(&dist))
    };
    let mut records = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.iter().enumerate() {
        let (image, depth) = match &code {
            None => {
                let (plain, depth, _) = render_image(
                    &radiance,
                    camera,
                    k,
                    radiance.near,
                    radiance.far,
                    radiance.background_f(),
                );
                (stylizer.stylize(&plain, &stats)?, depth)
            }
            Some(code) => {
                render_stylized_image(&state.stylized, &radiance, camera, k, code.view())?
            }
        };
        let frame_name = format!("frame_{i:03}.png");
        let depth_name = format!("frame_{i:03}.depth.bin");
        save_png(&out_dir.join(&frame_name), &quantize_u8(&image))?;
        save_depth(&out_dir.join(&depth_name), &depth)?;
        let mut record = ViewRecord::from_camera(camera, frame_name);
        record.depth = Some(depth_name);
        records.push(record);
    }
    let manifest = SceneManifest {
        format_version: 1,
        near: radiance.near,
        far: radiance.far,
        views: records,
    };
    std::fs::write(
        out_dir.join(crate::dataset::MANIFEST_NAME),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&out_dir, e))?;
    std::fs::write(
        out_dir.join("render_meta.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "style_id": style_id,
            "baseline_2d": baseline_2d,
            "k": k,
        }))
        .expect("meta serializes"),
    )
    .map_err(|e| Error::io(&out_dir, e))?;
    println!(
        "rendered {} frames to {} ({})",
        cameras.len(),
        out_dir.display(),
        if baseline_2d { "per-frame 2D baseline" } else { "stylized field" }
    );
    Ok(out_dir)
}

/// `evaluate`: warped perceptual consistency of a rendered frame directory.
pub fn evaluate(cfg: &RunConfig, frames_dir: &Path) -> Result<ConsistencyReport> {
    let arts = Artifacts::new(&cfg.output_dir);
    let encoder = ensure_encoder(&arts)?;
    if !frames_dir.join(crate::dataset::MANIFEST_NAME).exists() {
        return Err(Error::MissingPrerequisite {
            path: frames_dir.join(crate::dataset::MANIFEST_NAME),
            command: "render".into(),
        });
    }
    let dataset = ingest_dataset(frames_dir)?;
    let style_id = std::fs::read_to_string(frames_dir.join("render_meta.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("style_id").and_then(|s| s.as_str()).map(String::from))
        .unwrap_or_else(|| "unknown".into());
    let mut seq = EvalSequence {
        frames: Vec::with_capacity(dataset.views.len()),
        depths: Vec::with_capacity(dataset.views.len()),
        cameras: Vec::with_capacity(dataset.views.len()),
        style_id,
    };
    for view in &dataset.views {
        let depth = view.depth.clone().ok_or_else(|| {
            Error::Dataset(format!("frame {} carries no depth map", view.name))
        })?;
        seq.frames.push(view.image.clone());
        seq.depths.push(depth);
        seq.cameras.push(view.camera.clone());
    }
    let tol = depth_tolerance(cfg, dataset.near, dataset.far);
    let report = evaluate_sequence(
        &encoder,
        &seq,
        &cfg.eval.gaps,
        cfg.eval.pair_limit,
        tol,
    )?;
    let eval_dir = cfg.output_dir.join("eval");
    std::fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    let base = frames_dir
        .file_name()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "frames".into());
    report.write_csv(&eval_dir.join(format!("{base}.csv")))?;
    std::fs::write(eval_dir.join(format!("{base}.txt")), report.to_text())
        .map_err(|e| Error::io(&eval_dir, e))?;
    arts.record_hash(&eval_dir.join(format!("{base}.csv")))?;
    print!("{}", report.to_text());
    Ok(report)
}
