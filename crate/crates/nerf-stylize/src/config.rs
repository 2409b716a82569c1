//! Run configuration: one TOML file drives every stage. Unknown keys are
//! rejected; every field has a documented default (see `RunConfig::default`
//! and the README).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::synthetic::SceneSpec;
use crate::stylized::LossWeights;

/// Step counts, batch sizes and learning rates for every stage.
///
/// Defaults are the desk-scale schedule (mutual 5k with a 2k decoder
/// freeze); [`StageSchedule::paper_scale`] restores the full 50k/20k/1k
/// protocol.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSchedule {
    pub nerf_steps: u64,
    pub vae_steps: u64,
    pub decoder_pretrain_steps: u64,
    pub mutual_steps: u64,
    /// The decoder stays bitwise frozen for this many initial mutual steps.
    pub decoder_freeze_steps: u64,
    pub nerf_batch_rays: usize,
    pub mutual_batch_rays: usize,
    /// Number of views rendered from the frozen field as mutual-learning data.
    pub augment_views: usize,
    pub lr_nerf: f64,
    pub lr_vae: f64,
    pub lr_decoder: f64,
    pub lr_mutual: f64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        StageSchedule {
            nerf_steps: 20_000,
            vae_steps: 2_000,
            decoder_pretrain_steps: 1_000,
            mutual_steps: 5_000,
            decoder_freeze_steps: 2_000,
            nerf_batch_rays: 1024,
            mutual_batch_rays: 256,
            augment_views: 20,
            lr_nerf: 5e-4,
            lr_vae: 1e-3,
            lr_decoder: 1e-4,
            lr_mutual: 1e-4,
        }
    }
}

impl StageSchedule {
    /// The full-scale protocol: 50k collaborative steps, decoder frozen for
    /// the first 20k, decoder pre-trained for 1k.
    pub fn paper_scale() -> Self {
        StageSchedule {
            mutual_steps: 50_000,
            decoder_freeze_steps: 20_000,
            decoder_pretrain_steps: 1_000,
            ..StageSchedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.decoder_freeze_steps > self.mutual_steps {
            return Err(Error::Config(format!(
                "schedule.decoder_freeze_steps ({}) exceeds mutual_steps ({})",
                self.decoder_freeze_steps, self.mutual_steps
            )));
        }
        if self.nerf_batch_rays == 0 || self.mutual_batch_rays == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.augment_views == 0 {
            return Err(Error::Config("schedule.augment_views must be >= 1".into()));
        }
        Ok(())
    }
}

/// Network and sampling hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Positional-encoding bandwidth for 3D positions.
    pub l_pos: usize,
    /// Positional-encoding bandwidth for view directions.
    pub l_dir: usize,
    pub nerf_depth: usize,
    pub nerf_width: usize,
    pub nerf_skip: usize,
    pub style_depth: usize,
    pub style_width: usize,
    pub latent_dim: usize,
    pub vae_hidden: usize,
    /// Ablation switch: condition the style module on view direction too.
    pub use_view_dirs: bool,
    /// Samples per ray during training.
    pub k_train: usize,
    /// Samples per ray during evaluation and rendering.
    pub k_eval: usize,
    /// Reserved: hierarchical (coarse/fine) sampling is not implemented at
    /// desk scale and must stay false.
    pub hierarchical: bool,
    /// Composite onto white instead of black.
    pub white_background: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            l_pos: 10,
            l_dir: 4,
            nerf_depth: 8,
            nerf_width: 256,
            nerf_skip: 4,
            style_depth: 4,
            style_width: 256,
            latent_dim: 32,
            vae_hidden: 128,
            use_view_dirs: false,
            k_train: 64,
            k_eval: 128,
            hierarchical: false,
            white_background: false,
        }
    }
}

impl ModelConfig {
    /// The scaled-down network used by the seeded toy runs and examples.
    pub fn desk_scale() -> Self {
        ModelConfig {
            l_pos: 6,
            l_dir: 2,
            nerf_depth: 4,
            nerf_width: 64,
            nerf_skip: 2,
            style_depth: 4,
            style_width: 64,
            k_train: 32,
            k_eval: 48,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_pos < 1 || self.l_dir < 1 {
            return Err(Error::Config(
                "model.l_pos and model.l_dir must be >= 1".into(),
            ));
        }
        if self.k_train < 2 || self.k_eval < 2 {
            return Err(Error::Config("model.k_train and model.k_eval must be >= 2".into()));
        }
        if self.nerf_depth < 2 || self.style_depth < 2 {
            return Err(Error::Config("network depth must be >= 2".into()));
        }
        if self.hierarchical {
            return Err(Error::Config(
                "model.hierarchical is reserved and not implemented; set it to false".into(),
            ));
        }
        Ok(())
    }

    pub fn background(&self) -> [f64; 3] {
        if self.white_background {
            [1.0; 3]
        } else {
            [0.0; 3]
        }
    }
}

/// Loss weighting and pairing knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    #[serde(flatten)]
    pub weights: LossWeights,
    /// Weight of the warped consistency loss during decoder pre-training.
    pub lambda_co: f64,
    /// Use the exact Gaussian negative log-likelihood instead of the printed
    /// distribution loss (ablation).
    pub exact_nll: bool,
    /// Minimum warp-mask coverage for a view pair to count as co-visible.
    pub min_pair_coverage: f64,
    /// KL weight of the style VAE.
    pub vae_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: LossWeights::default(),
            lambda_co: 50.0,
            exact_nll: false,
            min_pair_coverage: 0.4,
            vae_beta: 0.01,
        }
    }
}

/// Consistency-evaluation protocol.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// View-index gaps to evaluate, short and long range.
    pub gaps: Vec<usize>,
    /// Frame-count densification of the evaluation path relative to the
    /// training views.
    pub densify: usize,
    /// Cap on evaluated pairs per gap; 0 means all available.
    pub pair_limit: usize,
    /// Use ground-truth depth instead of the field's expected depth
    /// (harness self-tests only).
    pub use_gt_depth: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gaps: vec![5, 35],
            densify: 3,
            pair_limit: 0,
            use_gt_depth: false,
        }
    }
}

/// Style-image set generated by `make-scene`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleSetConfig {
    pub count: usize,
    pub size: usize,
}

impl Default for StyleSetConfig {
    fn default() -> Self {
        StyleSetConfig { count: 5, size: 96 }
    }
}

/// The one config that drives all subcommands.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Dataset directory; defaults to `<output_dir>/scene`.
    pub dataset_dir: Option<PathBuf>,
    /// Style-image directory; defaults to `<output_dir>/styles`.
    pub style_dir: Option<PathBuf>,
    /// Occlusion tolerance for warping, as a fraction of the scene's
    /// `far - near` range.
    pub depth_tolerance_frac: f64,
    pub scene: SceneSpec,
    pub styles: StyleSetConfig,
    pub model: ModelConfig,
    pub schedule: StageSchedule,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            dataset_dir: None,
            style_dir: None,
            depth_tolerance_frac: 0.05,
            scene: SceneSpec::default(),
            styles: StyleSetConfig::default(),
            model: ModelConfig::default(),
            schedule: StageSchedule::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.loss.weights.validate()?;
        if self.loss.lambda_co < 0.0 {
            return Err(Error::Config("loss.lambda_co must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.loss.min_pair_coverage) {
            return Err(Error::Config(
                "loss.min_pair_coverage must lie in [0, 1]".into(),
            ));
        }
        if self.eval.gaps.is_empty() {
            return Err(Error::Config("eval.gaps must not be empty".into()));
        }
        if self.eval.densify == 0 {
            return Err(Error::Config("eval.densify must be >= 1".into()));
        }
        if !(self.depth_tolerance_frac > 0.0) {
            return Err(Error::Config(
                "depth_tolerance_frac must be positive".into(),
            ));
        }
        if self.scene.width % 8 != 0 || self.scene.height % 8 != 0 {
            return Err(Error::Config(
                "scene.width and scene.height must be multiples of 8 for the stylizer".into(),
            ));
        }
        if self.styles.count == 0 {
            return Err(Error::Config("styles.count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("scene"))
    }

    pub fn style_dir(&self) -> PathBuf {
        self.style_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("styles"))
    }

    /// JSON snapshot embedded into every checkpoint this run writes.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
