use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nerf_stylize::config::RunConfig;
use nerf_stylize::pipeline::driver;
use nerf_stylize::Error;

/// Consistent 3D scene stylization: train a radiance field, embed styles,
/// and run mutual learning between the field and a 2D stylizer.
#[derive(Parser)]
#[command(name = "nerf-stylize", version, about)]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic posed dataset and the style-image set.
    MakeScene,
    /// Fit the radiance field on the training split.
    TrainNerf,
    /// Embed the style set as latent Gaussians.
    TrainVae,
    /// Pre-train the 2D decoder with the warped consistency loss.
    PretrainDecoder,
    /// Run the collaborative loop over style module, codes, and decoder.
    MutualTrain,
    /// Render a stylized camera path to PNG frames plus depth maps.
    Render {
        /// Style image to apply.
        #[arg(long)]
        style: PathBuf,
        /// Camera path file (dataset-manifest JSON). Mutually exclusive
        /// with --densify.
        #[arg(long, conflicts_with = "densify")]
        path: Option<PathBuf>,
        /// Interpolate the training cameras to N times as many poses.
        #[arg(long)]
        densify: Option<usize>,
        /// Name of the output directory under <out>/renders/.
        #[arg(long, default_value = "stylized")]
        name: String,
        /// Render the plain field and stylize each frame independently with
        /// the 2D network instead of the stylized field.
        #[arg(long)]
        baseline_2d: bool,
    },
    /// Compute the warped perceptual consistency report for rendered frames.
    Evaluate {
        /// Directory written by `render`.
        #[arg(long)]
        frames: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::MakeScene => driver::make_scene(&cfg),
        Command::TrainNerf => driver::train_nerf(&cfg).map(|_| ()),
        Command::TrainVae => driver::train_vae_stage(&cfg),
        Command::PretrainDecoder => driver::pretrain_decoder_stage(&cfg),
        Command::MutualTrain => driver::mutual_train(&cfg),
        Command::Render {
            style,
            path,
            densify,
            name,
            baseline_2d,
        } => {
            let source = match (path, densify) {
                (Some(file), _) => driver::PathSource::File(file.clone()),
                (None, Some(factor)) => driver::PathSource::Densify(*factor),
                (None, None) => driver::PathSource::Densify(1),
            };
            driver::render(&cfg, style, &source, name, *baseline_2d).map(|_| ())
        }
        Command::Evaluate { frames } => driver::evaluate(&cfg, frames).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are successes, usage errors exit 1
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) | Error::InvalidArgument(_) => 1,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}
