//! Decoder pre-training quality on the seeded toy run: the warped
//! consistency loss on a held-out pair drops, and the re-encoded output's
//! statistics approach the target style (style loss below the plateau
//! threshold measured for this configuration).

use nerf_stylize::camera::CameraPose;
use nerf_stylize::pipeline::synthetic::{generate_styles, generate_synthetic_scene, SceneSpec};
use nerf_stylize::pipeline::{
    augment_views, pretrain_decoder, term_mean, AdainTargets, PretrainConfig, ViewPairs,
};
use nerf_stylize::radiance::{fit_nerf, NerfArch, NerfFitConfig, PosedImage};
use nerf_stylize::stylizer::{
    consistency_loss, default_encoder, style_loss, style_stats, Decoder, StyleStats,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn pretraining_distills_consistency_and_style() {
    let spec = SceneSpec {
        train_views: 6,
        test_views: 0,
        width: 32,
        height: 32,
        ..SceneSpec::default()
    };
    let dataset = generate_synthetic_scene(&spec, 5).unwrap();
    let train: Vec<PosedImage> = dataset
        .train_views()
        .iter()
        .map(|v| PosedImage {
            camera: v.camera.clone(),
            image: v.image.clone(),
        })
        .collect();
    let arch = NerfArch {
        l_pos: 4,
        l_dir: 1,
        depth: 3,
        width: 48,
        skip_at: 0,
    };
    let cfg = NerfFitConfig {
        steps: 150,
        batch_rays: 256,
        learning_rate: 5e-4,
        k_samples: 16,
    };
    let (radiance, _) = fit_nerf::<f32>(&train, &arch, &cfg, dataset.near, dataset.far, 5).unwrap();
    let cams: Vec<CameraPose> = train.iter().map(|v| v.camera.clone()).collect();
    let views = augment_views(&radiance, &cams, 6, 24).unwrap();
    let encoder = default_encoder::<f32>();
    let styles = generate_styles(2, 32, 5);
    let stats: Vec<StyleStats<f32>> = styles
        .iter()
        .map(|s| style_stats(&encoder.encode(s).unwrap()))
        .collect();
    let tol = (0.05 * (dataset.far - dataset.near)) as f32;
    let pairs = ViewPairs::build(&views, tol, 0.4).unwrap();
    let pre = PretrainConfig {
        steps: 300,
        learning_rate: 1e-4,
        lambda_s: 1.0,
        lambda_co: 50.0,
        seed: 9,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = Decoder::<f32>::init(&mut rng);

    // held-out pair: the first co-visible pair never influences sampling
    // identically (steps draw pairs at random), measure it before and after
    let (ti, tj, field) = &pairs.pairs[0];
    let targets = AdainTargets::build(&encoder, &views, &stats).unwrap();
    let o_i0 = init.decode(targets.get(*ti, 0));
    let o_j0 = init.decode(targets.get(*tj, 0));
    let (co_before, _) = consistency_loss(&o_i0, &o_j0, field).unwrap();

    let (dec, hist) = pretrain_decoder(&encoder, init, &views, &stats, &pairs, &pre).unwrap();

    let o_i1 = dec.decode(targets.get(*ti, 0));
    let o_j1 = dec.decode(targets.get(*tj, 0));
    let (co_after, _) = consistency_loss(&o_i1, &o_j1, field).unwrap();
    assert!(
        co_after < co_before,
        "held-out consistency did not improve: {co_before:.5} -> {co_after:.5}"
    );

    // re-encoded output statistics approach the target style; 0.1 is the
    // plateau threshold measured for this seeded configuration (final
    // instantaneous values sit near 0.03 from 0.22 at the start)
    let restylized = dec.decode(targets.get(1, 1));
    let out_stats = style_stats(&encoder.encode(&restylized).unwrap());
    let s_loss = style_loss(&out_stats, &stats[1]);
    assert!(
        s_loss < 0.1,
        "style loss {s_loss:.4} above the pre-training plateau threshold"
    );
    let early_style = term_mean(&hist, "style", 0..20);
    assert!(
        (s_loss as f64) < 0.5 * early_style,
        "style loss {s_loss:.4} did not clearly drop from its initial {early_style:.4}"
    );
}

#[test]
fn mutual_loop_reports_the_offending_nan_term() {
    use ndarray::Array1;
    use nerf_stylize::config::StageSchedule;
    use nerf_stylize::latent::{init_codes, StyleDistribution};
    use nerf_stylize::pipeline::{mutual_learn, MutualContext, TrainingState};
    use nerf_stylize::stylized::{LossWeights, StyleArch, StylizedFieldParams};

    let spec = SceneSpec {
        train_views: 3,
        test_views: 0,
        width: 16,
        height: 16,
        ..SceneSpec::default()
    };
    let dataset = generate_synthetic_scene(&spec, 4).unwrap();
    let train: Vec<PosedImage> = dataset
        .train_views()
        .iter()
        .map(|v| PosedImage {
            camera: v.camera.clone(),
            image: v.image.clone(),
        })
        .collect();
    let arch = NerfArch {
        l_pos: 2,
        l_dir: 1,
        depth: 2,
        width: 16,
        skip_at: 0,
    };
    let cfg = NerfFitConfig {
        steps: 5,
        batch_rays: 32,
        learning_rate: 5e-4,
        k_samples: 8,
    };
    let (radiance, _) = fit_nerf::<f32>(&train, &arch, &cfg, dataset.near, dataset.far, 4).unwrap();
    let cams: Vec<CameraPose> = train.iter().map(|v| v.camera.clone()).collect();
    let views = augment_views(&radiance, &cams, 3, 8).unwrap();
    let encoder = default_encoder::<f32>();
    let styles = generate_styles(1, 16, 4);
    let stats: Vec<StyleStats<f32>> = styles
        .iter()
        .map(|s| style_stats(&encoder.encode(s).unwrap()))
        .collect();
    // poisoned distribution: the distribution term becomes NaN immediately
    let dists = vec![StyleDistribution {
        mu: Array1::from_elem(4, f32::NAN),
        sigma: Array1::from_elem(4, 1.0f32),
    }];
    let view_ids: Vec<String> = views.iter().map(|v| v.name.clone()).collect();
    let style_ids = vec!["s".to_string()];
    let codes = init_codes(&dists, &view_ids, &style_ids, 3);
    let style_arch = StyleArch {
        l_pos: 2,
        depth: 2,
        width: 8,
        latent_dim: 4,
        use_view_dirs: false,
        l_dir: 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let stylized = StylizedFieldParams::init(&style_arch, &mut rng);
    let mut drng = ChaCha8Rng::seed_from_u64(3);
    let decoder = Decoder::init(&mut drng);
    let mut state = TrainingState::new(stylized, decoder, codes, 1e-4, 1e-4);
    let ctx = MutualContext {
        radiance: &radiance,
        encoder: &encoder,
        views: &views,
        style_stats: &stats,
        distributions: &dists,
        weights: LossWeights::default(),
        exact_nll: false,
        k_samples: 4,
        batch_rays: 4,
        seed: 5,
    };
    let schedule = StageSchedule {
        mutual_steps: 2,
        decoder_freeze_steps: 2,
        ..StageSchedule::default()
    };
    let err = mutual_learn(&mut state, &ctx, &schedule).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("mimic") || msg.contains("distribution"),
        "error does not name the term: {msg}"
    );
}
