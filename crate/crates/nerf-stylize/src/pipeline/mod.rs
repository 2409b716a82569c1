//! Stage orchestration: view augmentation from the frozen field, decoder
//! pre-training with the warped consistency loss, and the mutual-learning
//! loop with its freeze schedule.

pub mod driver;
pub mod synthetic;

use nalgebra::UnitQuaternion;
use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{compute_warp_field, CameraPose, WarpField};
use crate::checkpoint::{push_mlp, read_mlp, Checkpoint};
use crate::config::StageSchedule;
use crate::error::{Error, Result};
use crate::latent::{
    distribution_loss, distribution_loss_grad, distribution_loss_nll,
    distribution_loss_nll_grad, LatentCodeTable, StyleDistribution,
};
use crate::nn::{Activation, Adam};
use crate::radiance::{
    composite_weights, render_image, sample_ray, RadianceFieldParams, VolumeField,
};
use crate::rng::subseed;
use crate::stylized::{
    mimic_loss_backward, objective_c, objective_n, LossWeights, StylizedFieldParams,
};
use crate::stylizer::{
    adain, consistency_loss, consistency_loss_backward, content_loss, content_loss_backward,
    style_loss, style_loss_backward, style_stats, Decoder, Encoder, StyleStats,
};

/// One loss-log entry; stages emit `(step, term, value)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub term: String,
    pub value: f64,
}

pub fn write_loss_csv(path: &std::path::Path, rows: &[LossRecord]) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(out, "step,term,value").map_err(|e| Error::io(path, e))?;
    for row in rows {
        writeln!(out, "{},{},{}", row.step, row.term, row.value)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// A view rendered from the frozen field: training data for the 2D network
/// and the stylized field, paired with its expected-depth map for warping.
#[derive(Clone, Debug)]
pub struct AugmentedView {
    pub name: String,
    pub camera: CameraPose,
    /// `(3, H, W)` render from the frozen field.
    pub image: Array3<f32>,
    /// Expected depth; `-1` where accumulated opacity is too low.
    pub depth: Array2<f32>,
}

/// Interpolates `count` poses along the ordered camera path (spherical
/// rotation interpolation, linear translation). `count == 1` returns the
/// first camera exactly.
pub fn interpolate_path(cameras: &[CameraPose], count: usize) -> Result<Vec<CameraPose>> {
    if cameras.is_empty() {
        return Err(Error::InvalidArgument("camera path is empty".into()));
    }
    if count < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least one pose, got {count}"
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if cameras.len() == 1 {
            out.push(cameras[0].clone());
            continue;
        }
        let s = if count == 1 {
            0.0
        } else {
            i as f64 / (count - 1) as f64
        };
        let pos = s * (cameras.len() - 1) as f64;
        let idx = (pos.floor() as usize).min(cameras.len() - 2);
        let frac = pos - idx as f64;
        let a = &cameras[idx];
        let b = &cameras[idx + 1];
        if frac == 0.0 {
            out.push(a.clone());
            continue;
        }
        let qa = UnitQuaternion::from_matrix(&a.rotation);
        let qb = UnitQuaternion::from_matrix(&b.rotation);
        let q = qa.slerp(&qb, frac);
        let mut cam = a.clone();
        cam.rotation = q.to_rotation_matrix().into_inner();
        cam.translation = a.translation * (1.0 - frac) + b.translation * frac;
        out.push(cam);
    }
    Ok(out)
}

/// Renders `count` views along the interpolated training-camera path, each
/// with its expected-depth map.
pub fn augment_views(
    radiance: &RadianceFieldParams<f32>,
    train_cameras: &[CameraPose],
    count: usize,
    k_samples: usize,
) -> Result<Vec<AugmentedView>> {
    let poses = interpolate_path(train_cameras, count)?;
    let bg = radiance.background_f();
    let mut views = Vec::with_capacity(count);
    for (i, camera) in poses.into_iter().enumerate() {
        let (image, depth, _) =
            render_image(radiance, &camera, k_samples, radiance.near, radiance.far, bg);
        views.push(AugmentedView {
            name: format!("aug_{i:03}"),
            camera,
            image,
            depth,
        });
    }
    Ok(views)
}

/// Precomputed per-(view, style) alignment targets `adain(enc(I_i), S_j)`.
pub struct AdainTargets {
    targets: Vec<Array3<f32>>,
    n_styles: usize,
}

impl AdainTargets {
    pub fn build(
        encoder: &Encoder<f32>,
        views: &[AugmentedView],
        styles: &[StyleStats<f32>],
    ) -> Result<AdainTargets> {
        let mut targets = Vec::with_capacity(views.len() * styles.len());
        for view in views {
            let feats = encoder.encode(&view.image)?;
            let deepest = feats.layers.len() - 1;
            for style in styles {
                targets.push(adain(
                    feats.deepest(),
                    &style.mean[deepest],
                    &style.std[deepest],
                )?);
            }
        }
        Ok(AdainTargets {
            targets,
            n_styles: styles.len(),
        })
    }

    pub fn get(&self, view: usize, style: usize) -> &Array3<f32> {
        &self.targets[view * self.n_styles + style]
    }
}

/// Warp fields between co-visible augmented-view pairs.
pub struct ViewPairs {
    /// `(target_view, source_view, field)`
    pub pairs: Vec<(usize, usize, WarpField)>,
}

impl ViewPairs {
    /// Keeps ordered pairs whose warp mask covers at least `min_coverage`.
    pub fn build(
        views: &[AugmentedView],
        depth_tolerance: f32,
        min_coverage: f64,
    ) -> Result<ViewPairs> {
        let mut pairs = Vec::new();
        for i in 0..views.len() {
            for j in 0..views.len() {
                if i == j {
                    continue;
                }
                let field = compute_warp_field(
                    &views[j].camera,
                    &views[i].camera,
                    &views[i].depth,
                    &views[j].depth,
                    depth_tolerance,
                )?;
                if field.valid_fraction() >= min_coverage {
                    pairs.push((i, j, field));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::Dataset(format!(
                "no co-visible view pairs at coverage >= {min_coverage}"
            )));
        }
        Ok(ViewPairs { pairs })
    }
}

/// Setup for decoder pre-training.
pub struct PretrainConfig {
    pub steps: u64,
    pub learning_rate: f64,
    pub lambda_s: f64,
    pub lambda_co: f64,
    pub seed: u64,
}

/// Pre-trains the decoder with content, style, and warped consistency
/// losses over random co-visible view pairs and random styles.
pub fn pretrain_decoder(
    encoder: &Encoder<f32>,
    mut decoder: Decoder<f32>,
    views: &[AugmentedView],
    styles: &[StyleStats<f32>],
    pairs: &ViewPairs,
    cfg: &PretrainConfig,
) -> Result<(Decoder<f32>, Vec<LossRecord>)> {
    let targets = AdainTargets::build(encoder, views, styles)?;
    let mut opt = Adam::new(cfg.learning_rate as f32);
    let mut history = Vec::new();
    let deepest = crate::stylizer::ENCODER_CHANNELS.len() - 1;

    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(cfg.seed, "decoder-pre-step", step));
        let (vi, vj, field) = &pairs.pairs[rng.gen_range(0..pairs.pairs.len())];
        let style_idx = rng.gen_range(0..styles.len());
        let style = &styles[style_idx];

        // stylize both views of the pair
        let t_i = targets.get(*vi, style_idx);
        let t_j = targets.get(*vj, style_idx);
        let (o_i, cache_i) = decoder.decode_cache(t_i);
        let (o_j, cache_j) = decoder.decode_cache(t_j);

        // per-view perceptual losses plus the cross-view term
        let (feats_i, enc_cache_i) = encoder.encode_cache(&o_i)?;
        let (feats_j, enc_cache_j) = encoder.encode_cache(&o_j)?;
        let stats_i = style_stats(&feats_i);
        let stats_j = style_stats(&feats_j);
        let l_content =
            0.5 * (content_loss(feats_i.deepest(), t_i) + content_loss(feats_j.deepest(), t_j));
        let l_style = 0.5 * (style_loss(&stats_i, style) + style_loss(&stats_j, style));
        let (l_co, _empty) = consistency_loss(&o_i, &o_j, field)?;
        let total = l_content as f64 + cfg.lambda_s * l_style as f64 + cfg.lambda_co * l_co as f64;
        for (term, value) in [
            ("content", l_content as f64),
            ("style", l_style as f64),
            ("consistency", l_co as f64),
            ("total", total),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: term.into(),
                    step,
                });
            }
            history.push(LossRecord {
                step,
                term: term.into(),
                value,
            });
        }

        // gradients w.r.t. both decoder outputs
        let half = 0.5f32;
        let ls = cfg.lambda_s as f32;
        let mut d_o_i = {
            let mut d_layers = style_loss_backward(&feats_i, &stats_i, style);
            for layer in &mut d_layers {
                layer.mapv_inplace(|v| v * ls * half);
            }
            let mut d_content = content_loss_backward(feats_i.deepest(), t_i);
            d_content.mapv_inplace(|v| v * half);
            d_layers[deepest] += &d_content;
            encoder.backward_input(&enc_cache_i, &d_layers)
        };
        let mut d_o_j = {
            let mut d_layers = style_loss_backward(&feats_j, &stats_j, style);
            for layer in &mut d_layers {
                layer.mapv_inplace(|v| v * ls * half);
            }
            let mut d_content = content_loss_backward(feats_j.deepest(), t_j);
            d_content.mapv_inplace(|v| v * half);
            d_layers[deepest] += &d_content;
            encoder.backward_input(&enc_cache_j, &d_layers)
        };
        let (d_co_i, d_co_j) = consistency_loss_backward(&o_i, &o_j, field);
        let lco = cfg.lambda_co as f32;
        d_o_i.scaled_add(lco, &d_co_i);
        d_o_j.scaled_add(lco, &d_co_j);

        let (mut grads, _) = decoder.backward(&cache_i, &d_o_i);
        let (grads_j, _) = decoder.backward(&cache_j, &d_o_j);
        grads.add(&grads_j);
        opt.step(decoder.param_slices_mut(), grads.grad_slices());
    }
    Ok((decoder, history))
}

/// Everything the mutual loop reads but never writes.
pub struct MutualContext<'a> {
    pub radiance: &'a RadianceFieldParams<f32>,
    pub encoder: &'a Encoder<f32>,
    pub views: &'a [AugmentedView],
    pub style_stats: &'a [StyleStats<f32>],
    pub distributions: &'a [StyleDistribution<f32>],
    pub weights: LossWeights,
    pub exact_nll: bool,
    pub k_samples: usize,
    pub batch_rays: usize,
    pub seed: u64,
}

/// Mutable training state of the mutual loop; serializable, resumable.
pub struct TrainingState {
    pub step: u64,
    pub stylized: StylizedFieldParams<f32>,
    pub decoder: Decoder<f32>,
    pub codes: LatentCodeTable<f32>,
    pub opt_field: Adam<f32>,
    pub opt_decoder: Adam<f32>,
    pub history: Vec<LossRecord>,
}

impl TrainingState {
    pub fn new(
        stylized: StylizedFieldParams<f32>,
        decoder: Decoder<f32>,
        codes: LatentCodeTable<f32>,
        lr_mutual: f64,
        lr_decoder: f64,
    ) -> TrainingState {
        TrainingState {
            step: 0,
            stylized,
            decoder,
            codes,
            opt_field: Adam::new(lr_mutual as f32),
            opt_decoder: Adam::new(lr_decoder as f32),
            history: Vec::new(),
        }
    }
}

/// Runs the collaborative loop from `state.step` to `schedule.mutual_steps`.
///
/// Each step samples a (view, style, pixel-batch) training instance, renders
/// the stylized field with that instance's latent code, and steps the
/// objective for the style module and codes; after
/// `schedule.decoder_freeze_steps` it additionally steps the decoder
/// objective. Opacity parameters are never touched.
pub fn mutual_learn(
    state: &mut TrainingState,
    ctx: &MutualContext<'_>,
    schedule: &StageSchedule,
) -> Result<()> {
    let targets = AdainTargets::build(ctx.encoder, ctx.views, ctx.style_stats)?;
    let deepest = crate::stylizer::ENCODER_CHANNELS.len() - 1;
    // stylized outputs are fixed while the decoder is frozen
    let mut frozen_ca: Vec<Option<Array3<f32>>> =
        vec![None; ctx.views.len() * ctx.style_stats.len()];

    while state.step < schedule.mutual_steps {
        let step = state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(ctx.seed, "mutual-step", step));
        let view_idx = rng.gen_range(0..ctx.views.len());
        let style_idx = rng.gen_range(0..ctx.style_stats.len());
        let view = &ctx.views[view_idx];
        let decoder_frozen = step < schedule.decoder_freeze_steps;

        // 2D stylization result for this training instance
        let t_ij = targets.get(view_idx, style_idx);
        let (c_a_image, dec_cache) = if decoder_frozen {
            let slot = view_idx * ctx.style_stats.len() + style_idx;
            if frozen_ca[slot].is_none() {
                frozen_ca[slot] = Some(state.decoder.decode(t_ij));
            }
            (frozen_ca[slot].clone().unwrap(), None)
        } else {
            let (img, cache) = state.decoder.decode_cache(t_ij);
            (img, Some(cache))
        };

        // pixel batch and rays
        let (h, w) = (view.camera.height, view.camera.width);
        let b = ctx.batch_rays;
        let k = ctx.k_samples;
        let mut pixels = Vec::with_capacity(b);
        for _ in 0..b {
            pixels.push((rng.gen_range(0..h as u32), rng.gen_range(0..w as u32)));
        }
        let mut positions = Array2::<f32>::zeros((b * k, 3));
        let mut samples_list = Vec::with_capacity(b);
        for (bi, (row, col)) in pixels.iter().enumerate() {
            let dir = view.camera.pixel_direction(*row, *col);
            let smp = sample_ray::<f32>(
                &view.camera.center(),
                &dir,
                ctx.radiance.near,
                ctx.radiance.far,
                k,
                true,
                &mut rng,
            )?;
            positions
                .slice_mut(s![bi * k..(bi + 1) * k, ..])
                .assign(&smp.positions);
            samples_list.push(smp);
        }

        // frozen opacity, stylized colors
        let sigma = ctx.radiance.density(positions.view());
        let latent = state.codes.code(view_idx, style_idx);
        let fwd = state
            .stylized
            .forward_batch(positions.view(), latent.view(), None)?;

        // composite per ray and gather the 2D targets
        let mut c_n = Array2::<f32>::zeros((b, 3));
        let mut c_a = Array2::<f32>::zeros((b, 3));
        let mut weights_all = Vec::with_capacity(b);
        for (bi, smp) in samples_list.iter().enumerate() {
            let sl = s![bi * k..(bi + 1) * k];
            let (weights, trans) = composite_weights(sigma.slice(sl), smp.delta.view());
            for kk in 0..k {
                for c in 0..3 {
                    c_n[(bi, c)] += weights[kk] * fwd.colors[(bi * k + kk, c)];
                }
            }
            for c in 0..3 {
                c_a[(bi, c)] = c_a_image[(c, pixels[bi].0 as usize, pixels[bi].1 as usize)];
            }
            weights_all.push((weights, trans));
        }

        // losses for the field objective
        let l_mimic = crate::stylized::mimic_loss(&c_n, &c_a)?;
        let dist = &ctx.distributions[style_idx];
        let l_d = if ctx.exact_nll {
            distribution_loss_nll(&latent, dist)?
        } else {
            distribution_loss(&latent, dist)?
        };
        let l_n = objective_n(l_mimic, l_d, &ctx.weights);
        for (term, value) in [
            ("mimic", l_mimic as f64),
            ("distribution", l_d as f64),
            ("objective_n", l_n as f64),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: term.into(),
                    step,
                });
            }
            state.history.push(LossRecord {
                step,
                term: term.into(),
                value,
            });
        }

        // backward: mimic -> compositor colors -> style MLP and code
        let (d_cn, d_ca_batch) = mimic_loss_backward(&c_n, &c_a);
        let mut d_colors = Array2::<f32>::zeros((b * k, 3));
        for (bi, smp) in samples_list.iter().enumerate() {
            let (weights, trans) = &weights_all[bi];
            let d_color = [d_cn[(bi, 0)], d_cn[(bi, 1)], d_cn[(bi, 2)]];
            let (_d_sigma, d_c) = crate::radiance::composite_backward(
                &d_color,
                sigma.slice(s![bi * k..(bi + 1) * k]),
                fwd.colors.slice(s![bi * k..(bi + 1) * k, ..]),
                smp,
                weights.view(),
                trans.view(),
                [0.0; 3],
            );
            // opacity is frozen: the density gradient is dropped
            d_colors
                .slice_mut(s![bi * k..(bi + 1) * k, ..])
                .assign(&d_c);
        }
        let (mlp_grads, mut d_latent) = state.stylized.backward_batch(&fwd, d_colors.view());
        let lambda_d = ctx.weights.lambda_d as f32;
        let d_dist = if ctx.exact_nll {
            distribution_loss_nll_grad(&latent, dist)?
        } else {
            distribution_loss_grad(&latent, dist)?
        };
        d_latent.scaled_add(lambda_d, &d_dist);

        // dense code-table gradient: zeros except the touched row
        let mut code_grads = Array2::<f32>::zeros(state.codes.codes.dim());
        code_grads
            .row_mut(state.codes.index(view_idx, style_idx))
            .assign(&d_latent);
        let mut params = state.stylized.param_slices_mut();
        params.push(state.codes.codes.as_slice_mut().unwrap());
        let mut grads = mlp_grads.grad_slices();
        grads.push(code_grads.as_slice().unwrap());
        state.opt_field.step(params, grads);

        // decoder objective, only after the freeze window
        if let Some(dec_cache) = dec_cache {
            let style = &ctx.style_stats[style_idx];
            let (out_feats, enc_cache) = ctx.encoder.encode_cache(&c_a_image)?;
            let stats_out = style_stats(&out_feats);
            let l_content = content_loss(out_feats.deepest(), t_ij);
            let l_style = style_loss(&stats_out, style);
            let l_c = objective_c(l_mimic, l_style, l_content, &ctx.weights);
            for (term, value) in [
                ("style", l_style as f64),
                ("content", l_content as f64),
                ("objective_c", l_c as f64),
            ] {
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        term: term.into(),
                        step,
                    });
                }
                state.history.push(LossRecord {
                    step,
                    term: term.into(),
                    value,
                });
            }
            let lambda_s = ctx.weights.lambda_s as f32;
            let lambda_m = ctx.weights.lambda_m as f32;
            let mut d_layers = style_loss_backward(&out_feats, &stats_out, style);
            for layer in &mut d_layers {
                layer.mapv_inplace(|v| v * lambda_s);
            }
            d_layers[deepest] += &content_loss_backward(out_feats.deepest(), t_ij);
            let mut d_image = ctx.encoder.backward_input(&enc_cache, &d_layers);
            // mimic gradient into the decoder at the sampled pixels
            for (bi, (row, col)) in pixels.iter().enumerate() {
                for c in 0..3 {
                    d_image[(c, *row as usize, *col as usize)] += lambda_m * d_ca_batch[(bi, c)];
                }
            }
            let (grads, _) = state.decoder.backward(&dec_cache, &d_image);
            state
                .opt_decoder
                .step(state.decoder.param_slices_mut(), grads.grad_slices());
        }

        state.step += 1;
    }
    Ok(())
}

impl TrainingState {
    const TERMS: [&'static str; 6] = [
        "mimic",
        "distribution",
        "objective_n",
        "style",
        "content",
        "objective_c",
    ];

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut full = meta;
        full["step"] = serde_json::json!(self.step);
        full["style_arch"] = serde_json::json!({
            "l_pos": self.stylized.arch.l_pos,
            "depth": self.stylized.arch.depth,
            "width": self.stylized.arch.width,
            "latent_dim": self.stylized.arch.latent_dim,
            "use_view_dirs": self.stylized.arch.use_view_dirs,
            "l_dir": self.stylized.arch.l_dir,
        });
        full["view_ids"] = serde_json::json!(self.codes.view_ids);
        full["style_ids"] = serde_json::json!(self.codes.style_ids);
        full["opt_field_t"] = serde_json::json!(self.opt_field.step_count());
        full["opt_decoder_t"] = serde_json::json!(self.opt_decoder.step_count());
        let mut ck = Checkpoint::new("training_state", full);
        push_mlp(&mut ck, "style_mlp", &self.stylized.style_mlp);
        for (i, conv) in self.decoder.convs.iter().enumerate() {
            ck.push(
                format!("decoder.{i}.weight"),
                vec![conv.weight.nrows(), conv.weight.ncols()],
                conv.weight.iter().copied().collect(),
            );
            ck.push(
                format!("decoder.{i}.bias"),
                vec![conv.bias.len()],
                conv.bias.to_vec(),
            );
        }
        ck.push(
            "codes",
            vec![self.codes.codes.nrows(), self.codes.codes.ncols()],
            self.codes.codes.iter().copied().collect(),
        );
        for (name, opt) in [
            ("opt_field", &self.opt_field),
            ("opt_decoder", &self.opt_decoder),
        ] {
            let (_, groups) = opt.state();
            for (i, group) in groups.iter().enumerate() {
                ck.push(format!("{name}.m.{i}"), vec![group.len()], group.to_vec());
            }
        }
        // history rows encoded as (step, term-id, value)
        let mut hist = Vec::with_capacity(self.history.len() * 3);
        for row in &self.history {
            let term_id = Self::TERMS
                .iter()
                .position(|t| *t == row.term)
                .expect("known term") as f32;
            hist.push(row.step as f32);
            hist.push(term_id);
            hist.push(row.value as f32);
        }
        ck.push("history", vec![self.history.len(), 3], hist);
        ck
    }

    pub fn from_checkpoint(
        ck: &Checkpoint,
        lr_mutual: f64,
        lr_decoder: f64,
    ) -> Result<TrainingState> {
        ck.expect_kind("training_state")?;
        let arch_meta = ck
            .meta
            .get("style_arch")
            .ok_or_else(|| Error::Checkpoint("missing style_arch".into()))?;
        let get = |k: &str| -> Result<u64> {
            arch_meta
                .get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Checkpoint(format!("missing style_arch.{k}")))
        };
        let arch = crate::stylized::StyleArch {
            l_pos: get("l_pos")? as usize,
            depth: get("depth")? as usize,
            width: get("width")? as usize,
            latent_dim: get("latent_dim")? as usize,
            use_view_dirs: arch_meta
                .get("use_view_dirs")
                .and_then(|v| v.as_bool())
                .unwrap_or(false),
            l_dir: get("l_dir")? as usize,
        };
        let style_mlp = read_mlp(
            ck,
            "style_mlp",
            arch.depth,
            Activation::Relu,
            Activation::Sigmoid,
            None,
        )?;
        let stylized = StylizedFieldParams { style_mlp, arch };
        let mut decoder_ck = Checkpoint::new("decoder", serde_json::Value::Null);
        for t in &ck.tensors {
            if let Some(rest) = t.name.strip_prefix("decoder.") {
                decoder_ck.push(format!("conv.{rest}"), t.shape.clone(), t.data.clone());
            }
        }
        let decoder = Decoder::from_checkpoint(&decoder_ck)?;
        let ids = |key: &str| -> Result<Vec<String>> {
            ck.meta
                .get(key)
                .and_then(|v| v.as_array())
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))
        };
        let codes_tensor = ck.tensor("codes")?;
        let codes = LatentCodeTable {
            codes: Array2::from_shape_vec(
                (codes_tensor.shape[0], codes_tensor.shape[1]),
                codes_tensor.data.clone(),
            )
            .map_err(|e| Error::Checkpoint(e.to_string()))?,
            view_ids: ids("view_ids")?,
            style_ids: ids("style_ids")?,
        };
        let mut opt_field = Adam::new(lr_mutual as f32);
        let mut opt_decoder = Adam::new(lr_decoder as f32);
        for (name, opt) in [
            ("opt_field", &mut opt_field),
            ("opt_decoder", &mut opt_decoder),
        ] {
            let mut groups = Vec::new();
            let mut i = 0;
            while let Ok(t) = ck.tensor(&format!("{name}.m.{i}")) {
                groups.push(t.data.clone());
                i += 1;
            }
            if !groups.is_empty() {
                let t = ck.meta_u64(&format!("{name}_t"))?;
                opt.restore(t, groups);
            }
        }
        let hist = ck.tensor("history")?;
        let mut history = Vec::with_capacity(hist.shape[0]);
        for row in hist.data.chunks_exact(3) {
            history.push(LossRecord {
                step: row[0] as u64,
                term: Self::TERMS[row[1] as usize].to_string(),
                value: row[2] as f64,
            });
        }
        Ok(TrainingState {
            step: ck.meta_u64("step")?,
            stylized,
            decoder,
            codes,
            opt_field,
            opt_decoder,
            history,
        })
    }
}

/// Mean of one term's values over a step range of the history.
pub fn term_mean(history: &[LossRecord], term: &str, steps: std::ops::Range<u64>) -> f64 {
    let vals: Vec<f64> = history
        .iter()
        .filter(|r| r.term == term && steps.contains(&r.step))
        .map(|r| r.value)
        .collect();
    if vals.is_empty() {
        return f64::NAN;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::synthetic::{generate_styles, generate_synthetic_scene, SceneSpec};
    use crate::radiance::{fit_nerf, NerfArch, NerfFitConfig, PosedImage};
    use crate::stylized::StyleArch;
    use crate::stylizer::default_encoder;
    use ndarray::Array1;

    fn tiny_setup() -> (
        RadianceFieldParams<f32>,
        Vec<AugmentedView>,
        Vec<StyleStats<f32>>,
        Vec<StyleDistribution<f32>>,
        Encoder<f32>,
    ) {
        let spec = SceneSpec {
            train_views: 4,
            test_views: 0,
            width: 24,
            height: 24,
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
            depth: 2,
            width: 32,
            skip_at: 0,
        };
        let cfg = NerfFitConfig {
            steps: 30,
            batch_rays: 128,
            learning_rate: 5e-4,
            k_samples: 16,
        };
        let (radiance, _) =
            fit_nerf::<f32>(&train, &arch, &cfg, dataset.near, dataset.far, 5).unwrap();
        let cams: Vec<CameraPose> = train.iter().map(|v| v.camera.clone()).collect();
        let views = augment_views(&radiance, &cams, 4, 16).unwrap();
        let encoder = default_encoder::<f32>();
        let styles = generate_styles(2, 24, 5);
        let stats: Vec<StyleStats<f32>> = styles
            .iter()
            .map(|s| style_stats(&encoder.encode(s).unwrap()))
            .collect();
        let dists: Vec<StyleDistribution<f32>> = (0..2)
            .map(|j| StyleDistribution {
                mu: Array1::from_shape_fn(8, |k| (j as f32 - 0.5) * 2.0 + k as f32 * 0.01),
                sigma: Array1::from_elem(8, 0.3),
            })
            .collect();
        (radiance, views, stats, dists, encoder)
    }

    fn tiny_state(
        views: &[AugmentedView],
        dists: &[StyleDistribution<f32>],
        seed: u64,
    ) -> TrainingState {
        let style_arch = StyleArch {
            l_pos: 4,
            depth: 2,
            width: 16,
            latent_dim: 8,
            use_view_dirs: false,
            l_dir: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "style-init", 0));
        let stylized = StylizedFieldParams::init(&style_arch, &mut rng);
        let mut drng = ChaCha8Rng::seed_from_u64(subseed(seed, "decoder-init", 0));
        let decoder = Decoder::init(&mut drng);
        let view_ids: Vec<String> = views.iter().map(|v| v.name.clone()).collect();
        let style_ids = vec!["style_00".to_string(), "style_01".to_string()];
        let codes = crate::latent::init_codes(dists, &view_ids, &style_ids, seed);
        TrainingState::new(stylized, decoder, codes, 1e-4, 1e-4)
    }

    #[test]
    fn augment_single_view_matches_direct_render_bitwise() {
        let (radiance, views, ..) = tiny_setup();
        let cams = vec![views[0].camera.clone()];
        let single = augment_views(&radiance, &cams, 1, 16).unwrap();
        let (img, depth, _) = render_image(
            &radiance,
            &views[0].camera,
            16,
            radiance.near,
            radiance.far,
            radiance.background_f(),
        );
        assert_eq!(single[0].image, img);
        assert_eq!(single[0].depth, depth);
    }

    #[test]
    fn interpolation_endpoints_are_exact_and_reproducible() {
        let (_, views, ..) = tiny_setup();
        let cams: Vec<CameraPose> = views.iter().map(|v| v.camera.clone()).collect();
        let path = interpolate_path(&cams, 7).unwrap();
        assert_eq!(path.len(), 7);
        assert!((path[0].translation - cams[0].translation).norm() < 1e-12);
        assert!((path[6].translation - cams[3].translation).norm() < 1e-12);
        let again = interpolate_path(&cams, 7).unwrap();
        for (a, b) in path.iter().zip(&again) {
            assert_eq!(a.translation, b.translation);
        }
        assert!(interpolate_path(&cams, 0).is_err());
        for cam in &path {
            cam.validate().unwrap();
        }
    }

    #[test]
    fn toy_depth_maps_are_mostly_valid() {
        let (_, views, ..) = tiny_setup();
        for view in &views {
            let valid =
                view.depth.iter().filter(|d| **d > 0.0).count() as f64 / view.depth.len() as f64;
            assert!(valid > 0.9, "{}: only {valid:.2} of depths valid", view.name);
        }
    }

    #[test]
    fn pretrain_smoke_and_determinism() {
        let (_, views, stats, _, encoder) = tiny_setup();
        let pairs = ViewPairs::build(&views, 0.3, 0.3).unwrap();
        let cfg = PretrainConfig {
            steps: 3,
            learning_rate: 1e-4,
            lambda_s: 1.0,
            lambda_co: 50.0,
            seed: 9,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(9, "decoder-init", 0));
        let init = Decoder::<f32>::init(&mut rng);
        let (dec_a, hist_a) =
            pretrain_decoder(&encoder, init.clone(), &views, &stats, &pairs, &cfg).unwrap();
        assert!(hist_a.iter().all(|r| r.value.is_finite()));
        assert!(hist_a.iter().any(|r| r.term == "consistency"));
        let (dec_b, hist_b) =
            pretrain_decoder(&encoder, init, &views, &stats, &pairs, &cfg).unwrap();
        assert_eq!(hist_a, hist_b);
        for (a, b) in dec_a.param_slices().into_iter().zip(dec_b.param_slices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn no_covisible_pairs_is_an_error() {
        let (_, views, ..) = tiny_setup();
        assert!(ViewPairs::build(&views, 1e-6, 1.01).is_err());
    }

    #[test]
    fn mutual_loop_freeze_accounting_and_resume() {
        let (radiance, views, stats, dists, encoder) = tiny_setup();
        let ctx = MutualContext {
            radiance: &radiance,
            encoder: &encoder,
            views: &views,
            style_stats: &stats,
            distributions: &dists,
            weights: LossWeights::default(),
            exact_nll: false,
            k_samples: 8,
            batch_rays: 16,
            seed: 31,
        };
        let schedule = StageSchedule {
            mutual_steps: 6,
            decoder_freeze_steps: 3,
            ..StageSchedule::default()
        };

        // frozen phase leaves the decoder bitwise untouched
        let mut state = tiny_state(&views, &dists, 31);
        let decoder_before: Vec<Vec<f32>> = state
            .decoder
            .param_slices()
            .into_iter()
            .map(|s| s.to_vec())
            .collect();
        let half = StageSchedule {
            mutual_steps: 3,
            decoder_freeze_steps: 3,
            ..StageSchedule::default()
        };
        mutual_learn(&mut state, &ctx, &half).unwrap();
        for (now, before) in state.decoder.param_slices().into_iter().zip(&decoder_before) {
            assert_eq!(now, before.as_slice(), "decoder changed during freeze");
        }

        // save, resume, and compare against an uninterrupted run
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        state
            .to_checkpoint(serde_json::json!({}))
            .write(&path)
            .unwrap();
        let mut resumed =
            TrainingState::from_checkpoint(&Checkpoint::read(&path).unwrap(), 1e-4, 1e-4)
                .unwrap();
        assert_eq!(resumed.step, 3);
        mutual_learn(&mut resumed, &ctx, &schedule).unwrap();

        let mut uninterrupted = tiny_state(&views, &dists, 31);
        mutual_learn(&mut uninterrupted, &ctx, &schedule).unwrap();
        assert_eq!(resumed.history, uninterrupted.history);
        for (a, b) in resumed
            .stylized
            .param_slices()
            .into_iter()
            .zip(uninterrupted.stylized.param_slices())
        {
            assert_eq!(a, b);
        }
        for (a, b) in resumed
            .decoder
            .param_slices()
            .into_iter()
            .zip(uninterrupted.decoder.param_slices())
        {
            assert_eq!(a, b);
        }

        // decoder did move once unfrozen
        let moved = uninterrupted
            .decoder
            .param_slices()
            .into_iter()
            .zip(&decoder_before)
            .any(|(now, before)| now != before.as_slice());
        assert!(moved, "decoder never trained after the freeze");

        // loss-term accounting
        let w = LossWeights::default();
        for step in 0..6u64 {
            let get = |term: &str| {
                uninterrupted
                    .history
                    .iter()
                    .find(|r| r.step == step && r.term == term)
                    .map(|r| r.value)
            };
            let mimic = get("mimic").unwrap();
            let dist = get("distribution").unwrap();
            let obj = get("objective_n").unwrap();
            assert!((obj - (mimic + w.lambda_d * dist)).abs() < 1e-6);
            if step >= 3 {
                let style = get("style").unwrap();
                let content = get("content").unwrap();
                let obj_c = get("objective_c").unwrap();
                assert!(
                    (obj_c - (w.lambda_m * mimic + w.lambda_s * style + content)).abs() < 1e-6
                );
            } else {
                assert!(get("style").is_none());
            }
        }
    }
}
