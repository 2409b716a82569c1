//! The radiance field: positional encoding, opacity/radiance MLPs, quadrature
//! volume rendering, and expected-depth extraction.
//!
//! Rays use unit directions, so a sample depth `t` is the Euclidean distance
//! from the camera center and `positions = origin + t * dir`. Interval
//! lengths are `delta_k = t_{k+1} - t_k`, with the closing interval
//! `delta_K = far - t_K`. The rendered color composites onto the configured
//! background (black by default).

use nalgebra::Vector3;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rand::SeedableRng;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, DenseGrad, Mlp, MlpGrad};
use crate::real::{rf, Real};
use crate::rng::subseed;

/// Guard for the expected-depth denominator.
pub const DEPTH_EPS: f64 = 1e-10;
/// Rays with accumulated opacity below this are flagged invalid for warping.
pub const MIN_VALID_OPACITY: f64 = 0.5;

/// Sinusoidal lift of `v` to `2 * L * d` features, coordinate-major:
/// for each input coordinate, `sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x),
/// cos(2^{L-1} x)`.
pub fn positional_encoding<F: Real>(v: ArrayView1<'_, F>, l: usize) -> Result<Array1<F>> {
    if l < 1 {
        return Err(Error::InvalidArgument(format!(
            "positional encoding bandwidth L must be >= 1, got {l}"
        )));
    }
    let mut out = Array1::zeros(2 * l * v.len());
    encode_into(v, l, out.as_slice_mut().unwrap());
    Ok(out)
}

fn encode_into<F: Real>(v: ArrayView1<'_, F>, l: usize, out: &mut [F]) {
    let mut idx = 0;
    for &x in v.iter() {
        let mut freq = F::one();
        for _ in 0..l {
            let arg = freq * x;
            out[idx] = arg.sin();
            out[idx + 1] = arg.cos();
            idx += 2;
            freq = freq + freq;
        }
    }
}

/// Batched positional encoding: `(n, d) -> (n, 2*l*d)`.
pub fn encode_points<F: Real>(points: ArrayView2<'_, F>, l: usize) -> Array2<F> {
    let (n, d) = points.dim();
    let mut out = Array2::zeros((n, 2 * l * d));
    for (row, mut dst) in points.outer_iter().zip(out.outer_iter_mut()) {
        encode_into(row, l, dst.as_slice_mut().unwrap());
    }
    out
}

/// Quadrature nodes along one ray.
#[derive(Clone, Debug)]
pub struct RaySamples<F> {
    /// Strictly increasing depths in `[near, far]`.
    pub t: Array1<F>,
    /// Interval lengths; the last one closes the interval to `far`.
    pub delta: Array1<F>,
    /// `(K, 3)` sample positions `origin + t * dir`.
    pub positions: Array2<F>,
}

impl<F: Real> RaySamples<F> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 samples, got {}",
                self.t.len()
            )));
        }
        for k in 1..self.t.len() {
            if self.t[k] <= self.t[k - 1] {
                return Err(Error::InvalidArgument(
                    "sample depths must be strictly increasing".into(),
                ));
            }
        }
        if self.delta.iter().any(|d| *d <= F::zero()) {
            return Err(Error::InvalidArgument(
                "interval lengths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Places `k` samples in `[near, far]`: bin midpoints when `stratified` is
/// false, one uniform draw per bin otherwise. Deterministic given the RNG.
pub fn sample_ray<F: Real>(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    near: f64,
    far: f64,
    k: usize,
    stratified: bool,
    rng: &mut ChaCha8Rng,
) -> Result<RaySamples<F>> {
    if !(near > 0.0 && near < far) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < near < far, got near={near}, far={far}"
        )));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    let h = (far - near) / k as f64;
    let mut t = Array1::zeros(k);
    for i in 0..k {
        let offset = if stratified {
            rng.gen_range(0.0..1.0)
        } else {
            0.5
        };
        t[i] = rf::<F>(near + (i as f64 + offset) * h);
    }
    let mut delta = Array1::zeros(k);
    for i in 0..k - 1 {
        delta[i] = t[i + 1] - t[i];
    }
    delta[k - 1] = rf::<F>(far) - t[k - 1];
    let positions = Array2::from_shape_fn((k, 3), |(i, j)| {
        rf::<F>(origin[j]) + t[i] * rf::<F>(dir[j])
    });
    Ok(RaySamples { t, delta, positions })
}

/// Anything that can be volume-rendered: opacity and directional emitted
/// color, evaluated on batches of sample positions.
pub trait VolumeField<F: Real>: Sync {
    /// `(n, 3) -> (n,)` nonnegative densities.
    fn density(&self, positions: ArrayView2<'_, F>) -> Array1<F>;
    /// `(n, 3) x (n, 3) -> (n, 3)` colors in `[0, 1]`; `dirs` are unit rays
    /// repeated per sample.
    fn color(&self, positions: ArrayView2<'_, F>, dirs: ArrayView2<'_, F>) -> Array2<F>;
}

/// Per-ray compositor output.
#[derive(Clone, Debug)]
pub struct RenderOutput<F> {
    pub color: [F; 3],
    /// `w_k = T_k (1 - exp(-sigma_k delta_k))`
    pub weights: Array1<F>,
    pub transmittance: Array1<F>,
    /// `sum w_k t_k / max(sum w_k, eps)`
    pub expected_depth: F,
    /// `sum w_k`, in `[0, 1]`.
    pub accumulated: F,
}

/// The shared quadrature compositor: returns `(weights, transmittances)`.
/// `T_1 = 1`, `T_k = exp(-sum_{k'<k} sigma_{k'} delta_{k'})`.
pub fn composite_weights<F: Real>(
    sigma: ArrayView1<'_, F>,
    delta: ArrayView1<'_, F>,
) -> (Array1<F>, Array1<F>) {
    let k = sigma.len();
    let mut weights = Array1::zeros(k);
    let mut trans = Array1::zeros(k);
    let mut accum = F::zero();
    for i in 0..k {
        let t_i = (-accum).exp();
        trans[i] = t_i;
        let alpha = F::one() - (-sigma[i] * delta[i]).exp();
        weights[i] = t_i * alpha;
        accum = accum + sigma[i] * delta[i];
    }
    (weights, trans)
}

/// Renders one ray through `field` with precomputed samples.
pub fn render_ray<F: Real>(
    field: &impl VolumeField<F>,
    dir: &Vector3<f64>,
    samples: &RaySamples<F>,
    background: [F; 3],
) -> RenderOutput<F> {
    let k = samples.len();
    let sigma = field.density(samples.positions.view());
    let dirs = Array2::from_shape_fn((k, 3), |(_, j)| rf::<F>(dir[j]));
    let colors = field.color(samples.positions.view(), dirs.view());
    composite(&sigma, &colors, samples, background)
}

/// Composites per-sample densities and colors into a pixel.
pub fn composite<F: Real>(
    sigma: &Array1<F>,
    colors: &Array2<F>,
    samples: &RaySamples<F>,
    background: [F; 3],
) -> RenderOutput<F> {
    let (weights, transmittance) = composite_weights(sigma.view(), samples.delta.view());
    let mut color = [F::zero(); 3];
    let mut acc = F::zero();
    let mut depth_num = F::zero();
    for i in 0..weights.len() {
        let w = weights[i];
        for c in 0..3 {
            color[c] = color[c] + w * colors[(i, c)];
        }
        depth_num = depth_num + w * samples.t[i];
        acc = acc + w;
    }
    let bg_weight = F::one() - acc;
    for c in 0..3 {
        color[c] = color[c] + bg_weight * background[c];
    }
    let expected_depth = depth_num / acc.max(rf(DEPTH_EPS));
    RenderOutput {
        color,
        weights,
        transmittance,
        expected_depth,
        accumulated: acc,
    }
}

/// Radiance-field network: a trunk MLP on encoded positions feeding a
/// softplus density head and a sigmoid color head conditioned on the encoded
/// view direction.
#[derive(Clone, Debug)]
pub struct RadianceFieldParams<F> {
    pub trunk: Mlp<F>,
    pub sigma_head: Dense<F>,
    pub color_head: Mlp<F>,
    pub l_pos: usize,
    pub l_dir: usize,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
}

/// Architecture knobs for [`RadianceFieldParams`].
#[derive(Clone, Debug)]
pub struct NerfArch {
    pub l_pos: usize,
    pub l_dir: usize,
    pub depth: usize,
    pub width: usize,
    /// Trunk layer index receiving the skip concatenation of the encoding.
    pub skip_at: usize,
}

impl Default for NerfArch {
    fn default() -> Self {
        NerfArch {
            l_pos: 10,
            l_dir: 4,
            depth: 8,
            width: 256,
            skip_at: 4,
        }
    }
}

impl<F: Real> RadianceFieldParams<F> {
    pub fn init<R: Rng>(arch: &NerfArch, near: f64, far: f64, rng: &mut R) -> Self {
        assert!(arch.l_pos >= 1 && arch.l_dir >= 1, "bandwidths must be >= 1");
        assert!(arch.depth >= 2, "trunk needs at least 2 layers");
        let pos_dim = 2 * arch.l_pos * 3;
        let dir_dim = 2 * arch.l_dir * 3;
        let mut dims = vec![pos_dim];
        dims.extend(std::iter::repeat(arch.width).take(arch.depth));
        let skip = (arch.skip_at > 0 && arch.skip_at < arch.depth).then_some(arch.skip_at);
        let trunk = Mlp::init(&dims, Activation::Relu, Activation::Relu, skip, rng);
        let sigma_head = Dense::init(arch.width, 1, rng);
        let color_head = Mlp::init(
            &[arch.width + dir_dim, arch.width / 2, 3],
            Activation::Relu,
            Activation::Sigmoid,
            None,
            rng,
        );
        RadianceFieldParams {
            trunk,
            sigma_head,
            color_head,
            l_pos: arch.l_pos,
            l_dir: arch.l_dir,
            near,
            far,
            background: [0.0; 3],
        }
    }

    pub fn background_f(&self) -> [F; 3] {
        [
            rf(self.background[0]),
            rf(self.background[1]),
            rf(self.background[2]),
        ]
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = self.trunk.param_slices();
        out.push(self.sigma_head.weight.as_slice().unwrap());
        out.push(self.sigma_head.bias.as_slice().unwrap());
        out.extend(self.color_head.param_slices());
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = self.trunk.param_slices_mut();
        out.push(self.sigma_head.weight.as_slice_mut().unwrap());
        out.push(self.sigma_head.bias.as_slice_mut().unwrap());
        out.extend(self.color_head.param_slices_mut());
        out
    }
}

impl<F: Real> VolumeField<F> for RadianceFieldParams<F> {
    fn density(&self, positions: ArrayView2<'_, F>) -> Array1<F> {
        let enc = encode_points(positions, self.l_pos);
        let feat = self.trunk.forward(enc.view());
        let raw = self.sigma_head.forward(feat.view());
        raw.column(0).mapv(|v| Activation::Softplus.apply(v))
    }

    fn color(&self, positions: ArrayView2<'_, F>, dirs: ArrayView2<'_, F>) -> Array2<F> {
        let enc = encode_points(positions, self.l_pos);
        let feat = self.trunk.forward(enc.view());
        let enc_dir = encode_points(dirs, self.l_dir);
        let joined = crate::nn::concat_cols(feat.view(), enc_dir.view());
        self.color_head.forward(joined.view())
    }
}

/// Forward pass of the full field on a flat sample batch, keeping the caches
/// needed for backprop. `dirs` must already be repeated per sample.
pub struct FieldForward<F> {
    pub sigma: Array1<F>,
    pub raw_sigma: Array1<F>,
    pub colors: Array2<F>,
    feat: Array2<F>,
    trunk_cache: crate::nn::MlpCache<F>,
    color_cache: crate::nn::MlpCache<F>,
}

#[derive(Clone, Debug)]
pub struct FieldGrad<F> {
    pub trunk: MlpGrad<F>,
    pub sigma_head: DenseGrad<F>,
    pub color_head: MlpGrad<F>,
}

impl<F: Real> FieldGrad<F> {
    pub fn grad_slices(&self) -> Vec<&[F]> {
        let mut out = self.trunk.grad_slices();
        out.push(self.sigma_head.weight.as_slice().unwrap());
        out.push(self.sigma_head.bias.as_slice().unwrap());
        out.extend(self.color_head.grad_slices());
        out
    }
}

impl<F: Real> RadianceFieldParams<F> {
    pub fn forward_batch(
        &self,
        positions: ArrayView2<'_, F>,
        dirs: ArrayView2<'_, F>,
    ) -> FieldForward<F> {
        let enc_pos = encode_points(positions, self.l_pos);
        let (feat, trunk_cache) = self.trunk.forward_cache(enc_pos.view());
        let raw = self.sigma_head.forward(feat.view());
        let raw_sigma: Array1<F> = raw.column(0).to_owned();
        let sigma = raw_sigma.mapv(|v| Activation::Softplus.apply(v));
        let enc_dir = encode_points(dirs, self.l_dir);
        let color_in = crate::nn::concat_cols(feat.view(), enc_dir.view());
        let (colors, color_cache) = self.color_head.forward_cache(color_in.view());
        FieldForward {
            sigma,
            raw_sigma,
            colors,
            feat,
            trunk_cache,
            color_cache,
        }
    }

    /// Backprop from per-sample density and color gradients to parameter
    /// gradients.
    pub fn backward_batch(
        &self,
        fwd: &FieldForward<F>,
        d_sigma: ArrayView1<'_, F>,
        d_colors: ArrayView2<'_, F>,
    ) -> FieldGrad<F> {
        // color head
        let (d_color_in, color_grad) = self.color_head.backward(&fwd.color_cache, d_colors);
        let feat_dim = fwd.feat.ncols();
        let mut d_feat = d_color_in.slice(s![.., ..feat_dim]).to_owned();
        // density head; softplus' = sigmoid
        let d_raw = Array1::from_shape_fn(d_sigma.len(), |i| {
            d_sigma[i] * Activation::Sigmoid.apply(fwd.raw_sigma[i])
        });
        let d_raw2 = d_raw.insert_axis(Axis(1));
        let (d_feat_sigma, sigma_grad) = self.sigma_head.backward(fwd.feat.view(), d_raw2.view());
        d_feat += &d_feat_sigma;
        let (_, trunk_grad) = self.trunk.backward(&fwd.trunk_cache, d_feat.view());
        FieldGrad {
            trunk: trunk_grad,
            sigma_head: sigma_grad,
            color_head: color_grad,
        }
    }
}

/// Gradient of the composited color w.r.t. per-sample densities and colors.
///
/// For `C = sum_k w_k c_k + (1 - sum_k w_k) bg` with
/// `w_k = T_k (1 - exp(-sigma_k delta_k))`:
/// `dC/dc_k = w_k` and
/// `dC/dsigma_k = delta_k (T_{k+1} (c_k - bg) - sum_{m>k} w_m (c_m - bg))`.
pub fn composite_backward<F: Real>(
    d_color: &[F; 3],
    sigma: ArrayView1<'_, F>,
    colors: ArrayView2<'_, F>,
    samples: &RaySamples<F>,
    weights: ArrayView1<'_, F>,
    transmittance: ArrayView1<'_, F>,
    background: [F; 3],
) -> (Array1<F>, Array2<F>) {
    let k = sigma.len();
    let mut d_sigma = Array1::zeros(k);
    let mut d_colors = Array2::zeros((k, 3));
    // a_k = d_color . (c_k - bg)
    let mut suffix = F::zero();
    let mut a = vec![F::zero(); k];
    for i in 0..k {
        let mut dot = F::zero();
        for c in 0..3 {
            dot = dot + d_color[c] * (colors[(i, c)] - background[c]);
            d_colors[(i, c)] = d_color[c] * weights[i];
        }
        a[i] = dot;
    }
    for i in (0..k).rev() {
        let t_next = transmittance[i] * (-sigma[i] * samples.delta[i]).exp();
        d_sigma[i] = samples.delta[i] * (t_next * a[i] - suffix);
        suffix = suffix + weights[i] * a[i];
    }
    (d_sigma, d_colors)
}

/// A posed RGB image, the training unit for [`fit_nerf`].
#[derive(Clone, Debug)]
pub struct PosedImage {
    pub camera: CameraPose,
    /// `(3, H, W)` in `[0, 1]`.
    pub image: ndarray::Array3<f32>,
}

/// Optimization settings for [`fit_nerf`].
#[derive(Clone, Debug)]
pub struct NerfFitConfig {
    pub steps: u64,
    pub batch_rays: usize,
    pub learning_rate: f64,
    pub k_samples: usize,
}

impl Default for NerfFitConfig {
    fn default() -> Self {
        NerfFitConfig {
            steps: 20_000,
            batch_rays: 1024,
            learning_rate: 5e-4,
            k_samples: 64,
        }
    }
}

struct TrainRay {
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    target: [f32; 3],
}

fn collect_rays(views: &[PosedImage]) -> Vec<TrainRay> {
    let mut rays = Vec::new();
    for view in views {
        let cam = &view.camera;
        for row in 0..cam.height as u32 {
            for col in 0..cam.width as u32 {
                rays.push(TrainRay {
                    origin: cam.center(),
                    dir: cam.pixel_direction(row, col),
                    target: [
                        view.image[(0, row as usize, col as usize)],
                        view.image[(1, row as usize, col as usize)],
                        view.image[(2, row as usize, col as usize)],
                    ],
                });
            }
        }
    }
    rays
}

/// One MSE training step over a ray batch. Returns the loss and parameter
/// gradients.
fn nerf_step<F: Real>(
    params: &RadianceFieldParams<F>,
    rays: &[&TrainRay],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, FieldGrad<F>)> {
    let b = rays.len();
    let mut samples = Vec::with_capacity(b);
    for ray in rays {
        samples.push(sample_ray::<F>(
            &ray.origin,
            &ray.dir,
            params.near,
            params.far,
            k,
            true,
            rng,
        )?);
    }
    let mut positions = Array2::zeros((b * k, 3));
    let mut dirs = Array2::zeros((b * k, 3));
    for (i, (ray, smp)) in rays.iter().zip(&samples).enumerate() {
        positions
            .slice_mut(s![i * k..(i + 1) * k, ..])
            .assign(&smp.positions);
        for kk in 0..k {
            for j in 0..3 {
                dirs[(i * k + kk, j)] = rf::<F>(ray.dir[j]);
            }
        }
    }
    let fwd = params.forward_batch(positions.view(), dirs.view());
    let bg = params.background_f();

    let mut loss = F::zero();
    let mut d_sigma_all = Array1::zeros(b * k);
    let mut d_colors_all = Array2::zeros((b * k, 3));
    let norm = rf::<F>(1.0 / (b as f64 * 3.0));
    for (i, smp) in samples.iter().enumerate() {
        let sl = s![i * k..(i + 1) * k];
        let sigma_i = fwd.sigma.slice(sl);
        let colors_i = fwd.colors.slice(s![i * k..(i + 1) * k, ..]);
        let (weights, trans) = composite_weights(sigma_i, smp.delta.view());
        let mut color = [F::zero(); 3];
        let mut acc = F::zero();
        for kk in 0..k {
            for c in 0..3 {
                color[c] = color[c] + weights[kk] * colors_i[(kk, c)];
            }
            acc = acc + weights[kk];
        }
        let mut d_color = [F::zero(); 3];
        for c in 0..3 {
            color[c] = color[c] + (F::one() - acc) * bg[c];
            let diff = color[c] - rf::<F>(rays[i].target[c] as f64);
            loss = loss + diff * diff * norm;
            d_color[c] = (diff + diff) * norm;
        }
        let (d_sigma, d_colors) = composite_backward(
            &d_color,
            sigma_i,
            colors_i,
            smp,
            weights.view(),
            trans.view(),
            bg,
        );
        d_sigma_all.slice_mut(sl).assign(&d_sigma);
        d_colors_all
            .slice_mut(s![i * k..(i + 1) * k, ..])
            .assign(&d_colors);
    }
    let grad = params.backward_batch(&fwd, d_sigma_all.view(), d_colors_all.view());
    Ok((loss.as_f64(), grad))
}

/// Trains a radiance field by MSE on randomly sampled rays. Deterministic
/// given `(views, arch, cfg, seed)`.
pub fn fit_nerf<F: Real>(
    views: &[PosedImage],
    arch: &NerfArch,
    cfg: &NerfFitConfig,
    near: f64,
    far: f64,
    seed: u64,
) -> Result<(RadianceFieldParams<F>, Vec<f64>)> {
    if views.len() < 2 {
        return Err(Error::Dataset(format!(
            "training needs at least 2 posed views, got {}",
            views.len()
        )));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(subseed(seed, "nerf-init", 0));
    let mut params = RadianceFieldParams::<F>::init(arch, near, far, &mut init_rng);
    let mut opt = crate::nn::Adam::new(rf::<F>(cfg.learning_rate));
    let rays = collect_rays(views);
    let mut history = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "nerf-step", step));
        let batch: Vec<&TrainRay> = (0..cfg.batch_rays)
            .map(|_| &rays[rng.gen_range(0..rays.len())])
            .collect();
        let (loss, grad) = nerf_step(&params, &batch, cfg.k_samples, &mut rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "nerf_mse".into(),
                step,
            });
        }
        opt.step(params.param_slices_mut(), grad.grad_slices());
        history.push(loss);
    }
    Ok((params, history))
}

/// Full-frame render: color, expected depth, and accumulated opacity.
/// Depth is set to `-1` where accumulated opacity is below
/// [`MIN_VALID_OPACITY`]. Rows are rendered in parallel, deterministically.
pub fn render_image<F: Real>(
    field: &impl VolumeField<F>,
    camera: &CameraPose,
    k: usize,
    near: f64,
    far: f64,
    background: [F; 3],
) -> (ndarray::Array3<f32>, Array2<f32>, Array2<f32>) {
    let (h, w) = (camera.height, camera.width);
    let rows: Vec<(usize, Vec<[f32; 5]>)> = (0..h)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|row| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut out = Vec::with_capacity(w);
            for col in 0..w {
                let dir = camera.pixel_direction(row as u32, col as u32);
                let samples = sample_ray::<F>(
                    &camera.center(),
                    &dir,
                    near,
                    far,
                    k,
                    false,
                    &mut rng,
                )
                .expect("valid near/far");
                let r = render_ray(field, &dir, &samples, background);
                out.push([
                    r.color[0].as_f64() as f32,
                    r.color[1].as_f64() as f32,
                    r.color[2].as_f64() as f32,
                    r.expected_depth.as_f64() as f32,
                    r.accumulated.as_f64() as f32,
                ]);
            }
            (row, out)
        })
        .collect();
    let mut color = ndarray::Array3::zeros((3, h, w));
    let mut depth = Array2::zeros((h, w));
    let mut acc = Array2::zeros((h, w));
    for (row, vals) in rows {
        for (col, v) in vals.into_iter().enumerate() {
            color[(0, row, col)] = v[0];
            color[(1, row, col)] = v[1];
            color[(2, row, col)] = v[2];
            depth[(row, col)] = if (v[4] as f64) < MIN_VALID_OPACITY {
                -1.0
            } else {
                v[3]
            };
            acc[(row, col)] = v[4];
        }
    }
    (color, depth, acc)
}

/// Expected-depth map only (skips the color head).
pub fn render_depth_map<F: Real>(
    params: &RadianceFieldParams<F>,
    camera: &CameraPose,
    k: usize,
) -> Array2<f32> {
    let (h, w) = (camera.height, camera.width);
    let rows: Vec<(usize, Vec<f32>)> = (0..h)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|row| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut out = Vec::with_capacity(w);
            for col in 0..w {
                let dir = camera.pixel_direction(row as u32, col as u32);
                let samples = sample_ray::<F>(
                    &camera.center(),
                    &dir,
                    params.near,
                    params.far,
                    k,
                    false,
                    &mut rng,
                )
                .expect("valid near/far");
                let sigma = params.density(samples.positions.view());
                let (weights, _) = composite_weights(sigma.view(), samples.delta.view());
                let mut acc = F::zero();
                let mut num = F::zero();
                for i in 0..k {
                    acc = acc + weights[i];
                    num = num + weights[i] * samples.t[i];
                }
                let depth = if acc.as_f64() < MIN_VALID_OPACITY {
                    -1.0
                } else {
                    (num / acc.max(rf(DEPTH_EPS))).as_f64() as f32
                };
                out.push(depth);
            }
            (row, out)
        })
        .collect();
    let mut depth = Array2::zeros((h, w));
    for (row, vals) in rows {
        for (col, v) in vals.into_iter().enumerate() {
            depth[(row, col)] = v;
        }
    }
    depth
}

/// Peak signal-to-noise ratio between two `[0, 1]` images.
pub fn psnr(a: &ndarray::Array3<f32>, b: &ndarray::Array3<f32>) -> f64 {
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = (*x - *y) as f64;
        sum += d * d;
    }
    let mse = sum / a.len() as f64;
    -10.0 * mse.max(1e-12).log10()
}


impl RadianceFieldParams<f32> {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> crate::checkpoint::Checkpoint {
        let mut full = meta;
        full["l_pos"] = serde_json::json!(self.l_pos);
        full["l_dir"] = serde_json::json!(self.l_dir);
        full["depth"] = serde_json::json!(self.trunk.layers.len());
        full["skip_at"] = serde_json::json!(self.trunk.skip_at);
        full["near"] = serde_json::json!(self.near);
        full["far"] = serde_json::json!(self.far);
        full["background"] = serde_json::json!(self.background.to_vec());
        let mut ck = crate::checkpoint::Checkpoint::new("radiance_field", full);
        crate::checkpoint::push_mlp(&mut ck, "trunk", &self.trunk);
        crate::checkpoint::push_dense(&mut ck, "sigma_head", &self.sigma_head);
        crate::checkpoint::push_mlp(&mut ck, "color_head", &self.color_head);
        ck
    }

    pub fn from_checkpoint(ck: &crate::checkpoint::Checkpoint) -> crate::error::Result<Self> {
        use crate::nn::Activation;
        ck.expect_kind("radiance_field")?;
        let depth = ck.meta_u64("depth")? as usize;
        let skip_at = ck
            .meta
            .get("skip_at")
            .and_then(|v| v.as_u64())
            .map(|v| v as usize);
        let trunk = crate::checkpoint::read_mlp(
            ck,
            "trunk",
            depth,
            Activation::Relu,
            Activation::Relu,
            skip_at,
        )?;
        let sigma_head = crate::checkpoint::read_dense(ck, "sigma_head")?;
        let color_head = crate::checkpoint::read_mlp(
            ck,
            "color_head",
            2,
            Activation::Relu,
            Activation::Sigmoid,
            None,
        )?;
        let background = ck
            .meta
            .get("background")
            .and_then(|v| v.as_array())
            .map(|a| {
                let mut bg = [0.0f64; 3];
                for (i, v) in a.iter().take(3).enumerate() {
                    bg[i] = v.as_f64().unwrap_or(0.0);
                }
                bg
            })
            .unwrap_or([0.0; 3]);
        Ok(RadianceFieldParams {
            trunk,
            sigma_head,
            color_head,
            l_pos: ck.meta_u64("l_pos")? as usize,
            l_dir: ck.meta_u64("l_dir")? as usize,
            near: ck.meta_f64("near")?,
            far: ck.meta_f64("far")?,
            background,
        })
    }
}
