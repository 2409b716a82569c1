//! The stylized field: a latent-conditioned style MLP that replaces the
//! radiance color head. Opacity always comes from the frozen radiance field;
//! nothing in this module can update it.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use nalgebra::Vector3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpCache, MlpGrad};
use crate::radiance::{
    composite, encode_points, RadianceFieldParams, RaySamples, RenderOutput,
};
use crate::real::{rf, Real};

/// Architecture of the style module.
#[derive(Clone, Debug)]
pub struct StyleArch {
    pub l_pos: usize,
    pub depth: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Ablation switch: also condition on the encoded view direction.
    /// Off by default; the style module sees position and latent code only.
    pub use_view_dirs: bool,
    pub l_dir: usize,
}

impl Default for StyleArch {
    fn default() -> Self {
        StyleArch {
            l_pos: 10,
            depth: 4,
            width: 256,
            latent_dim: 32,
            use_view_dirs: false,
            l_dir: 4,
        }
    }
}

/// Style MLP weights. The latent code is concatenated to the positional
/// encoding once, at the input.
#[derive(Clone, Debug)]
pub struct StylizedFieldParams<F> {
    pub style_mlp: Mlp<F>,
    pub arch: StyleArch,
}

pub struct StyleForward<F> {
    pub colors: Array2<F>,
    cache: MlpCache<F>,
    n_rows: usize,
}

impl<F: Real> StylizedFieldParams<F> {
    pub fn init<R: Rng>(arch: &StyleArch, rng: &mut R) -> Self {
        let mut in_dim = 2 * arch.l_pos * 3 + arch.latent_dim;
        if arch.use_view_dirs {
            in_dim += 2 * arch.l_dir * 3;
        }
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat(arch.width).take(arch.depth - 1));
        dims.push(3);
        let style_mlp = Mlp::init(&dims, Activation::Relu, Activation::Sigmoid, None, rng);
        StylizedFieldParams {
            style_mlp,
            arch: arch.clone(),
        }
    }

    fn check_latent(&self, latent: ArrayView1<'_, F>) -> Result<()> {
        if latent.len() != self.arch.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "latent code has {} dims, style module expects {}",
                latent.len(),
                self.arch.latent_dim
            )));
        }
        Ok(())
    }

    /// Builds the MLP input for a batch of positions sharing one latent code.
    fn assemble_input(
        &self,
        positions: ArrayView2<'_, F>,
        latent: ArrayView1<'_, F>,
        dirs: Option<ArrayView2<'_, F>>,
    ) -> Array2<F> {
        let n = positions.nrows();
        let enc = encode_points(positions, self.arch.l_pos);
        let mut width = enc.ncols() + self.arch.latent_dim;
        let enc_dir = if self.arch.use_view_dirs {
            let dirs = dirs.expect("view-dir conditioning needs directions");
            let e = encode_points(dirs, self.arch.l_dir);
            width += e.ncols();
            Some(e)
        } else {
            None
        };
        let mut input = Array2::zeros((n, width));
        input.slice_mut(s![.., ..enc.ncols()]).assign(&enc);
        let lat_end = enc.ncols() + self.arch.latent_dim;
        for mut row in input.slice_mut(s![.., enc.ncols()..lat_end]).outer_iter_mut() {
            row.assign(&latent);
        }
        if let Some(e) = enc_dir {
            input.slice_mut(s![.., lat_end..]).assign(&e);
        }
        input
    }

    /// Stylized color of a single 3D point under one latent code.
    pub fn stylized_color(&self, x: &[F; 3], latent: ArrayView1<'_, F>) -> Result<[F; 3]> {
        self.check_latent(latent)?;
        let positions = Array2::from_shape_fn((1, 3), |(_, j)| x[j]);
        let input = self.assemble_input(positions.view(), latent, None);
        let out = self.style_mlp.forward(input.view());
        Ok([out[(0, 0)], out[(0, 1)], out[(0, 2)]])
    }

    /// Batched forward with cache for backprop.
    pub fn forward_batch(
        &self,
        positions: ArrayView2<'_, F>,
        latent: ArrayView1<'_, F>,
        dirs: Option<ArrayView2<'_, F>>,
    ) -> Result<StyleForward<F>> {
        self.check_latent(latent)?;
        let input = self.assemble_input(positions, latent, dirs);
        let (colors, cache) = self.style_mlp.forward_cache(input.view());
        Ok(StyleForward {
            colors,
            cache,
            n_rows: positions.nrows(),
        })
    }

    /// Backprop color gradients to MLP parameter gradients and the latent
    /// code gradient (summed over the batch).
    pub fn backward_batch(
        &self,
        fwd: &StyleForward<F>,
        d_colors: ArrayView2<'_, F>,
    ) -> (MlpGrad<F>, Array1<F>) {
        let (d_input, grads) = self.style_mlp.backward(&fwd.cache, d_colors);
        let enc_dim = 2 * self.arch.l_pos * 3;
        let mut d_latent = Array1::zeros(self.arch.latent_dim);
        for i in 0..fwd.n_rows {
            for (k, dl) in d_latent.iter_mut().enumerate() {
                *dl = *dl + d_input[(i, enc_dim + k)];
            }
        }
        (grads, d_latent)
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        self.style_mlp.param_slices()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        self.style_mlp.param_slices_mut()
    }
}

/// Renders one ray of the stylized field: frozen opacity, stylized colors,
/// the same compositor as the radiance renderer.
pub fn render_stylized<F: Real>(
    style: &StylizedFieldParams<F>,
    radiance: &RadianceFieldParams<F>,
    dir: &Vector3<f64>,
    samples: &RaySamples<F>,
    latent: ArrayView1<'_, F>,
) -> Result<RenderOutput<F>> {
    use crate::radiance::VolumeField;
    let sigma = radiance.density(samples.positions.view());
    let dirs = if style.arch.use_view_dirs {
        Some(Array2::from_shape_fn((samples.len(), 3), |(_, j)| {
            rf::<F>(dir[j])
        }))
    } else {
        None
    };
    let fwd = style.forward_batch(
        samples.positions.view(),
        latent,
        dirs.as_ref().map(|d| d.view()),
    )?;
    Ok(composite(&sigma, &fwd.colors, samples, [F::zero(); 3]))
}

/// Loss weights of the two mutual-learning objectives.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 1e-5,
            lambda_s: 1.0,
            lambda_m: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_d < 0.0 || self.lambda_s < 0.0 || self.lambda_m < 0.0 {
            return Err(Error::Config(
                "loss weights must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Mean squared error between field-rendered pixels and the 2D stylizer's
/// pixels at the same (view, style, pixel) triples, averaged over batch and
/// channels.
pub fn mimic_loss<F: Real>(c_n: &Array2<F>, c_a: &Array2<F>) -> Result<F> {
    if c_n.dim() != c_a.dim() {
        return Err(Error::ShapeMismatch(format!(
            "mimic loss batches are misaligned: {:?} vs {:?}",
            c_n.dim(),
            c_a.dim()
        )));
    }
    let n = rf::<F>(c_n.len() as f64);
    let mut acc = F::zero();
    for (a, b) in c_n.iter().zip(c_a.iter()) {
        let d = *a - *b;
        acc = acc + d * d;
    }
    Ok(acc / n)
}

/// Gradients of [`mimic_loss`] w.r.t. both sides.
pub fn mimic_loss_backward<F: Real>(c_n: &Array2<F>, c_a: &Array2<F>) -> (Array2<F>, Array2<F>) {
    let n = rf::<F>(c_n.len() as f64);
    let two = rf::<F>(2.0);
    let d_n = ndarray::Zip::from(c_n)
        .and(c_a)
        .map_collect(|x, y| two * (*x - *y) / n);
    let d_a = d_n.mapv(|v| -v);
    (d_n, d_a)
}

/// Objective for the style module and latent codes: `L_mimic + lambda_d L_d`.
/// Gradients from this objective reach the style MLP and codes only.
pub fn objective_n<F: Real>(mimic: F, distribution: F, weights: &LossWeights) -> F {
    mimic + rf::<F>(weights.lambda_d) * distribution
}

/// Objective for fine-tuning the 2D decoder:
/// `lambda_m L_mimic + lambda_s L_s + L_c`. Gradients reach the decoder only.
pub fn objective_c<F: Real>(mimic: F, style: F, content: F, weights: &LossWeights) -> F {
    rf::<F>(weights.lambda_m) * mimic + rf::<F>(weights.lambda_s) * style + content
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiance::{sample_ray, NerfArch};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> StyleArch {
        StyleArch {
            l_pos: 2,
            depth: 3,
            width: 8,
            latent_dim: 4,
            use_view_dirs: false,
            l_dir: 1,
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Style net that always outputs `rgb` regardless of input.
    fn constant_style(rgb: [f64; 3]) -> StylizedFieldParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = StylizedFieldParams::<f64>::init(&tiny_arch(), &mut rng);
        for layer in &mut params.style_mlp.layers {
            layer.weight.fill(0.0);
            layer.bias.fill(0.0);
        }
        let last = params.style_mlp.layers.last_mut().unwrap();
        for c in 0..3 {
            last.bias[c] = logit(rgb[c]);
        }
        params
    }

    #[test]
    fn stylized_color_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = StylizedFieldParams::<f64>::init(&tiny_arch(), &mut rng);
        let latent = array![0.1, -0.2, 0.5, 0.9];
        let a = params.stylized_color(&[0.3, 0.4, -0.2], latent.view()).unwrap();
        let b = params.stylized_color(&[0.3, 0.4, -0.2], latent.view()).unwrap();
        assert_eq!(a, b);
        for c in a {
            assert!((0.0..=1.0).contains(&c));
        }
        // latent dimension mismatch
        let bad = array![0.1, 0.2];
        assert!(params.stylized_color(&[0.0; 3], bad.view()).is_err());
    }

    #[test]
    fn constant_style_factors_out_of_the_sum() {
        let style = constant_style([0.8, 0.3, 0.6]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let radiance =
            RadianceFieldParams::<f64>::init(&NerfArch { l_pos: 2, l_dir: 1, depth: 2, width: 8, skip_at: 0 }, 1.0, 3.0, &mut rng);
        let dir = Vector3::new(0.2, -0.1, -1.0).normalize();
        let mut srng = ChaCha8Rng::seed_from_u64(2);
        let samples = sample_ray::<f64>(&Vector3::zeros(), &dir, 1.0, 3.0, 16, true, &mut srng).unwrap();
        let latent = Array1::zeros(4);
        let out = render_stylized(&style, &radiance, &dir, &samples, latent.view()).unwrap();
        for c in 0..3 {
            assert_relative_eq!(
                out.color[c],
                [0.8, 0.3, 0.6][c] * out.accumulated,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn vacuum_gives_zero_stylized_color() {
        let style = constant_style([0.9, 0.9, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut radiance =
            RadianceFieldParams::<f64>::init(&NerfArch { l_pos: 2, l_dir: 1, depth: 2, width: 8, skip_at: 0 }, 1.0, 3.0, &mut rng);
        // softplus(-40) is numerically zero
        radiance.sigma_head.weight.fill(0.0);
        radiance.sigma_head.bias.fill(-40.0);
        let dir = Vector3::new(0.0, 0.0, -1.0);
        let mut srng = ChaCha8Rng::seed_from_u64(2);
        let samples = sample_ray::<f64>(&Vector3::zeros(), &dir, 1.0, 3.0, 8, false, &mut srng).unwrap();
        let latent = Array1::zeros(4);
        let out = render_stylized(&style, &radiance, &dir, &samples, latent.view()).unwrap();
        for c in 0..3 {
            assert!(out.color[c].abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_bitwise_shared_with_the_radiance_renderer() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let arch = NerfArch { l_pos: 3, l_dir: 2, depth: 3, width: 16, skip_at: 1 };
        let radiance = RadianceFieldParams::<f32>::init(&arch, 1.0, 4.0, &mut rng);
        let style = {
            let mut srng = ChaCha8Rng::seed_from_u64(8);
            StylizedFieldParams::<f32>::init(
                &StyleArch { l_pos: 3, depth: 3, width: 16, latent_dim: 4, use_view_dirs: false, l_dir: 2 },
                &mut srng,
            )
        };
        let dir = Vector3::new(0.4, 0.2, -1.0).normalize();
        let mut srng = ChaCha8Rng::seed_from_u64(9);
        let samples =
            sample_ray::<f32>(&Vector3::new(0.1, -0.3, 2.0), &dir, 1.0, 4.0, 24, true, &mut srng)
                .unwrap();
        let latent = Array1::zeros(4);
        let stylized = render_stylized(&style, &radiance, &dir, &samples, latent.view()).unwrap();
        let plain = crate::radiance::render_ray(&radiance, &dir, &samples, [0.0; 3]);
        assert_eq!(stylized.weights, plain.weights);
        assert_eq!(stylized.transmittance, plain.transmittance);
        assert_eq!(stylized.accumulated, plain.accumulated);
        assert_eq!(stylized.expected_depth, plain.expected_depth);
    }

    #[test]
    fn mimic_loss_fixed_points_and_offset() {
        let a = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.01);
        assert_eq!(mimic_loss(&a, &a).unwrap(), 0.0);
        let b = &a + 0.1;
        assert_relative_eq!(mimic_loss(&b, &a).unwrap(), 0.010000000000000002, epsilon = 1e-15);
        let short = Array2::<f64>::zeros((4, 3));
        assert!(mimic_loss(&a, &short).is_err());
    }

    #[test]
    fn mimic_gradient_reaches_both_sides() {
        let a = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        let b = a.mapv(|v| v + 0.05);
        let (d_n, d_a) = mimic_loss_backward(&a, &b);
        assert!(d_n.iter().any(|v| *v != 0.0));
        assert!(d_a.iter().any(|v| *v != 0.0));
        for (x, y) in d_n.iter().zip(d_a.iter()) {
            assert_eq!(*x, -*y);
        }
    }

    #[test]
    fn objectives_combine_exactly_as_printed() {
        let w = LossWeights::default();
        assert_eq!(w.lambda_d, 1e-5);
        assert_eq!(w.lambda_s, 1.0);
        assert_eq!(w.lambda_m, 10.0);
        assert_relative_eq!(objective_n(0.5, 2.0, &w), 0.5 + 1e-5 * 2.0, epsilon = 1e-15);
        assert_relative_eq!(objective_c(0.5, 0.3, 0.2, &w), 10.0 * 0.5 + 0.3 + 0.2, epsilon = 1e-15);

        let zero_d = LossWeights { lambda_d: 0.0, ..w };
        assert_eq!(objective_n(0.7, 123.0, &zero_d), 0.7);
        let content_only = LossWeights { lambda_m: 0.0, lambda_s: 0.0, ..w };
        assert_eq!(objective_c(9.0, 9.0, 0.25, &content_only), 0.25);
        assert_eq!(objective_n(0.0, 0.0, &w), 0.0);
        assert_eq!(objective_c(0.0, 0.0, 0.0, &w), 0.0);
        assert!(LossWeights { lambda_d: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn mimic_gradients_through_style_mlp_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut style = StylizedFieldParams::<f64>::init(&tiny_arch(), &mut rng);
        let radiance = RadianceFieldParams::<f64>::init(
            &NerfArch { l_pos: 2, l_dir: 1, depth: 2, width: 8, skip_at: 0 },
            1.0,
            3.0,
            &mut rng,
        );
        let dir = Vector3::new(0.1, 0.3, -1.0).normalize();
        let mut srng = ChaCha8Rng::seed_from_u64(22);
        let samples =
            sample_ray::<f64>(&Vector3::new(0.0, 0.1, 2.0), &dir, 1.0, 3.0, 5, true, &mut srng)
                .unwrap();
        let mut latent = Array1::from_shape_fn(4, |_| rng.gen_range(-0.5..0.5));
        let target = array![[0.3, 0.6, 0.2]];

        use crate::radiance::VolumeField;
        let sigma = radiance.density(samples.positions.view());
        let (weights, trans) = crate::radiance::composite_weights(sigma.view(), samples.delta.view());

        let eval = |style: &StylizedFieldParams<f64>, latent: &Array1<f64>| -> f64 {
            let out = render_stylized(style, &radiance, &dir, &samples, latent.view()).unwrap();
            let c_n = Array2::from_shape_fn((1, 3), |(_, c)| out.color[c]);
            mimic_loss(&c_n, &target).unwrap()
        };

        // analytic: d mimic / d C_n, then through the compositor color sum
        let fwd = style
            .forward_batch(samples.positions.view(), latent.view(), None)
            .unwrap();
        let out = composite(&sigma, &fwd.colors, &samples, [0.0; 3]);
        let c_n = Array2::from_shape_fn((1, 3), |(_, c)| out.color[c]);
        let (d_cn, _) = mimic_loss_backward(&c_n, &target);
        let (d_sigma_unused, d_colors) = crate::radiance::composite_backward(
            &[d_cn[(0, 0)], d_cn[(0, 1)], d_cn[(0, 2)]],
            sigma.view(),
            fwd.colors.view(),
            &samples,
            weights.view(),
            trans.view(),
            [0.0; 3],
        );
        let _ = d_sigma_unused; // opacity is frozen; its gradient is discarded
        let (grads, d_latent) = style.backward_batch(&fwd, d_colors.view());

        let h = 1e-6;
        // MLP parameters
        let n_groups = style.param_slices().len();
        for gi in 0..n_groups {
            let len = style.param_slices()[gi].len();
            for j in (0..len).step_by(7) {
                let analytic = grads.grad_slices()[gi][j];
                let orig = style.param_slices()[gi][j];
                style.param_slices_mut()[gi][j] = orig + h;
                let hi = eval(&style, &latent);
                style.param_slices_mut()[gi][j] = orig - h;
                let lo = eval(&style, &latent);
                style.param_slices_mut()[gi][j] = orig;
                let numeric = (hi - lo) / (2.0 * h);
                let denom: f64 = analytic.abs().max(numeric.abs());
                if denom < 1e-12 {
                    continue;
                }
                assert!(
                    (analytic - numeric).abs() / denom < 1e-3,
                    "group {gi} slot {j}: {analytic} vs {numeric}"
                );
            }
        }
        // latent code
        for k in 0..latent.len() {
            let orig = latent[k];
            latent[k] = orig + h;
            let hi = eval(&style, &latent);
            latent[k] = orig - h;
            let lo = eval(&style, &latent);
            latent[k] = orig;
            let numeric = (hi - lo) / (2.0 * h);
            let denom: f64 = d_latent[k].abs().max(numeric.abs());
            if denom < 1e-12 {
                continue;
            }
            assert!(
                (d_latent[k] - numeric).abs() / denom < 1e-3,
                "latent {k}: {} vs {numeric}",
                d_latent[k]
            );
        }
    }
}

/// Full-frame render of the stylized field under one latent code. Returns
/// the stylized image and the expected-depth map (`-1` where accumulated
/// opacity is too low). Rows render in parallel, deterministically.
pub fn render_stylized_image(
    style: &StylizedFieldParams<f32>,
    radiance: &RadianceFieldParams<f32>,
    camera: &crate::camera::CameraPose,
    k: usize,
    latent: ArrayView1<'_, f32>,
) -> Result<(ndarray::Array3<f32>, ndarray::Array2<f32>)> {
    use crate::radiance::{sample_ray, MIN_VALID_OPACITY};
    use rand::SeedableRng;
    use rayon::prelude::*;
    style.check_latent(latent)?;
    let (h, w) = (camera.height, camera.width);
    let latent_owned = latent.to_owned();
    let rows: Vec<(usize, Vec<[f32; 4]>)> = (0..h)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|row| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let mut out = Vec::with_capacity(w);
            for col in 0..w {
                let dir = camera.pixel_direction(row as u32, col as u32);
                let samples = sample_ray::<f32>(
                    &camera.center(),
                    &dir,
                    radiance.near,
                    radiance.far,
                    k,
                    false,
                    &mut rng,
                )
                .expect("valid near/far");
                let r = render_stylized(style, radiance, &dir, &samples, latent_owned.view())
                    .expect("latent validated");
                let depth = if (r.accumulated as f64) < MIN_VALID_OPACITY {
                    -1.0
                } else {
                    r.expected_depth
                };
                out.push([r.color[0], r.color[1], r.color[2], depth]);
            }
            (row, out)
        })
        .collect();
    let mut image = ndarray::Array3::zeros((3, h, w));
    let mut depth = ndarray::Array2::zeros((h, w));
    for (row, vals) in rows {
        for (col, v) in vals.into_iter().enumerate() {
            image[(0, row, col)] = v[0];
            image[(1, row, col)] = v[1];
            image[(2, row, col)] = v[2];
            depth[(row, col)] = v[3];
        }
    }
    Ok((image, depth))
}
