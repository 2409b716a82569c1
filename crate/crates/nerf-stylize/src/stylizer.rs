//! The 2D stylization network: a frozen convolutional perceptual encoder, an
//! adaptive instance-normalization layer, a trainable decoder, and the
//! style, content, and cross-view consistency losses.
//!
//! The encoder is a fixed filter bank: four 3x3 convolution blocks with
//! channel widths [16, 32, 64, 128], ReLU, and 2x average pooling between
//! blocks, so layer `l` lives at `1 / 2^l` resolution. Its weights are drawn
//! once from a pinned seed and never trained; they ship as a checkpoint
//! asset whose hash is pinned by a test.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::WarpField;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{AvgPool2, Conv2d, Conv2dGrad, UpsampleNearest2};
use crate::real::{rf, Real};

/// Channel widths of the four encoder blocks.
pub const ENCODER_CHANNELS: [usize; 4] = [16, 32, 64, 128];
/// Smallest image the deepest layer can digest.
pub const MIN_IMAGE_SIZE: usize = 16;
/// Stabilizer inside the standard-deviation square root.
pub const STATS_EPS: f64 = 1e-5;
/// Seed of the canonical frozen encoder asset.
const ENCODER_SEED: u64 = 0xA11CE;
/// Pinned SHA-256 of the serialized canonical encoder.
pub const ENCODER_SHA256: &str =
    "89e50ec5fbfd9f3cf4ef0b14ba31d1fd05dc9bf819b64a7a6dd72a6c38b6e3b3";

/// Frozen perceptual encoder.
#[derive(Clone, Debug)]
pub struct Encoder<F> {
    pub convs: Vec<Conv2d<F>>,
}

/// Per-layer feature maps, shallowest first.
#[derive(Clone, Debug)]
pub struct FeatureStack<F> {
    pub layers: Vec<Array3<F>>,
}

impl<F: Real> FeatureStack<F> {
    pub fn deepest(&self) -> &Array3<F> {
        self.layers.last().unwrap()
    }
}

pub struct EncoderCache<F> {
    inputs: Vec<Array3<F>>,
    preacts: Vec<Array3<F>>,
}

impl<F: Real> Encoder<F> {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let mut convs = Vec::new();
        let mut c_in = 3;
        for &c_out in ENCODER_CHANNELS.iter() {
            let mut conv = Conv2d::init(c_in, c_out, rng);
            // small positive bias keeps units responsive under ReLU
            conv.bias.fill(rf::<F>(0.1));
            convs.push(conv);
            c_in = c_out;
        }
        Encoder { convs }
    }

    /// Spatial downsampling factor of layer `l`.
    pub fn downsample_factor(layer: usize) -> usize {
        1 << layer
    }

    pub fn validate_size(height: usize, width: usize) -> Result<()> {
        if height < MIN_IMAGE_SIZE || width < MIN_IMAGE_SIZE || height % 8 != 0 || width % 8 != 0 {
            return Err(Error::InvalidArgument(format!(
                "image {width}x{height} too small for the encoder: both sides must be \
                 multiples of 8 and at least {MIN_IMAGE_SIZE}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, image: &Array3<F>) -> Result<FeatureStack<F>> {
        Ok(self.encode_cache(image)?.0)
    }

    pub fn encode_cache(&self, image: &Array3<F>) -> Result<(FeatureStack<F>, EncoderCache<F>)> {
        let (c, h, w) = image.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects (3, H, W), got ({c}, {h}, {w})"
            )));
        }
        Self::validate_size(h, w)?;
        let pool = AvgPool2;
        let mut inputs = Vec::with_capacity(self.convs.len());
        let mut preacts = Vec::with_capacity(self.convs.len());
        let mut layers = Vec::with_capacity(self.convs.len());
        let mut x = image.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(x.view());
            let f = z.mapv(|v| if v > F::zero() { v } else { F::zero() });
            inputs.push(std::mem::replace(
                &mut x,
                if l + 1 < self.convs.len() {
                    pool.forward(f.view())
                } else {
                    f.clone()
                },
            ));
            preacts.push(z);
            layers.push(f);
        }
        Ok((FeatureStack { layers }, EncoderCache { inputs, preacts }))
    }

    /// Backprop per-layer feature gradients to an input-image gradient.
    /// Encoder weights are frozen, so no parameter gradients are produced.
    pub fn backward_input(
        &self,
        cache: &EncoderCache<F>,
        d_layers: &[Array3<F>],
    ) -> Array3<F> {
        assert_eq!(d_layers.len(), self.convs.len());
        let pool = AvgPool2;
        let n = self.convs.len();
        let mut dacc = d_layers[n - 1].clone();
        for l in (0..n).rev() {
            let dz = ndarray::Zip::from(&dacc)
                .and(&cache.preacts[l])
                .map_collect(|d, z| if *z > F::zero() { *d } else { F::zero() });
            let (dx, _) = self.convs[l].backward(cache.inputs[l].view(), dz.view());
            if l == 0 {
                return dx;
            }
            dacc = pool.backward(dx.view()) + &d_layers[l - 1];
        }
        unreachable!()
    }
}

/// The canonical frozen encoder, identical for every run.
pub fn default_encoder<F: Real>() -> Encoder<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(ENCODER_SEED);
    Encoder::init(&mut rng)
}

impl Encoder<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            "encoder",
            serde_json::json!({ "channels": ENCODER_CHANNELS.to_vec() }),
        );
        for (i, conv) in self.convs.iter().enumerate() {
            ck.push(
                format!("conv.{i}.weight"),
                vec![conv.weight.nrows(), conv.weight.ncols()],
                conv.weight.iter().copied().collect(),
            );
            ck.push(
                format!("conv.{i}.bias"),
                vec![conv.bias.len()],
                conv.bias.to_vec(),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("encoder")?;
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c_out) in ENCODER_CHANNELS.iter().enumerate() {
            let w = ck.tensor(&format!("conv.{i}.weight"))?;
            let weight = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let b = ck.tensor(&format!("conv.{i}.bias"))?;
            convs.push(Conv2d {
                weight,
                bias: Array1::from_vec(b.data.clone()),
                c_in,
                c_out,
            });
            c_in = c_out;
        }
        Ok(Encoder { convs })
    }
}

/// Per-layer channel means and standard deviations over the spatial
/// dimensions (population statistics, `sqrt(var + 1e-5)`).
#[derive(Clone, Debug)]
pub struct StyleStats<F> {
    pub mean: Vec<Array1<F>>,
    pub std: Vec<Array1<F>>,
}

impl<F: Real> StyleStats<F> {
    /// Concatenated `[mean_0, std_0, mean_1, std_1, ...]`, the VAE input.
    pub fn to_vector(&self) -> Array1<F> {
        let dim: usize = self.mean.iter().map(|m| m.len() * 2).sum();
        let mut out = Array1::zeros(dim);
        let mut idx = 0;
        for (mean, std) in self.mean.iter().zip(&self.std) {
            for v in mean.iter() {
                out[idx] = *v;
                idx += 1;
            }
            for v in std.iter() {
                out[idx] = *v;
                idx += 1;
            }
        }
        out
    }

    /// Length of [`StyleStats::to_vector`] for the canonical encoder.
    pub fn vector_dim() -> usize {
        2 * ENCODER_CHANNELS.iter().sum::<usize>()
    }
}

/// Channelwise spatial mean and stabilized std of one feature map.
pub fn layer_stats<F: Real>(map: &Array3<F>) -> (Array1<F>, Array1<F>) {
    let (c, h, w) = map.dim();
    let n = rf::<F>((h * w) as f64);
    let eps = rf::<F>(STATS_EPS);
    let mut mean = Array1::zeros(c);
    let mut std = Array1::zeros(c);
    for ch in 0..c {
        let mut sum = F::zero();
        let mut sq = F::zero();
        for r in 0..h {
            for col in 0..w {
                let v = map[(ch, r, col)];
                sum = sum + v;
                sq = sq + v * v;
            }
        }
        let mu = sum / n;
        let var = (sq / n - mu * mu).max(F::zero());
        mean[ch] = mu;
        std[ch] = (var + eps).sqrt();
    }
    (mean, std)
}

pub fn style_stats<F: Real>(features: &FeatureStack<F>) -> StyleStats<F> {
    let mut mean = Vec::with_capacity(features.layers.len());
    let mut std = Vec::with_capacity(features.layers.len());
    for layer in &features.layers {
        let (m, s) = layer_stats(layer);
        mean.push(m);
        std.push(s);
    }
    StyleStats { mean, std }
}

/// Aligns the channel statistics of `content` to the target style:
/// `style_std * (x - content_mean) / content_std + style_mean`.
///
/// `style_std` carries the `sqrt(var + eps)` stabilizer of [`layer_stats`];
/// the scale is computed on the de-stabilized variances (with the content
/// variance floored at `eps`), so re-measuring the output with the same
/// convention reproduces the target statistics exactly, dead channels
/// included.
pub fn adain<F: Real>(
    content: &Array3<F>,
    style_mean: &Array1<F>,
    style_std: &Array1<F>,
) -> Result<Array3<F>> {
    let (c, h, w) = content.dim();
    if style_mean.len() != c || style_std.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "adain: content has {c} channels, style stats have {}/{}",
            style_mean.len(),
            style_std.len()
        )));
    }
    let eps = rf::<F>(STATS_EPS);
    let n = rf::<F>((h * w) as f64);
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        let mut sum = F::zero();
        let mut sq = F::zero();
        for r in 0..h {
            for col in 0..w {
                let v = content[(ch, r, col)];
                sum = sum + v;
                sq = sq + v * v;
            }
        }
        let c_mean = sum / n;
        let c_var = (sq / n - c_mean * c_mean).max(F::zero());
        let s_var = (style_std[ch] * style_std[ch] - eps).max(F::zero());
        let scale = (s_var / c_var.max(eps)).sqrt();
        let shift = style_mean[ch] - c_mean * scale;
        for r in 0..h {
            for col in 0..w {
                out[(ch, r, col)] = content[(ch, r, col)] * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Trainable decoder mapping aligned deepest-layer features back to an RGB
/// image: conv + ReLU + 2x nearest upsampling three times, then a sigmoid
/// conv to (3, H, W).
#[derive(Clone, Debug)]
pub struct Decoder<F> {
    pub convs: Vec<Conv2d<F>>,
}

pub struct DecoderCache<F> {
    inputs: Vec<Array3<F>>,
    preacts: Vec<Array3<F>>,
    output: Array3<F>,
}

#[derive(Clone, Debug)]
pub struct DecoderGrad<F> {
    pub convs: Vec<Conv2dGrad<F>>,
}

impl<F: Real> DecoderGrad<F> {
    pub fn grad_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.convs {
            out.push(g.weight.as_slice().unwrap());
            out.push(g.bias.as_slice().unwrap());
        }
        out
    }

    pub fn add(&mut self, other: &DecoderGrad<F>) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: F) {
        for g in &mut self.convs {
            g.weight.mapv_inplace(|v| v * factor);
            g.bias.mapv_inplace(|v| v * factor);
        }
    }
}

impl<F: Real> Decoder<F> {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        let dims = [128usize, 64, 32, 16, 3];
        let convs = dims
            .windows(2)
            .map(|wnd| Conv2d::init(wnd[0], wnd[1], rng))
            .collect();
        Decoder { convs }
    }

    pub fn decode(&self, aligned: &Array3<F>) -> Array3<F> {
        self.decode_cache(aligned).0
    }

    pub fn decode_cache(&self, aligned: &Array3<F>) -> (Array3<F>, DecoderCache<F>) {
        let up = UpsampleNearest2;
        let n = self.convs.len();
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n);
        let mut x = aligned.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            let z = conv.forward(x.view());
            let f = if l + 1 < n {
                let relu = z.mapv(|v| if v > F::zero() { v } else { F::zero() });
                up.forward(relu.view())
            } else {
                z.mapv(|v| crate::nn::sigmoid(v))
            };
            inputs.push(std::mem::replace(&mut x, f));
            preacts.push(z);
        }
        let output = x.clone();
        (
            x,
            DecoderCache {
                inputs,
                preacts,
                output,
            },
        )
    }

    /// Backprop an output-image gradient to parameter gradients (and the
    /// gradient w.r.t. the aligned input features).
    pub fn backward(&self, cache: &DecoderCache<F>, d_out: &Array3<F>) -> (DecoderGrad<F>, Array3<F>) {
        let up = UpsampleNearest2;
        let n = self.convs.len();
        let mut grads: Vec<Option<Conv2dGrad<F>>> = (0..n).map(|_| None).collect();
        // last layer: sigmoid
        let mut dacc = ndarray::Zip::from(d_out)
            .and(&cache.output)
            .map_collect(|d, y| *d * *y * (F::one() - *y));
        for l in (0..n).rev() {
            if l + 1 < n {
                // undo upsample, then ReLU
                let dpool = up.backward(dacc.view());
                dacc = ndarray::Zip::from(&dpool)
                    .and(&cache.preacts[l])
                    .map_collect(|d, z| if *z > F::zero() { *d } else { F::zero() });
            }
            let (dx, g) = self.convs[l].backward(cache.inputs[l].view(), dacc.view());
            grads[l] = Some(g);
            dacc = dx;
        }
        (
            DecoderGrad {
                convs: grads.into_iter().map(|g| g.unwrap()).collect(),
            },
            dacc,
        )
    }

    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(c.weight.as_slice().unwrap());
            out.push(c.bias.as_slice().unwrap());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(c.weight.as_slice_mut().unwrap());
            out.push(c.bias.as_slice_mut().unwrap());
        }
        out
    }
}

impl Decoder<f32> {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new("decoder", meta);
        for (i, conv) in self.convs.iter().enumerate() {
            ck.push(
                format!("conv.{i}.weight"),
                vec![conv.weight.nrows(), conv.weight.ncols()],
                conv.weight.iter().copied().collect(),
            );
            ck.push(
                format!("conv.{i}.bias"),
                vec![conv.bias.len()],
                conv.bias.to_vec(),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("decoder")?;
        let dims = [128usize, 64, 32, 16, 3];
        let mut convs = Vec::new();
        for (i, wnd) in dims.windows(2).enumerate() {
            let w = ck.tensor(&format!("conv.{i}.weight"))?;
            let weight = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            let b = ck.tensor(&format!("conv.{i}.bias"))?;
            convs.push(Conv2d {
                weight,
                bias: Array1::from_vec(b.data.clone()),
                c_in: wnd[0],
                c_out: wnd[1],
            });
        }
        Ok(Decoder { convs })
    }
}

/// Encoder + decoder bundle: `stylize` runs encode, statistic alignment on
/// the deepest layer, and decode.
#[derive(Clone, Debug)]
pub struct Stylizer2d<F> {
    pub encoder: Encoder<F>,
    pub decoder: Decoder<F>,
}

impl<F: Real> Stylizer2d<F> {
    pub fn stylize(&self, content: &Array3<F>, style: &StyleStats<F>) -> Result<Array3<F>> {
        let feats = self.encoder.encode(content)?;
        let deepest = feats.layers.len() - 1;
        let aligned = adain(
            feats.deepest(),
            &style.mean[deepest],
            &style.std[deepest],
        )?;
        Ok(self.decoder.decode(&aligned))
    }
}

/// Mean squared distance between the re-encoded output's deepest features
/// and the alignment target.
pub fn content_loss<F: Real>(out_deepest: &Array3<F>, target: &Array3<F>) -> F {
    debug_assert_eq!(out_deepest.dim(), target.dim());
    let n = rf::<F>(out_deepest.len() as f64);
    let mut acc = F::zero();
    for (a, b) in out_deepest.iter().zip(target.iter()) {
        let d = *a - *b;
        acc = acc + d * d;
    }
    acc / n
}

pub fn content_loss_backward<F: Real>(out_deepest: &Array3<F>, target: &Array3<F>) -> Array3<F> {
    let n = rf::<F>(out_deepest.len() as f64);
    let two = rf::<F>(2.0);
    ndarray::Zip::from(out_deepest)
        .and(target)
        .map_collect(|a, b| two * (*a - *b) / n)
}

/// Sum over layers of the mean squared distances between channel means and
/// between channel stds.
pub fn style_loss<F: Real>(a: &StyleStats<F>, b: &StyleStats<F>) -> F {
    let mut acc = F::zero();
    for l in 0..a.mean.len() {
        let c = rf::<F>(a.mean[l].len() as f64);
        let mut layer = F::zero();
        for (x, y) in a.mean[l].iter().zip(b.mean[l].iter()) {
            let d = *x - *y;
            layer = layer + d * d;
        }
        for (x, y) in a.std[l].iter().zip(b.std[l].iter()) {
            let d = *x - *y;
            layer = layer + d * d;
        }
        acc = acc + layer / c;
    }
    acc
}

/// Gradient of [`style_loss`] w.r.t. the feature maps behind `a`.
/// Needs those maps to route the std term; returns one gradient per layer.
pub fn style_loss_backward<F: Real>(
    features: &FeatureStack<F>,
    a: &StyleStats<F>,
    b: &StyleStats<F>,
) -> Vec<Array3<F>> {
    let two = rf::<F>(2.0);
    let mut out = Vec::with_capacity(features.layers.len());
    for l in 0..features.layers.len() {
        let map = &features.layers[l];
        let (c, h, w) = map.dim();
        let n = rf::<F>((h * w) as f64);
        let cn = rf::<F>(c as f64);
        let mut grad = Array3::zeros((c, h, w));
        for ch in 0..c {
            let d_mean = two * (a.mean[l][ch] - b.mean[l][ch]) / cn;
            let d_std = two * (a.std[l][ch] - b.std[l][ch]) / cn;
            // d std / d x_i = (x_i - mean) / (n * std)
            let scale = d_std / (n * a.std[l][ch]);
            let base = d_mean / n;
            for r in 0..h {
                for col in 0..w {
                    grad[(ch, r, col)] =
                        base + scale * (map[(ch, r, col)] - a.mean[l][ch]);
                }
            }
        }
        out.push(grad);
    }
    out
}

/// Masked mean squared error between a stylized view and another stylized
/// view warped into it, normalized by valid-pixel count and channels.
/// Returns the loss and a flag that is true when the mask was empty.
pub fn consistency_loss<F: Real>(
    o_i: &Array3<F>,
    o_j: &Array3<F>,
    field: &WarpField,
) -> Result<(F, bool)> {
    if o_i.dim() != o_j.dim() {
        return Err(Error::ShapeMismatch(format!(
            "consistency loss: shapes {:?} vs {:?}",
            o_i.dim(),
            o_j.dim()
        )));
    }
    let warped = field.apply(o_j);
    let valid = field.mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Ok((F::zero(), true));
    }
    let norm = rf::<F>(1.0 / (valid as f64 * 3.0));
    let mut acc = F::zero();
    let (_, h, w) = o_i.dim();
    for r in 0..h {
        for col in 0..w {
            if !field.mask[(r, col)] {
                continue;
            }
            for ch in 0..3 {
                let d = o_i[(ch, r, col)] - warped[(ch, r, col)];
                acc = acc + d * d;
            }
        }
    }
    Ok((acc * norm, false))
}

/// Gradients of [`consistency_loss`] w.r.t. both stylized views.
pub fn consistency_loss_backward<F: Real>(
    o_i: &Array3<F>,
    o_j: &Array3<F>,
    field: &WarpField,
) -> (Array3<F>, Array3<F>) {
    let warped = field.apply(o_j);
    let valid = field.mask.iter().filter(|&&m| m).count();
    let (c, h, w) = o_i.dim();
    if valid == 0 {
        return (Array3::zeros((c, h, w)), Array3::zeros(o_j.dim()));
    }
    let norm = rf::<F>(2.0 / (valid as f64 * 3.0));
    let mut d_i = Array3::zeros((c, h, w));
    let mut d_warped = Array3::zeros((c, h, w));
    for r in 0..h {
        for col in 0..w {
            if !field.mask[(r, col)] {
                continue;
            }
            for ch in 0..3 {
                let d = (o_i[(ch, r, col)] - warped[(ch, r, col)]) * norm;
                d_i[(ch, r, col)] = d;
                d_warped[(ch, r, col)] = -d;
            }
        }
    }
    let d_j = field.apply_backward(&d_warped);
    (d_i, d_j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn test_image(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..1.0))
    }

    /// Content with variance well above the stats stabilizer, the regime the
    /// encoder features live in.
    fn wide_image(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, h, w), |_| rng.gen_range(-1.5..1.5))
    }

    #[test]
    fn identical_images_give_identical_features() {
        let enc = default_encoder::<f64>();
        let img = test_image(16, 16, 1);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img.clone()).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn feature_dims_follow_downsampling_factors() {
        let enc = default_encoder::<f32>();
        let img = Array3::<f32>::zeros((3, 32, 24));
        let feats = enc.encode(&img).unwrap();
        for (l, layer) in feats.layers.iter().enumerate() {
            let f = Encoder::<f32>::downsample_factor(l);
            assert_eq!(layer.dim(), (ENCODER_CHANNELS[l], 32 / f, 24 / f));
        }
    }

    #[test]
    fn too_small_image_is_rejected_with_minimum() {
        let enc = default_encoder::<f32>();
        let img = Array3::<f32>::zeros((3, 8, 8));
        let err = enc.encode(&img).unwrap_err();
        assert!(err.to_string().contains("16"), "{err}");
    }

    #[test]
    fn constant_image_gives_constant_interior_features() {
        let enc = default_encoder::<f64>();
        let img = Array3::from_elem((3, 32, 32), 0.37);
        let feats = enc.encode(&img).unwrap();
        for layer in &feats.layers {
            let (c, h, w) = layer.dim();
            // padding effects reach ~2 pixels at each layer's own scale
            for ch in 0..c {
                let center = layer[(ch, h / 2, w / 2)];
                for r in 3..h - 3 {
                    for col in 3..w - 3 {
                        assert!(
                            (layer[(ch, r, col)] - center).abs() < 1e-9,
                            "layer not constant in interior"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn stats_of_constant_map() {
        let map = Array3::from_elem((2, 4, 4), 0.6f64);
        let (mean, std) = layer_stats(&map);
        assert_relative_eq!(mean[0], 0.6, epsilon = 1e-12);
        // zero variance before the stabilizer
        assert_relative_eq!(std[0] * std[0] - STATS_EPS, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stats_of_two_point_map() {
        let map = Array3::from_shape_vec((1, 1, 2), vec![1.0f64, 3.0]).unwrap();
        let (mean, std) = layer_stats(&map);
        assert_relative_eq!(mean[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(std[0], (1.0 + STATS_EPS).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let map = test_image(8, 8, 3);
        let (mean, std) = layer_stats(&map);
        for ch in 0..3 {
            // independent two-pass mean/std
            let mut sum = 0.0;
            for r in 0..8 {
                for c in 0..8 {
                    sum += map[(ch, r, c)];
                }
            }
            let mu = sum / 64.0;
            let mut var = 0.0;
            for r in 0..8 {
                for c in 0..8 {
                    var += (map[(ch, r, c)] - mu).powi(2);
                }
            }
            var /= 64.0;
            assert_relative_eq!(mean[ch], mu, epsilon = 1e-6);
            assert_relative_eq!(std[ch], (var + STATS_EPS).sqrt(), epsilon = 1e-6);
        }
    }

    #[test]
    fn adain_with_own_stats_is_identity() {
        let content = test_image(6, 6, 4);
        let (mean, std) = layer_stats(&content);
        let out = adain(&content, &mean, &std).unwrap();
        for (a, b) in out.iter().zip(content.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn adain_matches_target_statistics() {
        let content = wide_image(12, 12, 5);
        let style_mean = array![0.2, -0.4, 1.1];
        let style_std = array![0.5, 2.0, 1.3];
        let out = adain(&content, &style_mean, &style_std).unwrap();
        let (mean, std) = layer_stats(&out);
        for ch in 0..3 {
            assert!((mean[ch] - style_mean[ch]).abs() < 1e-4);
            assert!((std[ch] - style_std[ch]).abs() < 1e-4);
        }
    }

    #[test]
    fn adain_affine_form() {
        // content with exact mean 0 and (unstabilized) std 1 per channel
        let content = Array3::from_shape_fn((3, 2, 2), |(_, r, c)| {
            if (r + c) % 2 == 0 {
                1.0f64
            } else {
                -1.0
            }
        });
        let style_mean = array![5.0, 5.0, 5.0];
        let style_std = array![2.0, 2.0, 2.0];
        let out = adain(&content, &style_mean, &style_std).unwrap();
        for (o, c) in out.iter().zip(content.iter()) {
            assert!((o - (2.0 * c + 5.0)).abs() < 1e-4);
        }
    }

    #[test]
    fn adain_rejects_channel_mismatch() {
        let content = test_image(4, 4, 6);
        let mean = array![0.0, 0.0];
        let std = array![1.0, 1.0];
        assert!(adain(&content, &mean, &std).is_err());
    }

    #[test]
    fn adain_is_idempotent_in_statistics() {
        let content = wide_image(10, 10, 7);
        let style_mean = array![0.3, 0.9, -0.2];
        let style_std = array![1.4, 0.6, 1.6];
        let once = adain(&content, &style_mean, &style_std).unwrap();
        let twice = adain(&once, &style_mean, &style_std).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() < 1e-4, "not idempotent: {a} vs {b}");
        }
    }

    #[test]
    fn decode_is_deterministic_and_shape_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dec = Decoder::<f32>::init(&mut rng);
        let aligned = Array3::from_shape_fn((128, 3, 4), |_| rng.gen_range(-1.0f32..1.0));
        let a = dec.decode(&aligned);
        let b = dec.decode(&aligned);
        assert_eq!(a, b);
        assert_eq!(a.dim(), (3, 24, 32));
        assert!(a.iter().all(|v| *v >= 0.0 && *v <= 1.0));
    }

    #[test]
    fn content_loss_zero_at_target() {
        let t = test_image(4, 4, 9);
        assert_eq!(content_loss(&t, &t), 0.0);
        let off = &t + 0.1;
        assert!(content_loss(&off, &t) > 0.0);
    }

    #[test]
    fn style_loss_zero_against_itself() {
        let enc = default_encoder::<f64>();
        let img = test_image(16, 16, 10);
        let stats = style_stats(&enc.encode(&img).unwrap());
        assert_eq!(style_loss(&stats, &stats), 0.0);
    }

    #[test]
    fn style_loss_hand_built_two_channel() {
        // single layer, two channels; hand expansion:
        // mean((1-0.5)^2+(2-2.5)^2) + mean((0.5-1)^2+(1.5-1)^2) = 0.25 + 0.25
        let a = StyleStats {
            mean: vec![array![1.0, 2.0]],
            std: vec![array![0.5, 1.5]],
        };
        let b = StyleStats {
            mean: vec![array![0.5, 2.5]],
            std: vec![array![1.0, 1.0]],
        };
        assert_relative_eq!(style_loss(&a, &b), 0.5, epsilon = 1e-12);
    }

    fn identity_field(h: usize, w: usize) -> WarpField {
        let cam = crate::camera::CameraPose::identity(20.0, w, h);
        let depth = ndarray::Array2::from_elem((h, w), 2.5f32);
        crate::camera::compute_warp_field(&cam, &cam, &depth, &depth, 0.1).unwrap()
    }

    #[test]
    fn consistency_loss_fixed_points() {
        let field = identity_field(8, 8);
        let o = test_image(8, 8, 11);
        let (loss, empty) = consistency_loss(&o, &o, &field).unwrap();
        assert!(loss < 1e-12, "identity warp of identical views: {loss}");
        assert!(!empty);

        // vacuous mask
        let mut dead = identity_field(8, 8);
        dead.mask.fill(false);
        let (loss, empty) = consistency_loss(&o, &o, &dead).unwrap();
        assert_eq!(loss, 0.0);
        assert!(empty);
    }

    #[test]
    fn consistency_loss_constant_offset_is_squared_offset() {
        let field = identity_field(8, 8);
        let o_j = test_image(8, 8, 12);
        let o_i = field.apply(&o_j) + 0.1;
        let (loss, _) = consistency_loss(&o_i, &o_j, &field).unwrap();
        assert_relative_eq!(loss, 0.01, epsilon = 1e-9);
    }

    #[test]
    fn consistency_loss_symmetric_for_identity_cameras() {
        let field = identity_field(8, 8);
        let a = test_image(8, 8, 13);
        let b = test_image(8, 8, 14);
        let (ab, _) = consistency_loss(&a, &b, &field).unwrap();
        let (ba, _) = consistency_loss(&b, &a, &field).unwrap();
        assert_relative_eq!(ab, ba, epsilon = 1e-9);
    }

    #[test]
    fn decoder_loss_gradients_match_finite_differences() {
        // tiny end-to-end check; the acceptance suite runs the full version
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let enc = default_encoder::<f64>();
        let mut dec = Decoder::<f64>::init(&mut rng);
        let content = test_image(16, 16, 16);
        let style = test_image(16, 16, 17);
        let style_stats_target = style_stats(&enc.encode(&style).unwrap());
        let feats = enc.encode(&content).unwrap();
        let target = adain(
            feats.deepest(),
            &style_stats_target.mean[3],
            &style_stats_target.std[3],
        )
        .unwrap();

        let eval = |dec: &Decoder<f64>| -> f64 {
            let out = dec.decode(&target);
            let out_feats = enc.encode(&out).unwrap();
            let stats_out = style_stats(&out_feats);
            content_loss(out_feats.deepest(), &target)
                + style_loss(&stats_out, &style_stats_target)
        };

        // analytic gradient
        let (out, dec_cache) = dec.decode_cache(&target);
        let (out_feats, enc_cache) = enc.encode_cache(&out).unwrap();
        let stats_out = style_stats(&out_feats);
        let mut d_layers = style_loss_backward(&out_feats, &stats_out, &style_stats_target);
        let d_content = content_loss_backward(out_feats.deepest(), &target);
        *d_layers.last_mut().unwrap() += &d_content;
        let d_image = enc.backward_input(&enc_cache, &d_layers);
        let (grads, _) = dec.backward(&dec_cache, &d_image);

        let h = 1e-5;
        let mut checked = 0;
        let n_groups = dec.param_slices().len();
        let mut idx_rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let gi = idx_rng.gen_range(0..n_groups);
            let len = dec.param_slices()[gi].len();
            let j = idx_rng.gen_range(0..len);
            let analytic = grads.grad_slices()[gi][j];
            let orig = dec.param_slices()[gi][j];
            dec.param_slices_mut()[gi][j] = orig + h;
            let hi = eval(&dec);
            dec.param_slices_mut()[gi][j] = orig - h;
            let lo = eval(&dec);
            dec.param_slices_mut()[gi][j] = orig;
            let numeric = (hi - lo) / (2.0 * h);
            let denom: f64 = analytic.abs().max(numeric.abs());
            if denom < 1e-10 {
                continue;
            }
            let rel = (analytic - numeric).abs() / denom;
            assert!(rel < 1e-3, "group {gi} slot {j}: {analytic} vs {numeric} (rel {rel})");
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn encoder_asset_checksum_is_pinned() {
        let enc: Encoder<f32> = default_encoder();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("encoder.ckpt");
        enc.to_checkpoint().write(&path).unwrap();
        let hash = crate::checkpoint::sha256_file(&path).unwrap();
        // pinned: the frozen perceptual backbone must never drift
        assert_eq!(hash, ENCODER_SHA256);
        let back = Encoder::from_checkpoint(&Checkpoint::read(&path).unwrap()).unwrap();
        let img = test_image(16, 16, 18).mapv(|v| v as f32);
        let a = enc.encode(&img).unwrap();
        let b = back.encode(&img).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            assert_eq!(x, y);
        }
    }
}
