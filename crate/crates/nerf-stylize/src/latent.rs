//! The conditional latent model: a VAE that embeds style statistics as
//! Gaussians `N(mu_j, sigma_j)`, a learnable latent-code table with one code
//! per (view, style) pair, and the distribution loss that keeps codes inside
//! their style's Gaussian.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{push_dense, read_dense, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Dense};
use crate::real::{rf, Real};
use crate::rng::subseed;

/// Per-style Gaussian over latent space.
#[derive(Clone, Debug)]
pub struct StyleDistribution<F> {
    pub mu: Array1<F>,
    /// Elementwise positive scale.
    pub sigma: Array1<F>,
}

/// VAE weights: encoder (stats -> mu, log sigma) and decoder (latent ->
/// reconstructed stats).
#[derive(Clone, Debug)]
pub struct VaeParams<F> {
    pub enc_hidden: Dense<F>,
    pub mu_head: Dense<F>,
    pub log_sigma_head: Dense<F>,
    pub dec_hidden: Dense<F>,
    pub dec_out: Dense<F>,
}

#[derive(Clone, Debug)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub steps: u64,
    pub learning_rate: f64,
    /// KL weight; small so tiny corpora do not collapse.
    pub beta: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 32,
            hidden: 128,
            steps: 2000,
            learning_rate: 1e-3,
            beta: 0.01,
        }
    }
}

/// Keeps `log sigma` in a numerically sane band.
const LOG_SIGMA_MIN: f64 = -6.0;
const LOG_SIGMA_MAX: f64 = 2.0;

impl<F: Real> VaeParams<F> {
    pub fn init<R: Rng>(input_dim: usize, cfg: &VaeConfig, rng: &mut R) -> Self {
        let mut log_sigma_head = Dense::init(cfg.hidden, cfg.latent_dim, rng);
        // start near sigma = 0.37 with weak input coupling
        log_sigma_head.weight.mapv_inplace(|v| v * rf::<F>(0.1));
        log_sigma_head.bias.fill(rf::<F>(-1.0));
        VaeParams {
            enc_hidden: Dense::init(input_dim, cfg.hidden, rng),
            mu_head: Dense::init(cfg.hidden, cfg.latent_dim, rng),
            log_sigma_head,
            dec_hidden: Dense::init(cfg.latent_dim, cfg.hidden, rng),
            dec_out: Dense::init(cfg.hidden, input_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc_hidden.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.out_dim()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in [
            &mut self.enc_hidden,
            &mut self.mu_head,
            &mut self.log_sigma_head,
            &mut self.dec_hidden,
            &mut self.dec_out,
        ] {
            out.push(layer.weight.as_slice_mut().unwrap());
            out.push(layer.bias.as_slice_mut().unwrap());
        }
        out
    }

    /// Encoder forward: `(n, in) -> (mu, log_sigma)` each `(n, d)`.
    /// `log_sigma` is clamped to `[-6, 2]`; the returned raw copy lets the
    /// backward pass zero gradients at the clamp.
    fn encode_batch(&self, x: &Array2<F>) -> (Array2<F>, Array2<F>, Array2<F>, Array2<F>, Array2<F>) {
        let z1 = self.enc_hidden.forward(x.view());
        let h = z1.mapv(|v| Activation::Relu.apply(v));
        let mu = self.mu_head.forward(h.view());
        let raw_log_sigma = self.log_sigma_head.forward(h.view());
        let log_sigma = raw_log_sigma
            .mapv(|v| v.max(rf(LOG_SIGMA_MIN)).min(rf(LOG_SIGMA_MAX)));
        (mu, log_sigma, h, z1, raw_log_sigma)
    }

    /// Decoder forward: `(n, d) -> (n, in)`.
    fn decode_batch(&self, z: &Array2<F>) -> (Array2<F>, Array2<F>, Array2<F>) {
        let z2 = self.dec_hidden.forward(z.view());
        let h = z2.mapv(|v| Activation::Relu.apply(v));
        let recon = self.dec_out.forward(h.view());
        (recon, h, z2)
    }
}

/// KL divergence of `N(mu, sigma)` from the unit Gaussian, summed over
/// dimensions: `0.5 * sum(sigma^2 + mu^2 - 1 - 2 log sigma)`.
pub fn kl_unit_gaussian<F: Real>(mu: &Array1<F>, sigma: &Array1<F>) -> F {
    let half = rf::<F>(0.5);
    let mut acc = F::zero();
    for (m, s) in mu.iter().zip(sigma.iter()) {
        acc = acc + *s * *s + *m * *m - F::one() - (*s * *s).ln();
    }
    acc * half
}

/// Trains the VAE on the style-statistics corpus with full-batch Adam,
/// minimizing reconstruction MSE plus `beta` times the KL term.
pub fn train_vae<F: Real>(
    corpus: &[Array1<F>],
    cfg: &VaeConfig,
    seed: u64,
) -> Result<(VaeParams<F>, Vec<f64>)> {
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "VAE corpus needs at least 2 style vectors, got {}",
            corpus.len()
        )));
    }
    let input_dim = corpus[0].len();
    if corpus.iter().any(|v| v.len() != input_dim) {
        return Err(Error::ShapeMismatch(
            "style vectors in the corpus differ in length".into(),
        ));
    }
    let n = corpus.len();
    let mut x = Array2::zeros((n, input_dim));
    for (i, v) in corpus.iter().enumerate() {
        x.row_mut(i).assign(v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "vae-init", 0));
    let mut params = VaeParams::<F>::init(input_dim, cfg, &mut rng);
    let mut opt = Adam::new(rf::<F>(cfg.learning_rate));
    let mut history = Vec::with_capacity(cfg.steps as usize);
    let beta = rf::<F>(cfg.beta);
    let d = cfg.latent_dim;

    for step in 0..cfg.steps {
        let mut step_rng = ChaCha8Rng::seed_from_u64(subseed(seed, "vae-step", step));
        let (mu, log_sigma, h_enc, z1, raw_log_sigma) = params.encode_batch(&x);
        let sigma = log_sigma.mapv(|v| v.exp());
        let eps = Array2::from_shape_fn((n, d), |_| F::standard_normal(&mut step_rng));
        let z = &mu + &(&sigma * &eps);
        let (recon, h_dec, z2) = params.decode_batch(&z);

        // losses
        let norm = rf::<F>(1.0 / (n * input_dim) as f64);
        let mut recon_loss = F::zero();
        for (r, t) in recon.iter().zip(x.iter()) {
            let diff = *r - *t;
            recon_loss = recon_loss + diff * diff;
        }
        recon_loss = recon_loss * norm;
        let batch_norm = rf::<F>(1.0 / n as f64);
        let mut kl = F::zero();
        for i in 0..n {
            kl = kl + kl_unit_gaussian(
                &mu.row(i).to_owned(),
                &sigma.row(i).to_owned(),
            );
        }
        kl = kl * batch_norm;
        let loss = recon_loss + beta * kl;
        if !loss.as_f64().is_finite() {
            return Err(Error::NonFiniteLoss {
                term: "vae".into(),
                step,
            });
        }
        history.push(loss.as_f64());

        // backward
        let two = rf::<F>(2.0);
        let d_recon = ndarray::Zip::from(&recon)
            .and(&x)
            .map_collect(|r, t| two * (*r - *t) * norm);
        // decoder
        let (dh_dec, g_dec_out) = params.dec_out.backward(h_dec.view(), d_recon.view());
        let dz2 = ndarray::Zip::from(&dh_dec)
            .and(&z2)
            .map_collect(|g, z| if *z > F::zero() { *g } else { F::zero() });
        let (dz, g_dec_hidden) = params.dec_hidden.backward(z.view(), dz2.view());
        // reparameterization + KL
        let d_mu = ndarray::Zip::from(&dz)
            .and(&mu)
            .map_collect(|g, m| *g + beta * batch_norm * *m);
        let mut d_log_sigma = ndarray::Zip::from(&dz)
            .and(&sigma)
            .and(&eps)
            .map_collect(|g, s, e| {
                *g * *s * *e + beta * batch_norm * (*s * *s - F::one())
            });
        // no gradient through the clamp
        ndarray::Zip::from(&mut d_log_sigma)
            .and(&raw_log_sigma)
            .for_each(|g, raw| {
                if raw.as_f64() <= LOG_SIGMA_MIN || raw.as_f64() >= LOG_SIGMA_MAX {
                    *g = F::zero();
                }
            });
        let (dh_mu, g_mu) = params.mu_head.backward(h_enc.view(), d_mu.view());
        let (dh_ls, g_ls) = params
            .log_sigma_head
            .backward(h_enc.view(), d_log_sigma.view());
        let dh = &dh_mu + &dh_ls;
        let dz1 = ndarray::Zip::from(&dh)
            .and(&z1)
            .map_collect(|g, z| if *z > F::zero() { *g } else { F::zero() });
        let (_, g_enc) = params.enc_hidden.backward(x.view(), dz1.view());

        let grads = vec![
            g_enc.weight.as_slice().unwrap(),
            g_enc.bias.as_slice().unwrap(),
            g_mu.weight.as_slice().unwrap(),
            g_mu.bias.as_slice().unwrap(),
            g_ls.weight.as_slice().unwrap(),
            g_ls.bias.as_slice().unwrap(),
            g_dec_hidden.weight.as_slice().unwrap(),
            g_dec_hidden.bias.as_slice().unwrap(),
            g_dec_out.weight.as_slice().unwrap(),
            g_dec_out.bias.as_slice().unwrap(),
        ];
        opt.step(params.param_slices_mut(), grads);
    }
    Ok((params, history))
}

/// Deterministically embeds one style-statistics vector as a Gaussian.
/// No sampling happens here.
pub fn encode_style<F: Real>(
    params: &VaeParams<F>,
    stats: &Array1<F>,
) -> Result<StyleDistribution<F>> {
    if stats.len() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "style vector has {} dims, VAE expects {}",
            stats.len(),
            params.input_dim()
        )));
    }
    let x = stats.clone().insert_axis(Axis(0));
    let (mu, log_sigma, _, _, _) = params.encode_batch(&x);
    Ok(StyleDistribution {
        mu: mu.row(0).to_owned(),
        sigma: log_sigma.row(0).mapv(|v| v.exp()),
    })
}

/// Learnable latent codes, exactly one per (view, style) pair, stored
/// view-major.
#[derive(Clone, Debug)]
pub struct LatentCodeTable<F> {
    /// `(n_views * n_styles, D)`
    pub codes: Array2<F>,
    pub view_ids: Vec<String>,
    pub style_ids: Vec<String>,
}

impl<F: Real> LatentCodeTable<F> {
    pub fn index(&self, view: usize, style: usize) -> usize {
        debug_assert!(view < self.view_ids.len() && style < self.style_ids.len());
        view * self.style_ids.len() + style
    }

    pub fn code(&self, view: usize, style: usize) -> Array1<F> {
        self.codes.row(self.index(view, style)).to_owned()
    }

    pub fn set_code(&mut self, view: usize, style: usize, value: &Array1<F>) {
        let idx = self.index(view, style);
        self.codes.row_mut(idx).assign(value);
    }

    pub fn latent_dim(&self) -> usize {
        self.codes.ncols()
    }

    pub fn param_slice_mut(&mut self) -> &mut [F] {
        self.codes.as_slice_mut().unwrap()
    }

    /// Mean distance between codes of the same style vs. different styles,
    /// for the clustering check.
    pub fn intra_inter_distances(&self) -> (f64, f64) {
        let n_views = self.view_ids.len();
        let n_styles = self.style_ids.len();
        let mut intra = (0.0, 0usize);
        let mut inter = (0.0, 0usize);
        for a in 0..n_views * n_styles {
            for b in a + 1..n_views * n_styles {
                let d: f64 = self
                    .codes
                    .row(a)
                    .iter()
                    .zip(self.codes.row(b).iter())
                    .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if a % n_styles == b % n_styles {
                    intra.0 += d;
                    intra.1 += 1;
                } else {
                    inter.0 += d;
                    inter.1 += 1;
                }
            }
        }
        (intra.0 / intra.1.max(1) as f64, inter.0 / inter.1.max(1) as f64)
    }
}

/// Draws one code per (view, style) pair from that style's Gaussian.
/// Deterministic given the seed; iteration order is view-major.
pub fn init_codes<F: Real>(
    distributions: &[StyleDistribution<F>],
    view_ids: &[String],
    style_ids: &[String],
    seed: u64,
) -> LatentCodeTable<F> {
    assert_eq!(distributions.len(), style_ids.len());
    let d = distributions[0].mu.len();
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, "code-init", 0));
    let mut codes = Array2::zeros((view_ids.len() * style_ids.len(), d));
    for view in 0..view_ids.len() {
        for (style, dist) in distributions.iter().enumerate() {
            let row = view * style_ids.len() + style;
            for k in 0..d {
                let eps: F = F::standard_normal(&mut rng);
                codes[(row, k)] = dist.mu[k] + dist.sigma[k] * eps;
            }
        }
    }
    LatentCodeTable {
        codes,
        view_ids: view_ids.to_vec(),
        style_ids: style_ids.to_vec(),
    }
}

/// The distribution loss as printed: `sum_d (l_d - mu_d)^2 / (2 pi sigma_d^2)`.
///
/// This is not the exact Gaussian negative log-likelihood (the `log sigma`
/// term is absent and the constant is `2 pi` instead of `2`);
/// [`distribution_loss_nll`] provides the exact form for ablation.
pub fn distribution_loss<F: Real>(code: &Array1<F>, dist: &StyleDistribution<F>) -> Result<F> {
    check_dist::<F>(code, dist)?;
    let two_pi = rf::<F>(2.0 * std::f64::consts::PI);
    let mut acc = F::zero();
    for k in 0..code.len() {
        let d = code[k] - dist.mu[k];
        acc = acc + d * d / (two_pi * dist.sigma[k] * dist.sigma[k]);
    }
    Ok(acc)
}

/// Gradient of [`distribution_loss`] w.r.t. the code.
pub fn distribution_loss_grad<F: Real>(
    code: &Array1<F>,
    dist: &StyleDistribution<F>,
) -> Result<Array1<F>> {
    check_dist::<F>(code, dist)?;
    let pi = rf::<F>(std::f64::consts::PI);
    Ok(Array1::from_shape_fn(code.len(), |k| {
        (code[k] - dist.mu[k]) / (pi * dist.sigma[k] * dist.sigma[k])
    }))
}

/// Exact Gaussian negative log-likelihood (ablation alternative):
/// `sum_d 0.5 ((l-mu)/sigma)^2 + log sigma + 0.5 log(2 pi)`.
pub fn distribution_loss_nll<F: Real>(
    code: &Array1<F>,
    dist: &StyleDistribution<F>,
) -> Result<F> {
    check_dist::<F>(code, dist)?;
    let half = rf::<F>(0.5);
    let half_log_two_pi = rf::<F>(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut acc = F::zero();
    for k in 0..code.len() {
        let z = (code[k] - dist.mu[k]) / dist.sigma[k];
        acc = acc + half * z * z + dist.sigma[k].ln() + half_log_two_pi;
    }
    Ok(acc)
}

/// Gradient of [`distribution_loss_nll`] w.r.t. the code.
pub fn distribution_loss_nll_grad<F: Real>(
    code: &Array1<F>,
    dist: &StyleDistribution<F>,
) -> Result<Array1<F>> {
    check_dist::<F>(code, dist)?;
    Ok(Array1::from_shape_fn(code.len(), |k| {
        (code[k] - dist.mu[k]) / (dist.sigma[k] * dist.sigma[k])
    }))
}

fn check_dist<F: Real>(code: &Array1<F>, dist: &StyleDistribution<F>) -> Result<()> {
    if code.len() != dist.mu.len() || code.len() != dist.sigma.len() {
        return Err(Error::ShapeMismatch(format!(
            "code has {} dims, distribution has {}/{}",
            code.len(),
            dist.mu.len(),
            dist.sigma.len()
        )));
    }
    if dist.sigma.iter().any(|s| *s <= F::zero()) {
        return Err(Error::InvalidArgument(
            "distribution sigma must be strictly positive".into(),
        ));
    }
    Ok(())
}

/// Inference-time conditioning: exactly the distribution mean, no sampling.
pub fn inference_code<F: Real>(dist: &StyleDistribution<F>) -> Array1<F> {
    dist.mu.clone()
}

impl VaeParams<f32> {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut ck = Checkpoint::new("vae", meta);
        push_dense(&mut ck, "enc_hidden", &self.enc_hidden);
        push_dense(&mut ck, "mu_head", &self.mu_head);
        push_dense(&mut ck, "log_sigma_head", &self.log_sigma_head);
        push_dense(&mut ck, "dec_hidden", &self.dec_hidden);
        push_dense(&mut ck, "dec_out", &self.dec_out);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("vae")?;
        Ok(VaeParams {
            enc_hidden: read_dense(ck, "enc_hidden")?,
            mu_head: read_dense(ck, "mu_head")?,
            log_sigma_head: read_dense(ck, "log_sigma_head")?,
            dec_hidden: read_dense(ck, "dec_hidden")?,
            dec_out: read_dense(ck, "dec_out")?,
        })
    }
}

impl LatentCodeTable<f32> {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut full = meta;
        full["view_ids"] = serde_json::json!(self.view_ids);
        full["style_ids"] = serde_json::json!(self.style_ids);
        let mut ck = Checkpoint::new("code_table", full);
        ck.push(
            "codes",
            vec![self.codes.nrows(), self.codes.ncols()],
            self.codes.iter().copied().collect(),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("code_table")?;
        let ids = |key: &str| -> Result<Vec<String>> {
            ck.meta
                .get(key)
                .and_then(|v| v.as_array())
                .map(|a| {
                    a.iter()
                        .filter_map(|v| v.as_str().map(|s| s.to_string()))
                        .collect()
                })
                .ok_or_else(|| Error::Checkpoint(format!("missing meta field `{key}`")))
        };
        let view_ids = ids("view_ids")?;
        let style_ids = ids("style_ids")?;
        let t = ck.tensor("codes")?;
        let codes = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if codes.nrows() != view_ids.len() * style_ids.len() {
            return Err(Error::Checkpoint(
                "code table size does not match id lists".into(),
            ));
        }
        Ok(LatentCodeTable {
            codes,
            view_ids,
            style_ids,
        })
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn distribution_loss_is_nonnegative_and_zero_only_at_mu(
            mu in proptest::collection::vec(-5.0f64..5.0, 1..8),
            sigma in proptest::collection::vec(0.05f64..3.0, 1..8),
            offset in proptest::collection::vec(-4.0f64..4.0, 1..8),
        ) {
            let d = mu.len().min(sigma.len()).min(offset.len());
            let dist = StyleDistribution {
                mu: Array1::from_vec(mu[..d].to_vec()),
                sigma: Array1::from_vec(sigma[..d].to_vec()),
            };
            let code = Array1::from_shape_fn(d, |k| dist.mu[k] + offset[k]);
            let loss = distribution_loss(&code, &dist).unwrap();
            prop_assert!(loss >= 0.0);
            let nonzero_offset = offset[..d].iter().any(|o| o.abs() > 1e-12);
            if nonzero_offset {
                prop_assert!(loss > 0.0);
            }
            // a short gradient step decreases the loss (convexity)
            let grad = distribution_loss_grad(&code, &dist).unwrap();
            let stepped = &code - &grad.mapv(|g| 1e-3 * g);
            let after = distribution_loss(&stepped, &dist).unwrap();
            prop_assert!(after <= loss + 1e-12);
        }
    }
}
