//! β-VAE and β-TCVAE: convolutional Gaussian-latent autoencoders with a
//! Bernoulli decoder.
//!
//! Losses are in minimization form (negated ELBO) and reduce as per-batch
//! means of per-image sums.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{bernoulli_nll, ConvDecoder, ConvDecoderCache, ConvEncoder, ConvEncoderCache, Mlp, MlpCache, MLP_WIDTHS};
use crate::error::{Error, Result};
use crate::nn::real::log_sum_exp;
use crate::nn::{Module, Param, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaeVariant {
    BetaVae,
    BetaTcvae,
}

/// Constant subtracted from the minibatch log-sum-exp when estimating the
/// aggregate posterior density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcNormalization {
    /// `log M`: the batch is treated as a sample of the aggregate posterior,
    /// so reported MI/TC values are calibrated.
    #[default]
    Batch,
    /// `log(M·N)`: the reference minibatch-weighted-sampling constant. Same
    /// gradients, values offset by a constant.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub variant: VaeVariant,
    pub beta: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Training-set size, used by [`TcNormalization::Dataset`].
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default = "default_width")]
    pub width_multiplier: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub tc_normalization: TcNormalization,
    /// Optional symmetric clamp on the encoder's log-variance output.
    #[serde(default)]
    pub logvar_clamp: Option<f64>,
}

fn default_latent_dim() -> usize {
    10
}
fn one() -> f64 {
    1.0
}
fn default_dataset_size() -> usize {
    1
}
fn default_width() -> usize {
    2
}
fn default_resolution() -> usize {
    64
}

impl VaeConfig {
    pub fn beta_vae(beta: f64) -> Self {
        Self {
            variant: VaeVariant::BetaVae,
            beta,
            latent_dim: 10,
            alpha: 1.0,
            gamma: 1.0,
            dataset_size: 1,
            width_multiplier: 2,
            resolution: 64,
            tc_normalization: TcNormalization::Batch,
            logvar_clamp: None,
        }
    }

    pub fn beta_tcvae(beta: f64, dataset_size: usize) -> Self {
        Self { variant: VaeVariant::BetaTcvae, dataset_size, ..Self::beta_vae(beta) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || self.latent_dim == 0 || self.width_multiplier == 0 {
            return Err(Error::Config("VAE needs beta ≥ 0, latent_dim ≥ 1, width_multiplier ≥ 1".into()));
        }
        if self.resolution != 32 && self.resolution != 64 {
            return Err(Error::Config(format!("resolution must be 32 or 64, got {}", self.resolution)));
        }
        Ok(())
    }
}

/// Per-example diagonal Gaussian posteriors, `[B, D]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<F> {
    pub mu: Vec<F>,
    pub logvar: Vec<F>,
    pub batch: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLossTerms {
    pub reconstruction_nll: f64,
    pub kl: f64,
    pub mutual_info: f64,
    pub total_correlation: f64,
    pub dimwise_kl: f64,
    pub total: f64,
}

/// `z = mu + exp(logvar / 2) · noise`.
pub fn reparameterize<F: Real>(posterior: &GaussianPosterior<F>, noise: &[F]) -> Vec<F> {
    assert_eq!(noise.len(), posterior.mu.len(), "noise shape must match mu");
    let half = F::lit(0.5);
    posterior
        .mu
        .iter()
        .zip(&posterior.logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

/// Batch-mean KL to the standard normal, per latent dimension.
pub fn kl_standard_normal<F: Real>(posterior: &GaussianPosterior<F>) -> Vec<f64> {
    let mut kl = vec![0.0; posterior.dim];
    for (i, (&m, &lv)) in posterior.mu.iter().zip(&posterior.logvar).enumerate() {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        kl[i % posterior.dim] += 0.5 * (m * m + lv.exp() - lv - 1.0);
    }
    kl.iter_mut().for_each(|v| *v /= posterior.batch as f64);
    kl
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Minibatch estimates entering the TC decomposition, plus (optionally)
/// gradients of the weighted objective
/// `α·MI + β·TC + γ·DW` with respect to `z`, `mu` and `logvar`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TcEstimate {
    pub mutual_info: f64,
    pub total_correlation: f64,
    pub dimwise_kl: f64,
}

#[derive(Debug, Clone)]
pub struct TcGrads<F> {
    pub dz: Vec<F>,
    pub dmu: Vec<F>,
    pub dlogvar: Vec<F>,
}

/// Streaming estimator over a batch of `m` draws `z_i ~ q(z|x_i)`.
///
/// `log q(z_i) ≈ logsumexp_j log q(z_i|x_j) − log_norm` and likewise per
/// dimension for the marginals. Memory is `O(m·d)` so it scales to large
/// synthetic batches.
#[allow(clippy::too_many_arguments)]
pub fn tc_estimate<F: Real>(
    z: &[F],
    mu: &[F],
    logvar: &[F],
    m: usize,
    d: usize,
    log_norm: f64,
    weights: Option<(f64, f64, f64)>,
) -> Result<(TcEstimate, Option<TcGrads<F>>)> {
    if m < 2 {
        return Err(Error::EstimatorUndefined(format!("batch size {m} < 2")));
    }
    let zf: Vec<f64> = z.iter().map(|v| v.as_f64()).collect();
    let muf: Vec<f64> = mu.iter().map(|v| v.as_f64()).collect();
    let lvf: Vec<f64> = logvar.iter().map(|v| v.as_f64()).collect();
    let inv_var: Vec<f64> = lvf.iter().map(|lv| (-lv).exp()).collect();
    let mut grads = weights.map(|_| (vec![0.0; m * d], vec![0.0; m * d], vec![0.0; m * d]));
    let (mut mi, mut tc, mut dw) = (0.0, 0.0, 0.0);
    let mut ell = vec![0.0; m * d]; // ℓ[j, k] = log q(z_i^k | x_j)
    let mut joint = vec![0.0; m];
    let mut col = vec![0.0; m];
    let mut marg_lse = vec![0.0; d];
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..d {
                let diff = zf[i * d + k] - muf[j * d + k];
                let l = -0.5 * (diff * diff * inv_var[j * d + k] + lvf[j * d + k] + LN_2PI);
                ell[j * d + k] = l;
                s += l;
            }
            joint[j] = s;
        }
        let lse_joint = log_sum_exp(&joint);
        let log_qz = lse_joint - log_norm;
        let mut log_prod = 0.0;
        let mut log_p = 0.0;
        for k in 0..d {
            for j in 0..m {
                col[j] = ell[j * d + k];
            }
            marg_lse[k] = log_sum_exp(&col);
            log_prod += marg_lse[k] - log_norm;
            let zk = zf[i * d + k];
            log_p += -0.5 * (zk * zk + LN_2PI);
        }
        mi += joint[i] - log_qz;
        tc += log_qz - log_prod;
        dw += log_prod - log_p;

        if let (Some((alpha, beta, gamma)), Some((gz, gmu, glv))) = (weights, grads.as_mut()) {
            let inv_m = 1.0 / m as f64;
            for j in 0..m {
                let s_ij = (joint[j] - lse_joint).exp();
                for k in 0..d {
                    let r_ijk = (ell[j * d + k] - marg_lse[k]).exp();
                    let mut c = (beta - alpha) * s_ij + (gamma - beta) * r_ijk;
                    if i == j {
                        c += alpha;
                    }
                    c *= inv_m;
                    if c == 0.0 {
                        continue;
                    }
                    let diff = zf[i * d + k] - muf[j * d + k];
                    let q = diff * inv_var[j * d + k];
                    gz[i * d + k] -= c * q;
                    gmu[j * d + k] += c * q;
                    glv[j * d + k] += c * 0.5 * (q * diff - 1.0);
                }
            }
            for k in 0..d {
                gz[i * d + k] += gamma * zf[i * d + k] * inv_m;
            }
        }
    }
    let inv = 1.0 / m as f64;
    let est = TcEstimate { mutual_info: mi * inv, total_correlation: tc * inv, dimwise_kl: dw * inv };
    let grads = grads.map(|(gz, gmu, glv)| TcGrads {
        dz: gz.into_iter().map(F::lit).collect(),
        dmu: gmu.into_iter().map(F::lit).collect(),
        dlogvar: glv.into_iter().map(F::lit).collect(),
    });
    Ok((est, grads))
}

#[derive(Debug, Clone)]
pub struct VaeModel<F> {
    pub config: VaeConfig,
    pub enc_conv: ConvEncoder<F>,
    pub enc_mlp: Mlp<F>,
    pub dec_mlp: Mlp<F>,
    pub dec_conv: ConvDecoder<F>,
}

/// Everything the backward pass needs from one forward pass.
pub struct VaeForward<F> {
    enc_cache: ConvEncoderCache<F>,
    mlp_cache: MlpCache<F>,
    dec_mlp_cache: MlpCache<F>,
    dec_cache: ConvDecoderCache<F>,
    raw_logvar: Vec<F>,
    noise: Vec<F>,
    pub pre: Vec<F>,
    pub posterior: GaussianPosterior<F>,
    pub z: Vec<F>,
    pub post: Vec<F>,
    pub logits: Vec<F>,
}

impl<F: Real> VaeModel<F> {
    pub fn new(config: VaeConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (res, wm, ld) = (config.resolution, config.width_multiplier, config.latent_dim);
        let enc_conv = ConvEncoder::new("enc_conv", res, wm, rng);
        let flat = enc_conv.out_dim();
        let hidden: Vec<usize> = MLP_WIDTHS.iter().map(|w| w * wm).collect();
        let mut enc_dims = vec![flat];
        enc_dims.extend(&hidden);
        enc_dims.push(2 * ld);
        let mut dec_dims = vec![ld];
        dec_dims.extend(hidden.iter().rev());
        dec_dims.push(flat);
        Ok(Self {
            enc_mlp: Mlp::new("enc_mlp", &enc_dims, false, rng),
            dec_mlp: Mlp::new("dec_mlp", &dec_dims, true, rng),
            dec_conv: ConvDecoder::new("dec_conv", res, wm, rng),
            enc_conv,
            config,
        })
    }

    pub fn image_len(&self) -> usize {
        self.config.resolution * self.config.resolution
    }

    fn split_posterior(&self, out: &[F], b: usize) -> (GaussianPosterior<F>, Vec<F>) {
        let d = self.config.latent_dim;
        let mut mu = Vec::with_capacity(b * d);
        let mut raw = Vec::with_capacity(b * d);
        for row in out.chunks_exact(2 * d) {
            mu.extend_from_slice(&row[..d]);
            raw.extend_from_slice(&row[d..]);
        }
        let logvar = match self.config.logvar_clamp {
            Some(c) => {
                let c = F::lit(c);
                raw.iter().map(|&v| v.max(-c).min(c)).collect()
            }
            None => raw.clone(),
        };
        (GaussianPosterior { mu, logvar, batch: b, dim: d }, raw)
    }

    /// Encoder pass: flattened convolutional features and the posterior.
    pub fn encode(&self, x: &[F], b: usize) -> (Vec<F>, GaussianPosterior<F>) {
        check_input(x, b * self.image_len());
        let (pre, _) = self.enc_conv.forward(x, b);
        let (out, _) = self.enc_mlp.forward(&pre, b);
        (pre, self.split_posterior(&out, b).0)
    }

    /// Decoder pass: decoder-MLP features (fed to the deconvolutions) and
    /// per-pixel Bernoulli logits.
    pub fn decode(&self, z: &[F], b: usize) -> (Vec<F>, Vec<F>) {
        assert_eq!(z.len(), b * self.config.latent_dim, "z must have latent_dim columns");
        let (post, _) = self.dec_mlp.forward(z, b);
        let (logits, _) = self.dec_conv.forward(&post, b);
        (post, logits)
    }

    pub fn forward(&self, x: &[F], b: usize, noise: &[F]) -> VaeForward<F> {
        check_input(x, b * self.image_len());
        let (pre, enc_cache) = self.enc_conv.forward(x, b);
        let (out, mlp_cache) = self.enc_mlp.forward(&pre, b);
        let (posterior, raw_logvar) = self.split_posterior(&out, b);
        let z = reparameterize(&posterior, noise);
        let (post, dec_mlp_cache) = self.dec_mlp.forward(&z, b);
        let (logits, dec_cache) = self.dec_conv.forward(&post, b);
        VaeForward { enc_cache, mlp_cache, dec_mlp_cache, dec_cache, raw_logvar, noise: noise.to_vec(), pre, posterior, z, post, logits }
    }

    /// Loss terms of a forward pass; with `grads` also returns
    /// `(dL/dlogits, dL/dz, dL/dmu, dL/dlogvar)` excluding the decoder path
    /// contributions to `z`.
    #[allow(clippy::type_complexity)]
    fn loss_terms(&self, fwd: &VaeForward<F>, x: &[F], b: usize, grads: bool) -> Result<(VaeLossTerms, Option<[Vec<F>; 4]>)> {
        let cfg = &self.config;
        let (nll, dlogits) = bernoulli_nll(&fwd.logits, x, b);
        let kl_dims = kl_standard_normal(&fwd.posterior);
        let kl: f64 = kl_dims.iter().sum();
        let nll = nll.as_f64();
        let d = cfg.latent_dim;
        match cfg.variant {
            VaeVariant::BetaVae => {
                let terms = VaeLossTerms { reconstruction_nll: nll, kl, total: nll + cfg.beta * kl, ..Default::default() };
                if !grads {
                    return Ok((terms, None));
                }
                let scale = cfg.beta / b as f64;
                let n = fwd.posterior.mu.len();
                // At β = 0 the KL gradient is exactly zero, even where exp(logvar) overflows.
                let (dmu, dlv) = if scale == 0.0 {
                    (vec![F::zero(); n], vec![F::zero(); n])
                } else {
                    (
                        fwd.posterior.mu.iter().map(|&m| F::lit(scale * m.as_f64())).collect(),
                        fwd.posterior.logvar.iter().map(|&lv| F::lit(scale * 0.5 * (lv.as_f64().exp() - 1.0))).collect(),
                    )
                };
                Ok((terms, Some([dlogits, vec![F::zero(); b * d], dmu, dlv])))
            }
            VaeVariant::BetaTcvae => {
                let log_norm = match cfg.tc_normalization {
                    TcNormalization::Batch => (b as f64).ln(),
                    TcNormalization::Dataset => (b as f64 * cfg.dataset_size as f64).ln(),
                };
                let w = grads.then_some((cfg.alpha, cfg.beta, cfg.gamma));
                let (est, g) = tc_estimate(&fwd.z, &fwd.posterior.mu, &fwd.posterior.logvar, b, d, log_norm, w)?;
                let total = nll + cfg.alpha * est.mutual_info + cfg.beta * est.total_correlation + cfg.gamma * est.dimwise_kl;
                let terms = VaeLossTerms {
                    reconstruction_nll: nll,
                    kl,
                    mutual_info: est.mutual_info,
                    total_correlation: est.total_correlation,
                    dimwise_kl: est.dimwise_kl,
                    total,
                };
                Ok((terms, g.map(|g| [dlogits, g.dz, g.dmu, g.dlogvar])))
            }
        }
    }

    /// Loss without touching gradients.
    pub fn loss(&self, x: &[F], b: usize, noise: &[F]) -> Result<VaeLossTerms> {
        let fwd = self.forward(x, b, noise);
        Ok(self.loss_terms(&fwd, x, b, false)?.0)
    }

    /// Forward + backward; accumulates parameter gradients.
    pub fn forward_backward(&mut self, x: &[F], b: usize, noise: &[F]) -> Result<VaeLossTerms> {
        let fwd = self.forward(x, b, noise);
        let (terms, g) = self.loss_terms(&fwd, x, b, true)?;
        let [dlogits, mut dz, mut dmu, mut dlv] = g.expect("gradients requested");
        let dpost = self.dec_conv.backward(&fwd.dec_cache, &dlogits);
        let dz_dec = self.dec_mlp.backward(&fwd.dec_mlp_cache, &dpost, true).expect("dz");
        for (a, &g) in dz.iter_mut().zip(&dz_dec) {
            *a += g;
        }
        let half = F::lit(0.5);
        // Uses the sampled noise rather than (z − mu) / std, which is 0/0
        // once std underflows.
        for i in 0..dz.len() {
            let std = (half * fwd.posterior.logvar[i]).exp();
            dmu[i] += dz[i];
            dlv[i] += dz[i] * fwd.noise[i] * half * std;
        }
        if let Some(c) = self.config.logvar_clamp {
            let c = F::lit(c);
            for (g, &raw) in dlv.iter_mut().zip(&fwd.raw_logvar) {
                if raw < -c || raw > c {
                    *g = F::zero();
                }
            }
        }
        let d = self.config.latent_dim;
        let mut dout = Vec::with_capacity(b * 2 * d);
        for i in 0..b {
            dout.extend_from_slice(&dmu[i * d..(i + 1) * d]);
            dout.extend_from_slice(&dlv[i * d..(i + 1) * d]);
        }
        let dpre = self.enc_mlp.backward(&fwd.mlp_cache, &dout, true).expect("dpre");
        self.enc_conv.backward(&fwd.enc_cache, &dpre);
        Ok(terms)
    }
}

fn check_input<F: Real>(x: &[F], expected: usize) {
    assert_eq!(x.len(), expected, "input batch has wrong size");
    debug_assert!(
        x.iter().all(|&v| v >= F::zero() && v <= F::one()),
        "inputs must be normalized to [0, 1]"
    );
}

impl<F: Real> Module<F> for VaeModel<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        self.enc_conv.visit_params(f);
        self.enc_mlp.visit_params(f);
        self.dec_mlp.visit_params(f);
        self.dec_conv.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.enc_conv.visit_params_mut(f);
        self.enc_mlp.visit_params_mut(f);
        self.dec_mlp.visit_params_mut(f);
        self.dec_conv.visit_params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn small(variant: VaeVariant, beta: f64) -> VaeConfig {
        VaeConfig { variant, beta, latent_dim: 3, width_multiplier: 1, resolution: 32, dataset_size: 100, ..VaeConfig::beta_vae(beta) }
    }

    fn batch(b: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b * 32 * 32).map(|_| if rand::Rng::random::<f64>(&mut rng) < 0.2 { 1.0 } else { 0.0 }).collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn reparameterize_examples() {
        let p = GaussianPosterior { mu: vec![0.3, -1.0], logvar: vec![0.0, 0.0], batch: 1, dim: 2 };
        assert_eq!(reparameterize(&p, &[0.0, 0.0]), p.mu);
        assert_eq!(reparameterize(&p, &[1.0, 1.0]), vec![1.3, 0.0]);
        let n = 100_000;
        let p = GaussianPosterior { mu: vec![0.0; n], logvar: vec![0.0; n], batch: n, dim: 1 };
        let z = reparameterize(&p, &noise(n, 4));
        let mean = z.iter().sum::<f64>() / n as f64;
        let sd = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.01, "sd {sd}");
    }

    #[test]
    fn kl_examples() {
        let p = GaussianPosterior { mu: vec![0.0, 1.0], logvar: vec![0.0, 0.0], batch: 1, dim: 2 };
        assert_eq!(kl_standard_normal(&p), vec![0.0, 0.5]);
        // Monte-Carlo oracle: E_q[log q − log p] at mu = 0.3, logvar = −0.2.
        let (mu, lv) = (0.3f64, -0.2f64);
        let sd = (0.5 * lv).exp();
        let eps = noise(200_000, 8);
        let mc: f64 = eps
            .iter()
            .map(|e| {
                let z = mu + sd * e;
                let log_q = -0.5 * (e * e + lv + LN_2PI);
                let log_p = -0.5 * (z * z + LN_2PI);
                log_q - log_p
            })
            .sum::<f64>()
            / eps.len() as f64;
        let closed = kl_standard_normal(&GaussianPosterior { mu: vec![mu], logvar: vec![lv], batch: 1, dim: 1 })[0];
        assert!((mc - closed).abs() < 0.01, "mc {mc} closed {closed}");
    }

    #[test]
    fn beta_vae_loss_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = VaeModel::<f64>::new(small(VaeVariant::BetaVae, 0.0), &mut rng).unwrap();
        let x = batch(4, 2);
        let e = noise(12, 3);
        let t0 = model.loss(&x, 4, &e).unwrap();
        assert_eq!(t0.total, t0.reconstruction_nll);
        let mut m1 = model.clone();
        m1.config.beta = 1.0;
        let t1 = m1.loss(&x, 4, &e).unwrap();
        assert_eq!(t1.total, t1.reconstruction_nll + t1.kl);
        let mut m2 = model.clone();
        m2.config.beta = 2.0;
        let t2 = m2.loss(&x, 4, &e).unwrap();
        assert!(((t2.total - t2.reconstruction_nll) - 2.0 * (t1.total - t1.reconstruction_nll)).abs() < 1e-12);
        assert!(t1.kl >= 0.0 && t1.total.is_finite());
    }

    #[test]
    fn encode_decode_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = VaeModel::<f32>::new(small(VaeVariant::BetaVae, 1.0), &mut rng).unwrap();
        let b = 5;
        let mut x = vec![0.0f32; b * 32 * 32];
        x[32 * 32..].iter_mut().for_each(|v| *v = 1.0);
        let (pre, post) = model.encode(&x, b);
        assert_eq!(pre.len() / b, model.enc_conv.out_dim());
        assert_eq!(post.mu.len(), b * 3);
        assert_ne!(post.mu[..3], post.mu[3..6]);
        assert!(post.mu.iter().chain(&post.logvar).all(|v| v.is_finite()));
        let z = vec![0.25f32; b * 3];
        let (feat, logits) = model.decode(&z, b);
        assert_eq!(feat.len(), b * model.enc_conv.out_dim());
        assert_eq!(logits.len(), b * 32 * 32);
        assert_eq!(logits[..1024], logits[1024..2048]);
        assert!(logits.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn tc_estimator_rejects_single_sample() {
        assert!(matches!(tc_estimate::<f64>(&[0.0], &[0.0], &[0.0], 1, 1, 0.0, None), Err(Error::EstimatorUndefined(_))));
    }

    #[test]
    fn tc_near_zero_for_independent_unit_posteriors() {
        let m = 256;
        let z = noise(m * 2, 5);
        let zeros = vec![0.0; m * 2];
        let (est, _) = tc_estimate(&z, &zeros, &zeros, m, 2, (m as f64).ln(), None).unwrap();
        assert!(est.total_correlation.abs() < 0.05, "tc {}", est.total_correlation);
    }

    #[test]
    fn tc_gradients_match_finite_differences() {
        let (m, d) = (5, 3);
        let z = noise(m * d, 1);
        let mu: Vec<f64> = noise(m * d, 2).iter().map(|v| 0.5 * v).collect();
        let lv: Vec<f64> = noise(m * d, 3).iter().map(|v| 0.3 * v).collect();
        let w = (1.0, 4.0, 1.0);
        let obj = |z: &[f64], mu: &[f64], lv: &[f64]| {
            let (e, _) = tc_estimate(z, mu, lv, m, d, 0.7, None).unwrap();
            w.0 * e.mutual_info + w.1 * e.total_correlation + w.2 * e.dimwise_kl
        };
        let (_, g) = tc_estimate(&z, &mu, &lv, m, d, 0.7, Some(w)).unwrap();
        let g = g.unwrap();
        let h = 1e-6;
        for i in 0..m * d {
            let bump = |v: &[f64], s: f64| {
                let mut v = v.to_vec();
                v[i] += s;
                v
            };
            let fz = (obj(&bump(&z, h), &mu, &lv) - obj(&bump(&z, -h), &mu, &lv)) / (2.0 * h);
            let fm = (obj(&z, &bump(&mu, h), &lv) - obj(&z, &bump(&mu, -h), &lv)) / (2.0 * h);
            let fl = (obj(&z, &mu, &bump(&lv, h)) - obj(&z, &mu, &bump(&lv, -h))) / (2.0 * h);
            assert!((fz - g.dz[i]).abs() < 1e-6, "dz {i}: {fz} vs {}", g.dz[i]);
            assert!((fm - g.dmu[i]).abs() < 1e-6, "dmu {i}");
            assert!((fl - g.dlogvar[i]).abs() < 1e-6, "dlv {i}");
        }
    }

    /// Aggregate N(0, Σ) built from narrow posteriors around means drawn
    /// from N(0, Σ − s²I).
    fn correlated_oracle(m: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let s2 = 0.05f64;
        let a = 1.0 - s2;
        let c = rho;
        // Cholesky of [[a, c], [c, a]].
        let l11 = a.sqrt();
        let l21 = c / l11;
        let l22 = (a - l21 * l21).sqrt();
        let g = noise(m * 2, seed);
        let e = noise(m * 2, seed + 1);
        let mut mu = vec![0.0; m * 2];
        for i in 0..m {
            mu[2 * i] = l11 * g[2 * i];
            mu[2 * i + 1] = l21 * g[2 * i] + l22 * g[2 * i + 1];
        }
        let lv = vec![s2.ln(); m * 2];
        let z: Vec<f64> = (0..m * 2).map(|k| mu[k] + s2.sqrt() * e[k]).collect();
        (z, mu, lv)
    }

    #[test]
    fn tc_matches_analytic_gaussian_total_correlation() {
        let m = 10_000;
        let rho = 0.9f64;
        let (z, mu, lv) = correlated_oracle(m, rho, 21);
        let (est, _) = tc_estimate(&z, &mu, &lv, m, 2, (m as f64).ln(), None).unwrap();
        let analytic = -0.5 * (1.0 - rho * rho).ln();
        assert!((analytic - 0.830).abs() < 1e-3);
        assert!((est.total_correlation - analytic).abs() < 0.1, "tc {} vs {analytic}", est.total_correlation);
    }

    #[test]
    fn decomposition_sums_to_kl() {
        let m = 2_000;
        let (z, mu, lv) = correlated_oracle(m, 0.5, 33);
        let (est, _) = tc_estimate(&z, &mu, &lv, m, 2, (m as f64).ln(), None).unwrap();
        let kl: f64 = kl_standard_normal(&GaussianPosterior { mu, logvar: lv, batch: m, dim: 2 }).iter().sum();
        let sum = est.mutual_info + est.total_correlation + est.dimwise_kl;
        assert!((sum - kl).abs() < 0.1, "sum {sum} vs kl {kl}");
    }

    fn full_model_gradient_check(variant: VaeVariant) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut cfg = small(variant, 2.0);
        cfg.latent_dim = 2;
        let mut model = VaeModel::<f64>::new(cfg, &mut rng).unwrap();
        let b = 3;
        let x = batch(b, 4);
        let e = noise(b * 2, 5);
        model.zero_grad();
        model.forward_backward(&x, b, &e).unwrap();
        let mut grads = Vec::new();
        model.visit_params(&mut |p| grads.push((p.name.clone(), p.grad.clone())));
        let h = 1e-5;
        let mut pick = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 10 {
            let (name, g) = &grads[rand::Rng::random_range(&mut pick, 0..grads.len())];
            let idx = rand::Rng::random_range(&mut pick, 0..g.len());
            // Near-zero entries are dominated by ReLU kinks under finite differences.
            if g[idx].abs() < 1e-4 {
                continue;
            }
            checked += 1;
            let eval = |s: f64| {
                let mut m = model.clone();
                m.visit_params_mut(&mut |p| {
                    if &p.name == name {
                        p.value[idx] += s;
                    }
                });
                m.loss(&x, b, &e).unwrap().total
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - g[idx]).abs() / fd.abs().max(g[idx].abs()).max(1e-6);
            assert!(rel <= 1e-3, "{name}[{idx}]: fd {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn beta_vae_gradient_check() {
        full_model_gradient_check(VaeVariant::BetaVae);
    }

    #[test]
    fn beta_tcvae_gradient_check() {
        full_model_gradient_check(VaeVariant::BetaTcvae);
    }

    #[test]
    fn underflowing_std_keeps_gradients_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = VaeModel::<f32>::new(small(VaeVariant::BetaVae, 0.0), &mut rng).unwrap();
        // Push every logvar output to −300 so exp(logvar / 2) underflows in f32.
        model.visit_params_mut(&mut |p| {
            if p.name.starts_with("enc_mlp") && p.len() == 6 {
                p.value[3..].iter_mut().for_each(|v| *v = -300.0);
            }
        });
        let x: Vec<f32> = batch(2, 1).iter().map(|&v| v as f32).collect();
        let e: Vec<f32> = noise(6, 2).iter().map(|&v| v as f32).collect();
        model.zero_grad();
        let terms = model.forward_backward(&x, 2, &e).unwrap();
        assert!(terms.total.is_finite());
        model.visit_params(&mut |p| assert!(p.grad.iter().all(|g| g.is_finite()), "{}", p.name));
    }

    #[test]
    fn logvar_clamp_bounds_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cfg = small(VaeVariant::BetaVae, 1.0);
        cfg.logvar_clamp = Some(1e-3);
        let model = VaeModel::<f64>::new(cfg, &mut rng).unwrap();
        let (_, post) = model.encode(&batch(2, 1), 2);
        assert!(post.logvar.iter().all(|v| v.abs() <= 1e-3));
    }
}
