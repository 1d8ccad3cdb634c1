//! Emergent-language speaker/listener autoencoder.
//!
//! The speaker turns the conv features into the initial LSTM cell state and
//! emits `max_len` tokens autoregressively through a Gumbel-Softmax
//! straight-through channel. The listener reads the token embeddings with
//! its own LSTM and reconstructs from the hidden state at the message's
//! effective length.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::arch::{bernoulli_nll, ConvDecoder, ConvDecoderCache, ConvEncoder, ConvEncoderCache};
use crate::error::{Error, Result};
use crate::nn::layers::{relu_backward_in_place, relu_in_place};
use crate::nn::real::{argmax, gemm, softmax_in_place};
use crate::nn::{Linear, LstmCell, LstmStep, Module, Param, Real};
use crate::seed::rng_for;

/// Token id reserved for end-of-sequence.
pub const EOS: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElConfig {
    /// Vocabulary size including EOS.
    pub vocab_size: usize,
    pub max_len: usize,
    #[serde(default = "one")]
    pub temperature: f64,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "yes")]
    pub variable_length: bool,
    #[serde(default = "yes")]
    pub stochastic: bool,
    #[serde(default = "default_width")]
    pub width_multiplier: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_embedding() -> usize {
    256
}
fn default_hidden() -> usize {
    512
}
fn default_width() -> usize {
    2
}
fn default_resolution() -> usize {
    64
}

impl ElConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        Self {
            vocab_size,
            max_len,
            temperature: 1.0,
            embedding_dim: 256,
            hidden_dim: 512,
            variable_length: true,
            stochastic: true,
            width_multiplier: 2,
            resolution: 64,
        }
    }

    /// `max_len · log2(vocab_size)`.
    pub fn bandwidth_bits(&self) -> f64 {
        self.max_len as f64 * (self.vocab_size as f64).log2()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.max_len == 0 || self.embedding_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("EL needs vocab_size ≥ 2 and positive max_len/embedding/hidden".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.resolution != 32 && self.resolution != 64 {
            return Err(Error::Config(format!("resolution must be 32 or 64, got {}", self.resolution)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    /// All `max_len` sampled tokens; positions past the effective length are
    /// kept but ignored by the listener.
    pub tokens: Vec<usize>,
    pub effective_length: usize,
}

impl Message {
    pub fn from_tokens(tokens: Vec<usize>, variable_length: bool) -> Self {
        let effective_length = if variable_length { effective_length(&tokens, EOS, tokens.len()) } else { tokens.len() };
        Self { tokens, effective_length }
    }

    /// `[max_len, n_v]` one-hot matrix, rows past the effective length zeroed
    /// when `mask` is set.
    pub fn one_hots(&self, n_v: usize, mask: bool) -> Vec<f32> {
        let mut m = vec![0.0; self.tokens.len() * n_v];
        for (t, &tok) in self.tokens.iter().enumerate() {
            if mask && t >= self.effective_length {
                break;
            }
            m[t * n_v + tok] = 1.0;
        }
        m
    }
}

/// 1-based position of the first `eos_id`, or `max_len` when absent.
pub fn effective_length(tokens: &[usize], eos_id: usize, max_len: usize) -> usize {
    tokens
        .iter()
        .take(max_len)
        .position(|&t| t == eos_id)
        .map_or(max_len, |i| i + 1)
}

/// Gumbel-Softmax sample of one row of logits.
///
/// Returns the selected index (the forward one-hot) and the relaxed
/// probabilities carrying the straight-through gradient. Without `rng` the
/// choice is the greedy `argmax(logits)`.
pub fn gumbel_softmax_st<F: Real>(logits: &[F], tau: f64, rng: Option<&mut ChaCha8Rng>) -> (usize, Vec<F>) {
    let inv_tau = F::lit(1.0 / tau);
    let mut soft: Vec<F> = match rng {
        Some(rng) => logits
            .iter()
            .map(|&l| {
                let u: f64 = rng.sample(Open01);
                (l + F::lit(-(-u.ln()).ln())) * inv_tau
            })
            .collect(),
        None => logits.iter().map(|&l| l * inv_tau).collect(),
    };
    softmax_in_place(&mut soft);
    (argmax(&soft), soft)
}

/// Frozen one-hots and relaxed probabilities of a reference pass.
///
/// With a reference, each channel output becomes `hard + (soft − soft_ref)`:
/// exactly the reference one-hot when replaying the same pass, and differentiable with exactly the
/// straight-through gradient. Used for finite-difference checks.
#[derive(Debug, Clone)]
pub struct StReference<F> {
    pub hard: Vec<Vec<F>>,
    pub soft: Vec<Vec<F>>,
}

#[derive(Debug, Clone)]
pub struct ElModel<F> {
    pub config: ElConfig,
    pub enc_conv: ConvEncoder<F>,
    pub init_proj: Linear<F>,
    pub bos: Param<F>,
    pub speaker_emb: Param<F>,
    pub speaker: LstmCell<F>,
    pub head: Linear<F>,
    pub listener_emb: Param<F>,
    pub listener: LstmCell<F>,
    pub dec_proj: Linear<F>,
    pub dec_conv: ConvDecoder<F>,
}

pub struct ElForward<F> {
    enc_cache: ConvEncoderCache<F>,
    speaker_steps: Vec<LstmStep<F>>,
    speaker_h: Vec<Vec<F>>,
    soft: Vec<Vec<F>>,
    /// Channel outputs per step, `[B, n_V]`.
    st: Vec<Vec<F>>,
    listener_steps: Vec<LstmStep<F>>,
    dec_cache: ConvDecoderCache<F>,
    proj_out: Vec<F>,
    pub pre: Vec<F>,
    pub messages: Vec<Message>,
    /// Listener hidden state at each message's effective length, `[B, H]`.
    pub post: Vec<F>,
    pub logits: Vec<F>,
}

impl<F: Real> ElForward<F> {
    /// The reference needed to replay this pass's channel decisions.
    pub fn st_reference(&self) -> StReference<F> {
        StReference { hard: self.st.clone(), soft: self.soft.clone() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ElLossTerms {
    pub reconstruction_nll: f64,
    pub mean_length: f64,
}

/// Embedding lookup expressed as a product with the channel output so the
/// gradient reaches the table: `[B, V] × [V, E]`.
fn embed<F: Real>(st: &[F], table: &Param<F>, b: usize, v: usize, e: usize) -> Vec<F> {
    let mut out = vec![F::zero(); b * e];
    gemm(false, false, b, e, v, F::one(), st, &table.value, F::zero(), &mut out);
    out
}

/// Backward of [`embed`]: accumulates the table gradient, returns `dst`.
fn embed_backward<F: Real>(st: &[F], dout: &[F], table: &mut Param<F>, b: usize, v: usize, e: usize) -> Vec<F> {
    gemm(true, false, v, e, b, F::one(), st, dout, F::one(), &mut table.grad);
    let mut dst = vec![F::zero(); b * v];
    gemm(false, true, b, v, e, F::one(), dout, &table.value, F::zero(), &mut dst);
    dst
}

impl<F: Real> ElModel<F> {
    pub fn new(config: ElConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (res, wm) = (config.resolution, config.width_multiplier);
        let (v, e, h) = (config.vocab_size, config.embedding_dim, config.hidden_dim);
        let enc_conv = ConvEncoder::new("enc_conv", res, wm, rng);
        let flat = enc_conv.out_dim();
        // Unit-variance embeddings.
        let emb_bound = 3f64.sqrt();
        Ok(Self {
            init_proj: Linear::new("init_proj", flat, h, rng),
            bos: Param::uniform("bos", &[e], emb_bound, rng),
            speaker_emb: Param::uniform("speaker_emb", &[v, e], emb_bound, rng),
            speaker: LstmCell::new("speaker", e, h, rng),
            head: Linear::new("head", h, v, rng),
            listener_emb: Param::uniform("listener_emb", &[v, e], emb_bound, rng),
            listener: LstmCell::new("listener", e, h, rng),
            dec_proj: Linear::new("dec_proj", h, flat, rng),
            dec_conv: ConvDecoder::new("dec_conv", res, wm, rng),
            enc_conv,
            config,
        })
    }

    pub fn image_len(&self) -> usize {
        self.config.resolution * self.config.resolution
    }

    /// Full pass. `seed` drives the Gumbel noise; `greedy` forces argmax
    /// decoding regardless of the config (used for extraction).
    pub fn forward(&self, x: &[F], b: usize, seed: u64, greedy: bool, reference: Option<&StReference<F>>) -> ElForward<F> {
        assert_eq!(x.len(), b * self.image_len(), "input batch has wrong size");
        let cfg = &self.config;
        let (v, e, hd, n) = (cfg.vocab_size, cfg.embedding_dim, cfg.hidden_dim, cfg.max_len);
        let (pre, enc_cache) = self.enc_conv.forward(x, b);
        let mut c = self.init_proj.forward(&pre, b);
        let mut h = vec![F::zero(); b * hd];
        let mut inp: Vec<F> = (0..b).flat_map(|_| self.bos.value.iter().copied()).collect();
        let mut rng = (cfg.stochastic && !greedy).then(|| rng_for(seed, "gumbel"));

        let mut speaker_steps = Vec::with_capacity(n);
        let mut speaker_h = Vec::with_capacity(n);
        let mut softs = Vec::with_capacity(n);
        let mut sts = Vec::with_capacity(n);
        let mut tokens = vec![Vec::with_capacity(n); b];
        for t in 0..n {
            let (h_new, c_new, cache) = self.speaker.forward(&inp, &h, &c, b);
            let logits = self.head.forward(&h_new, b);
            let mut soft = vec![F::zero(); b * v];
            let mut st = vec![F::zero(); b * v];
            for bi in 0..b {
                let (idx, s) = gumbel_softmax_st(&logits[bi * v..(bi + 1) * v], cfg.temperature, rng.as_mut());
                soft[bi * v..(bi + 1) * v].copy_from_slice(&s);
                match reference {
                    Some(r) => {
                        let row = bi * v..(bi + 1) * v;
                        for j in row.clone() {
                            st[j] = r.hard[t][j] + (soft[j] - r.soft[t][j]);
                        }
                        tokens[bi].push(argmax(&r.hard[t][row]));
                    }
                    None => {
                        st[bi * v + idx] = F::one();
                        tokens[bi].push(idx);
                    }
                }
            }
            inp = embed(&st, &self.speaker_emb, b, v, e);
            speaker_steps.push(cache);
            speaker_h.push(h_new.clone());
            softs.push(soft);
            sts.push(st);
            h = h_new;
            c = c_new;
        }
        let messages: Vec<Message> = tokens.into_iter().map(|t| Message::from_tokens(t, cfg.variable_length)).collect();

        // Listener: run up to the longest effective length in the batch.
        let max_t = messages.iter().map(|m| m.effective_length).max().unwrap_or(0);
        let mut h = vec![F::zero(); b * hd];
        let mut c = vec![F::zero(); b * hd];
        let mut post = vec![F::zero(); b * hd];
        let mut listener_steps = Vec::with_capacity(max_t);
        for (t, st) in sts.iter().enumerate().take(max_t) {
            let xin = embed(st, &self.listener_emb, b, v, e);
            let (h_new, c_new, cache) = self.listener.forward(&xin, &h, &c, b);
            for (bi, m) in messages.iter().enumerate() {
                if m.effective_length == t + 1 {
                    post[bi * hd..(bi + 1) * hd].copy_from_slice(&h_new[bi * hd..(bi + 1) * hd]);
                }
            }
            listener_steps.push(cache);
            h = h_new;
            c = c_new;
        }
        let mut proj_out = self.dec_proj.forward(&post, b);
        relu_in_place(&mut proj_out);
        let (logits, dec_cache) = self.dec_conv.forward(&proj_out, b);
        ElForward {
            enc_cache,
            speaker_steps,
            speaker_h,
            soft: softs,
            st: sts,
            listener_steps,
            dec_cache,
            proj_out,
            pre,
            messages,
            post,
            logits,
        }
    }

    /// Messages only.
    pub fn speak(&self, x: &[F], b: usize, seed: u64) -> Vec<Message> {
        self.forward(x, b, seed, false, None).messages
    }

    /// Listener pass on given messages: `(post, logits)`.
    pub fn listen(&self, messages: &[Message]) -> (Vec<F>, Vec<F>) {
        let cfg = &self.config;
        let (v, e, hd) = (cfg.vocab_size, cfg.embedding_dim, cfg.hidden_dim);
        let b = messages.len();
        let max_t = messages.iter().map(|m| m.effective_length).max().unwrap_or(0);
        let mut h = vec![F::zero(); b * hd];
        let mut c = vec![F::zero(); b * hd];
        let mut post = vec![F::zero(); b * hd];
        for t in 0..max_t {
            let mut st = vec![F::zero(); b * v];
            for (bi, m) in messages.iter().enumerate() {
                st[bi * v + m.tokens[t]] = F::one();
            }
            let xin = embed(&st, &self.listener_emb, b, v, e);
            let (h_new, c_new, _) = self.listener.forward(&xin, &h, &c, b);
            for (bi, m) in messages.iter().enumerate() {
                if m.effective_length == t + 1 {
                    post[bi * hd..(bi + 1) * hd].copy_from_slice(&h_new[bi * hd..(bi + 1) * hd]);
                }
            }
            h = h_new;
            c = c_new;
        }
        let mut proj = self.dec_proj.forward(&post, b);
        relu_in_place(&mut proj);
        let (logits, _) = self.dec_conv.forward(&proj, b);
        (post, logits)
    }

    fn terms(fwd: &ElForward<F>, nll: F) -> ElLossTerms {
        let mean_length =
            fwd.messages.iter().map(|m| m.effective_length as f64).sum::<f64>() / fwd.messages.len().max(1) as f64;
        ElLossTerms { reconstruction_nll: nll.as_f64(), mean_length }
    }

    pub fn loss(&self, x: &[F], b: usize, seed: u64) -> ElLossTerms {
        let fwd = self.forward(x, b, seed, false, None);
        let (nll, _) = bernoulli_nll(&fwd.logits, x, b);
        Self::terms(&fwd, nll)
    }

    /// Forward + backward with straight-through gradients; accumulates
    /// parameter gradients.
    pub fn forward_backward(&mut self, x: &[F], b: usize, seed: u64, reference: Option<&StReference<F>>) -> ElLossTerms {
        let fwd = self.forward(x, b, seed, false, reference);
        let (nll, dlogits) = bernoulli_nll(&fwd.logits, x, b);
        self.backward(&fwd, &dlogits, b);
        Self::terms(&fwd, nll)
    }

    fn backward(&mut self, fwd: &ElForward<F>, dlogits: &[F], b: usize) {
        let cfg = self.config.clone();
        let (v, e, hd, n) = (cfg.vocab_size, cfg.embedding_dim, cfg.hidden_dim, cfg.max_len);
        let mut dproj = self.dec_conv.backward(&fwd.dec_cache, dlogits);
        relu_backward_in_place(&fwd.proj_out, &mut dproj);
        let dpost = self.dec_proj.backward(&fwd.post, &dproj, b);

        // Listener BPTT.
        let mut dst_listener = vec![vec![F::zero(); b * v]; n];
        let mut dh = vec![F::zero(); b * hd];
        let mut dc = vec![F::zero(); b * hd];
        for t in (0..fwd.listener_steps.len()).rev() {
            for (bi, m) in fwd.messages.iter().enumerate() {
                if m.effective_length == t + 1 {
                    for j in bi * hd..(bi + 1) * hd {
                        dh[j] += dpost[j];
                    }
                }
            }
            let (dx, dh_prev, dc_prev) = self.listener.backward(&fwd.listener_steps[t], &dh, &dc, b);
            dst_listener[t] = embed_backward(&fwd.st[t], &dx, &mut self.listener_emb, b, v, e);
            dh = dh_prev;
            dc = dc_prev;
        }

        // Speaker BPTT through the straight-through channel.
        let inv_tau = F::lit(1.0 / cfg.temperature);
        let mut dh = vec![F::zero(); b * hd];
        let mut dc = vec![F::zero(); b * hd];
        let mut dst_next = vec![F::zero(); b * v];
        for t in (0..n).rev() {
            let soft = &fwd.soft[t];
            let mut dlogit = vec![F::zero(); b * v];
            for bi in 0..b {
                let row = bi * v..(bi + 1) * v;
                let dsoft: Vec<F> = row.clone().map(|j| dst_listener[t][j] + dst_next[j]).collect();
                let dot: F = row.clone().zip(&dsoft).map(|(j, &d)| soft[j] * d).sum();
                for (k, j) in row.enumerate() {
                    dlogit[j] = soft[j] * (dsoft[k] - dot) * inv_tau;
                }
            }
            let dh_head = self.head.backward(&fwd.speaker_h[t], &dlogit, b);
            for (a, g) in dh.iter_mut().zip(dh_head) {
                *a += g;
            }
            let (dx, dh_prev, dc_prev) = self.speaker.backward(&fwd.speaker_steps[t], &dh, &dc, b);
            if t == 0 {
                for row in dx.chunks_exact(e) {
                    for (g, &d) in self.bos.grad.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            } else {
                dst_next = embed_backward(&fwd.st[t - 1], &dx, &mut self.speaker_emb, b, v, e);
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        let dpre = self.init_proj.backward(&fwd.pre, &dc, b);
        self.enc_conv.backward(&fwd.enc_cache, &dpre);
    }
}

impl<F: Real> Module<F> for ElModel<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        self.enc_conv.visit_params(f);
        self.init_proj.visit_params(f);
        f(&self.bos);
        f(&self.speaker_emb);
        self.speaker.visit_params(f);
        self.head.visit_params(f);
        f(&self.listener_emb);
        self.listener.visit_params(f);
        self.dec_proj.visit_params(f);
        self.dec_conv.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.enc_conv.visit_params_mut(f);
        self.init_proj.visit_params_mut(f);
        f(&mut self.bos);
        f(&mut self.speaker_emb);
        self.speaker.visit_params_mut(f);
        self.head.visit_params_mut(f);
        f(&mut self.listener_emb);
        self.listener.visit_params_mut(f);
        self.dec_proj.visit_params_mut(f);
        self.dec_conv.visit_params_mut(f);
    }
}
