//! Building blocks shared by the VAE and emergent-language models: the
//! convolutional encoder/decoder stacks and plain MLPs.

use rand_chacha::ChaCha8Rng;

use crate::nn::layers::{batch_to_channel_major, channel_to_batch_major, relu_backward_in_place, relu_in_place};
use crate::nn::{Conv2d, ConvTranspose2d, Linear, Module, Param, Real};

/// Base (width multiplier 1) channel counts of the four encoder convolutions.
pub const CONV_WIDTHS: [usize; 4] = [32, 64, 64, 64];
/// Base widths of the four hidden MLP layers.
pub const MLP_WIDTHS: [usize; 4] = [256, 512, 512, 256];

/// Spatial side of the encoder output for a given input resolution.
pub fn conv_out_side(resolution: usize) -> usize {
    resolution / 16
}

/// Length of the flattened encoder features.
pub fn conv_flat_dim(resolution: usize, width_multiplier: usize) -> usize {
    let s = conv_out_side(resolution);
    CONV_WIDTHS[3] * width_multiplier * s * s
}

#[derive(Debug, Clone)]
pub struct ConvEncoder<F> {
    pub layers: Vec<Conv2d<F>>,
    pub resolution: usize,
}

#[derive(Debug, Clone)]
pub struct ConvEncoderCache<F> {
    cols: Vec<Vec<F>>,
    outputs: Vec<Vec<F>>,
    batch: usize,
}

impl<F: Real> ConvEncoder<F> {
    pub fn new(name: &str, resolution: usize, width_multiplier: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut in_ch = 1;
        let layers = CONV_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let out = w * width_multiplier;
                let l = Conv2d::new(&format!("{name}.conv{i}"), in_ch, out, rng);
                in_ch = out;
                l
            })
            .collect();
        Self { layers, resolution }
    }

    pub fn out_dim(&self) -> usize {
        let s = conv_out_side(self.resolution);
        self.layers.last().map_or(0, |l| l.out_ch) * s * s
    }

    /// `images: [B, H, W]` in `[0, 1]` → flattened features `[B, C·h·w]`.
    pub fn forward(&self, images: &[F], b: usize) -> (Vec<F>, ConvEncoderCache<F>) {
        let mut side = self.resolution;
        let mut x = images.to_vec();
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (mut y, c) = layer.forward(&x, b, side, side);
            relu_in_place(&mut y);
            cols.push(c);
            outputs.push(y.clone());
            x = y;
            side /= 2;
        }
        let c_last = self.layers.last().map_or(1, |l| l.out_ch);
        let flat = channel_to_batch_major(&x, b, c_last, side * side);
        (flat, ConvEncoderCache { cols, outputs, batch: b })
    }

    pub fn backward(&mut self, cache: &ConvEncoderCache<F>, dflat: &[F]) {
        let b = cache.batch;
        let n = self.layers.len();
        let mut side = self.resolution >> n;
        let c_last = self.layers[n - 1].out_ch;
        let mut dy = batch_to_channel_major(dflat, b, c_last, side * side);
        for i in (0..n).rev() {
            relu_backward_in_place(&cache.outputs[i], &mut dy);
            let in_side = side * 2;
            let dx = self.layers[i].backward(&cache.cols[i], &dy, b, in_side, in_side, i > 0);
            if let Some(dx) = dx {
                dy = dx;
            }
            side = in_side;
        }
    }
}

impl<F: Real> Module<F> for ConvEncoder<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Mirror of [`ConvEncoder`] built from transposed convolutions. The last
/// layer emits one logit per pixel.
#[derive(Debug, Clone)]
pub struct ConvDecoder<F> {
    pub layers: Vec<ConvTranspose2d<F>>,
    pub resolution: usize,
}

#[derive(Debug, Clone)]
pub struct ConvDecoderCache<F> {
    inputs: Vec<Vec<F>>,
    outputs: Vec<Vec<F>>,
    batch: usize,
}

impl<F: Real> ConvDecoder<F> {
    pub fn new(name: &str, resolution: usize, width_multiplier: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut chans: Vec<usize> = CONV_WIDTHS.iter().rev().map(|w| w * width_multiplier).collect();
        chans.push(1);
        let layers = chans
            .windows(2)
            .enumerate()
            .map(|(i, w)| ConvTranspose2d::new(&format!("{name}.deconv{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, resolution }
    }

    pub fn in_dim(&self) -> usize {
        let s = conv_out_side(self.resolution);
        self.layers[0].in_ch * s * s
    }

    /// `flat: [B, C·h·w]` → logits `[B, H, W]`.
    pub fn forward(&self, flat: &[F], b: usize) -> (Vec<F>, ConvDecoderCache<F>) {
        let mut side = conv_out_side(self.resolution);
        let mut x = batch_to_channel_major(flat, b, self.layers[0].in_ch, side * side);
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&x, b, side, side);
            if i + 1 < n {
                relu_in_place(&mut y);
                outputs.push(y.clone());
            }
            inputs.push(x);
            x = y;
            side *= 2;
        }
        (x, ConvDecoderCache { inputs, outputs, batch: b })
    }

    /// Returns `dL/dflat` in `[B, C·h·w]` layout.
    pub fn backward(&mut self, cache: &ConvDecoderCache<F>, dlogits: &[F]) -> Vec<F> {
        let b = cache.batch;
        let n = self.layers.len();
        let mut side = self.resolution / 2;
        let mut dy = dlogits.to_vec();
        for i in (0..n).rev() {
            if i + 1 < n {
                relu_backward_in_place(&cache.outputs[i], &mut dy);
            }
            dy = self.layers[i].backward(&cache.inputs[i], &dy, b, side, side, true).expect("dx requested");
            side /= 2;
        }
        let s = conv_out_side(self.resolution);
        channel_to_batch_major(&dy, b, self.layers[0].in_ch, s * s)
    }
}

impl<F: Real> Module<F> for ConvDecoder<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Stack of linear layers with ReLU between them (and optionally after the
/// last one).
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
    pub relu_last: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    /// Input of each layer, followed by the final output.
    acts: Vec<Vec<F>>,
    batch: usize,
}

impl<F: Real> Mlp<F> {
    pub fn new(name: &str, dims: &[usize], relu_last: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.fc{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, relu_last }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, x: &[F], b: usize) -> (Vec<F>, MlpCache<F>) {
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts.last().expect("input"), b);
            if i + 1 < n || self.relu_last {
                relu_in_place(&mut y);
            }
            acts.push(y);
        }
        let out = acts.last().cloned().unwrap_or_default();
        (out, MlpCache { acts, batch: b })
    }

    pub fn backward(&mut self, cache: &MlpCache<F>, dout: &[F], need_dx: bool) -> Option<Vec<F>> {
        let n = self.layers.len();
        let b = cache.batch;
        let mut dy = dout.to_vec();
        for i in (0..n).rev() {
            if i + 1 < n || self.relu_last {
                relu_backward_in_place(&cache.acts[i + 1], &mut dy);
            }
            if i == 0 && !need_dx {
                self.layers[0].accumulate_grads(&cache.acts[0], &dy, b);
                return None;
            }
            dy = self.layers[i].backward(&cache.acts[i], &dy, b);
        }
        Some(dy)
    }
}

impl<F: Real> Module<F> for Mlp<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Bernoulli negative log-likelihood summed over pixels and averaged over
/// the batch. Returns the loss and `dL/dlogits`.
pub fn bernoulli_nll<F: Real>(logits: &[F], target: &[F], batch: usize) -> (F, Vec<F>) {
    use crate::nn::real::{log_sigmoid, sigmoid};
    let inv_b = F::one() / F::lit(batch as f64);
    let mut total = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    for ((g, &l), &x) in grad.iter_mut().zip(logits).zip(target) {
        // -[x log σ(l) + (1-x) log σ(-l)]
        total -= x * log_sigmoid(l) + (F::one() - x) * log_sigmoid(-l);
        *g = (sigmoid(l) - x) * inv_b;
    }
    (total * inv_b, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn encoder_and_decoder_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ConvEncoder::<f32>::new("e", 32, 1, &mut rng);
        let dec = ConvDecoder::<f32>::new("d", 32, 1, &mut rng);
        assert_eq!(enc.out_dim(), conv_flat_dim(32, 1));
        assert_eq!(dec.in_dim(), enc.out_dim());
        let x = vec![0.5f32; 3 * 32 * 32];
        let (f, _) = enc.forward(&x, 3);
        assert_eq!(f.len(), 3 * enc.out_dim());
        let (logits, _) = dec.forward(&f, 3);
        assert_eq!(logits.len(), 3 * 32 * 32);
        assert_eq!(conv_flat_dim(64, 2), 2048);
    }

    #[test]
    fn bernoulli_nll_known_values() {
        let (l, g) = bernoulli_nll(&[0.0f64], &[1.0], 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[0] + 0.5).abs() < 1e-15);
        // x = σ(ℓ): NLL equals the Bernoulli entropy of σ(ℓ).
        let lg = 0.7f64;
        let p = 1.0 / (1.0 + (-lg).exp());
        let (l, _) = bernoulli_nll(&[lg], &[p], 1);
        let h = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        assert!((l - h).abs() < 1e-14);
        let (l, _) = bernoulli_nll(&[-1000.0f64], &[0.0], 1);
        assert!(l.abs() < 1e-12);
    }
}
