//! Dense and convolutional layers with explicit backward passes.
//!
//! Convolutional activations use a channel-major batch layout `[C, B, H, W]`
//! so that each layer's gemm output feeds the next layer without reordering.
//! All convolutions use 4×4 kernels, stride 2 and padding 1, which halve
//! (conv) or double (transposed conv) the spatial size.

use rand_chacha::ChaCha8Rng;

use super::param::{Module, Param};
use super::real::gemm;
use super::Real;

pub const KERNEL: usize = 4;
const KK: usize = KERNEL * KERNEL;

/// Fully connected layer, `y = x Wᵀ + b`, weight stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<F: Real> Linear<F> {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[F], batch: usize) -> Vec<F> {
        let mut y = vec![F::zero(); batch * self.out_dim];
        for row in y.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(false, true, batch, self.out_dim, self.in_dim, F::one(), x, &self.weight.value, F::one(), &mut y);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &[F], dy: &[F], batch: usize) -> Vec<F> {
        self.accumulate_grads(x, dy, batch);
        let mut dx = vec![F::zero(); batch * self.in_dim];
        gemm(false, false, batch, self.in_dim, self.out_dim, F::one(), dy, &self.weight.value, F::zero(), &mut dx);
        dx
    }

    pub fn accumulate_grads(&mut self, x: &[F], dy: &[F], batch: usize) {
        gemm(true, false, self.out_dim, self.in_dim, batch, F::one(), dy, x, F::one(), &mut self.weight.grad);
        for row in dy.chunks_exact(self.out_dim) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
}

impl<F: Real> Module<F> for Linear<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub fn relu_in_place<F: Real>(x: &mut [F]) {
    for v in x.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Zeroes `dy` wherever the (post-activation) output was not positive.
pub fn relu_backward_in_place<F: Real>(out: &[F], dy: &mut [F]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= F::zero() {
            *d = F::zero();
        }
    }
}

/// Unfolds `x` laid out `[C, B, H, W]` into `[C·16, B·(H/2)·(W/2)]` patches.
pub fn im2col<F: Real>(x: &[F], c: usize, b: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let p = ho * wo;
    let ncol = b * p;
    let mut cols = vec![F::zero(); c * KK * ncol];
    for ch in 0..c {
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = ch * KK + ki * KERNEL + kj;
                let out = &mut cols[row * ncol..(row + 1) * ncol];
                for bi in 0..b {
                    let src = &x[(ch * b + bi) * h * w..(ch * b + bi + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (2 * oy + ki) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut out[bi * p + oy * wo..bi * p + (oy + 1) * wo];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (2 * ox + kj) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *o = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patches back, summing overlaps.
pub fn col2im<F: Real>(cols: &[F], c: usize, b: usize, h: usize, w: usize) -> Vec<F> {
    let (ho, wo) = (h / 2, w / 2);
    let p = ho * wo;
    let ncol = b * p;
    let mut x = vec![F::zero(); c * b * h * w];
    for ch in 0..c {
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = ch * KK + ki * KERNEL + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for bi in 0..b {
                    let dst = &mut x[(ch * b + bi) * h * w..(ch * b + bi + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (2 * oy + ki) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        let srow = &src[bi * p + oy * wo..bi * p + (oy + 1) * wo];
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (2 * ox + kj) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// 4×4 stride-2 convolution, weight `[out, in·16]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl<F: Real> Conv2d<F> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((in_ch * KK) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[out_ch, in_ch * KK], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out_ch], bound, rng),
            in_ch,
            out_ch,
        }
    }

    /// `x: [in, B, H, W]` → (`[out, B, H/2, W/2]`, cached patches).
    pub fn forward(&self, x: &[F], b: usize, h: usize, w: usize) -> (Vec<F>, Vec<F>) {
        let cols = im2col(x, self.in_ch, b, h, w);
        let ncol = b * (h / 2) * (w / 2);
        let mut y = vec![F::zero(); self.out_ch * ncol];
        for (o, row) in y.chunks_exact_mut(ncol).enumerate() {
            row.fill(self.bias.value[o]);
        }
        gemm(false, false, self.out_ch, ncol, self.in_ch * KK, F::one(), &self.weight.value, &cols, F::one(), &mut y);
        (y, cols)
    }

    pub fn backward(&mut self, cols: &[F], dy: &[F], b: usize, h: usize, w: usize, need_dx: bool) -> Option<Vec<F>> {
        let ncol = b * (h / 2) * (w / 2);
        let k = self.in_ch * KK;
        gemm(false, true, self.out_ch, k, ncol, F::one(), dy, cols, F::one(), &mut self.weight.grad);
        for (o, row) in dy.chunks_exact(ncol).enumerate() {
            let s: F = row.iter().copied().sum();
            self.bias.grad[o] += s;
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![F::zero(); k * ncol];
        gemm(true, false, k, ncol, self.out_ch, F::one(), &self.weight.value, dy, F::zero(), &mut dcols);
        Some(col2im(&dcols, self.in_ch, b, h, w))
    }
}

impl<F: Real> Module<F> for Conv2d<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// 4×4 stride-2 transposed convolution, weight `[in, out·16]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl<F: Real> ConvTranspose2d<F> {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((out_ch * KK) as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[in_ch, out_ch * KK], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[out_ch], bound, rng),
            in_ch,
            out_ch,
        }
    }

    /// `x: [in, B, H, W]` → `[out, B, 2H, 2W]`.
    pub fn forward(&self, x: &[F], b: usize, h: usize, w: usize) -> Vec<F> {
        let ncol = b * h * w;
        let k = self.out_ch * KK;
        let mut cols = vec![F::zero(); k * ncol];
        gemm(true, false, k, ncol, self.in_ch, F::one(), &self.weight.value, x, F::zero(), &mut cols);
        let mut y = col2im(&cols, self.out_ch, b, 2 * h, 2 * w);
        let plane = b * 4 * h * w;
        for (o, chunk) in y.chunks_exact_mut(plane).enumerate() {
            let bias = self.bias.value[o];
            chunk.iter_mut().for_each(|v| *v += bias);
        }
        y
    }

    pub fn backward(&mut self, x: &[F], dy: &[F], b: usize, h: usize, w: usize, need_dx: bool) -> Option<Vec<F>> {
        let ncol = b * h * w;
        let k = self.out_ch * KK;
        let plane = b * 4 * h * w;
        for (o, chunk) in dy.chunks_exact(plane).enumerate() {
            let s: F = chunk.iter().copied().sum();
            self.bias.grad[o] += s;
        }
        let dcols = im2col(dy, self.out_ch, b, 2 * h, 2 * w);
        gemm(false, true, self.in_ch, k, ncol, F::one(), x, &dcols, F::one(), &mut self.weight.grad);
        if !need_dx {
            return None;
        }
        let mut dx = vec![F::zero(); self.in_ch * ncol];
        gemm(false, false, self.in_ch, ncol, k, F::one(), &self.weight.value, &dcols, F::zero(), &mut dx);
        Some(dx)
    }
}

impl<F: Real> Module<F> for ConvTranspose2d<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// `[B, C·P]` (sample-major) → `[C, B, P]` (channel-major).
pub fn batch_to_channel_major<F: Real>(x: &[F], b: usize, c: usize, p: usize) -> Vec<F> {
    let mut y = vec![F::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            y[(ch * b + bi) * p..(ch * b + bi + 1) * p].copy_from_slice(&x[(bi * c + ch) * p..(bi * c + ch + 1) * p]);
        }
    }
    y
}

/// `[C, B, P]` → `[B, C·P]`.
pub fn channel_to_batch_major<F: Real>(x: &[F], b: usize, c: usize, p: usize) -> Vec<F> {
    let mut y = vec![F::zero(); x.len()];
    for bi in 0..b {
        for ch in 0..c {
            y[(bi * c + ch) * p..(bi * c + ch + 1) * p].copy_from_slice(&x[(ch * b + bi) * p..(ch * b + bi + 1) * p]);
        }
    }
    y
}
