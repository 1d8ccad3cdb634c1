use rand_chacha::ChaCha8Rng;

use super::param::{Module, Param};
use super::real::{gemm, sigmoid};
use super::Real;

/// Single LSTM cell with gates ordered (input, forget, cell, output).
///
/// Weight is `[4H, I+H]` applied to the concatenation `[x, h]`.
#[derive(Debug, Clone)]
pub struct LstmCell<F> {
    pub weight: Param<F>,
    pub bias: Param<F>,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Activations kept for the backward pass of one step.
#[derive(Debug, Clone)]
pub struct LstmStep<F> {
    z: Vec<F>,
    /// Post-nonlinearity gates `[B, 4H]`.
    gates: Vec<F>,
    c_prev: Vec<F>,
    tanh_c: Vec<F>,
}

impl<F: Real> LstmCell<F> {
    pub fn new(name: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[4 * hidden, input_dim + hidden], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[4 * hidden], bound, rng),
            input_dim,
            hidden,
        }
    }

    /// Returns `(h, c, cache)`.
    pub fn forward(&self, x: &[F], h: &[F], c: &[F], b: usize) -> (Vec<F>, Vec<F>, LstmStep<F>) {
        let (i_dim, hd) = (self.input_dim, self.hidden);
        let zw = i_dim + hd;
        let mut z = vec![F::zero(); b * zw];
        for bi in 0..b {
            z[bi * zw..bi * zw + i_dim].copy_from_slice(&x[bi * i_dim..(bi + 1) * i_dim]);
            z[bi * zw + i_dim..(bi + 1) * zw].copy_from_slice(&h[bi * hd..(bi + 1) * hd]);
        }
        let mut gates = vec![F::zero(); b * 4 * hd];
        for row in gates.chunks_exact_mut(4 * hd) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(false, true, b, 4 * hd, zw, F::one(), &z, &self.weight.value, F::one(), &mut gates);
        let mut h_new = vec![F::zero(); b * hd];
        let mut c_new = vec![F::zero(); b * hd];
        let mut tanh_c = vec![F::zero(); b * hd];
        for bi in 0..b {
            let g = &mut gates[bi * 4 * hd..(bi + 1) * 4 * hd];
            for j in 0..hd {
                let ig = sigmoid(g[j]);
                let fg = sigmoid(g[hd + j]);
                let cg = g[2 * hd + j].tanh();
                let og = sigmoid(g[3 * hd + j]);
                g[j] = ig;
                g[hd + j] = fg;
                g[2 * hd + j] = cg;
                g[3 * hd + j] = og;
                let cn = fg * c[bi * hd + j] + ig * cg;
                let tc = cn.tanh();
                c_new[bi * hd + j] = cn;
                tanh_c[bi * hd + j] = tc;
                h_new[bi * hd + j] = og * tc;
            }
        }
        let cache = LstmStep { z, gates, c_prev: c.to_vec(), tanh_c };
        (h_new, c_new, cache)
    }

    /// Given `dL/dh` and `dL/dc` at this step's outputs, accumulates
    /// parameter grads and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(&mut self, cache: &LstmStep<F>, dh: &[F], dc: &[F], b: usize) -> (Vec<F>, Vec<F>, Vec<F>) {
        let (i_dim, hd) = (self.input_dim, self.hidden);
        let zw = i_dim + hd;
        let mut dgates = vec![F::zero(); b * 4 * hd];
        let mut dc_prev = vec![F::zero(); b * hd];
        let one = F::one();
        for bi in 0..b {
            let g = &cache.gates[bi * 4 * hd..(bi + 1) * 4 * hd];
            let dg = &mut dgates[bi * 4 * hd..(bi + 1) * 4 * hd];
            for j in 0..hd {
                let k = bi * hd + j;
                let (ig, fg, cg, og) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
                let tc = cache.tanh_c[k];
                let dct = dc[k] + dh[k] * og * (one - tc * tc);
                dg[j] = dct * cg * ig * (one - ig);
                dg[hd + j] = dct * cache.c_prev[k] * fg * (one - fg);
                dg[2 * hd + j] = dct * ig * (one - cg * cg);
                dg[3 * hd + j] = dh[k] * tc * og * (one - og);
                dc_prev[k] = dct * fg;
            }
        }
        gemm(true, false, 4 * hd, zw, b, one, &dgates, &cache.z, one, &mut self.weight.grad);
        for row in dgates.chunks_exact(4 * hd) {
            for (gb, &d) in self.bias.grad.iter_mut().zip(row) {
                *gb += d;
            }
        }
        let mut dz = vec![F::zero(); b * zw];
        gemm(false, false, b, zw, 4 * hd, one, &dgates, &self.weight.value, F::zero(), &mut dz);
        let mut dx = vec![F::zero(); b * i_dim];
        let mut dh_prev = vec![F::zero(); b * hd];
        for bi in 0..b {
            dx[bi * i_dim..(bi + 1) * i_dim].copy_from_slice(&dz[bi * zw..bi * zw + i_dim]);
            dh_prev[bi * hd..(bi + 1) * hd].copy_from_slice(&dz[bi * zw + i_dim..(bi + 1) * zw]);
        }
        (dx, dh_prev, dc_prev)
    }
}

impl<F: Real> Module<F> for LstmCell<F> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<F>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<F>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
