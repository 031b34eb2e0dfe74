use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{sigmoid, tanh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => tanh(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `y = act(W x + b)`, `W` stored row-major `[output][input]`, then `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub pre: Vec<f64>,
    pub output: Vec<f64>,
}

impl Dense {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self { input, output, activation }
    }

    pub fn param_count(&self) -> usize {
        self.output * self.input + self.output
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> DenseCache {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(x.len(), self.input);
        let (w, b) = params.split_at(self.output * self.input);
        let pre: Vec<f64> = (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let output = pre.iter().map(|&p| self.activation.apply(p)).collect();
        DenseCache { input: x.to_vec(), pre, output }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, params: &[f64], cache: &DenseCache, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (w, _) = params.split_at(self.output * self.input);
        let (gw, gb) = grad.split_at_mut(self.output * self.input);
        let mut dx = vec![0.0; self.input];
        for o in 0..self.output {
            let d = dy[o] * self.activation.derivative(cache.pre[o], cache.output[o]);
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            let row = o * self.input;
            for i in 0..self.input {
                gw[row + i] += d * cache.input[i];
                dx[i] += d * w[row + i];
            }
        }
        dx
    }
}

/// Gated recurrent cell:
///
/// ```text
/// r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
///
/// Layout: `W_i` (3H x I), `W_h` (3H x H), `b_i` (3H), `b_h` (3H), gate
/// order r, z, n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub n: Vec<f64>,
    /// `W_hn h + b_hn`
    pub hn: Vec<f64>,
    pub h: Vec<f64>,
}

impl GruCell {
    pub fn new(input: usize, hidden: usize) -> Self {
        Self { input, hidden }
    }

    pub fn param_count(&self) -> usize {
        let g = 3 * self.hidden;
        g * self.input + g * self.hidden + 2 * g
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let g = 3 * self.hidden;
        let (wi, rest) = params.split_at(g * self.input);
        let (wh, rest) = rest.split_at(g * self.hidden);
        let (bi, bh) = rest.split_at(g);
        (wi, wh, bi, bh)
    }

    pub fn step(&self, params: &[f64], x: &[f64], h_prev: &[f64]) -> GruStepCache {
        debug_assert_eq!(params.len(), self.param_count());
        let (wi, wh, bi, bh) = self.split(params);
        let hsz = self.hidden;
        let affine = |w: &[f64], b: &[f64], v: &[f64], row: usize| -> f64 {
            let cols = v.len();
            b[row] + w[row * cols..(row + 1) * cols].iter().zip(v).map(|(a, c)| a * c).sum::<f64>()
        };
        let mut r = vec![0.0; hsz];
        let mut z = vec![0.0; hsz];
        let mut n = vec![0.0; hsz];
        let mut hn = vec![0.0; hsz];
        let mut h = vec![0.0; hsz];
        for j in 0..hsz {
            r[j] = sigmoid(affine(wi, bi, x, j) + affine(wh, bh, h_prev, j));
            z[j] = sigmoid(affine(wi, bi, x, hsz + j) + affine(wh, bh, h_prev, hsz + j));
            hn[j] = affine(wh, bh, h_prev, 2 * hsz + j);
            n[j] = tanh(affine(wi, bi, x, 2 * hsz + j) + r[j] * hn[j]);
            h[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
        }
        GruStepCache { x: x.to_vec(), h_prev: h_prev.to_vec(), r, z, n, hn, h }
    }

    /// Backward through one step. Accumulates into `grad`; returns
    /// `(dL/dx, dL/dh_prev)`.
    pub fn backward_step(
        &self,
        params: &[f64],
        cache: &GruStepCache,
        dh: &[f64],
        grad: &mut [f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let (wi, wh, _, _) = self.split(params);
        let hsz = self.hidden;
        let g = 3 * hsz;
        let (gwi, rest) = grad.split_at_mut(g * self.input);
        let (gwh, rest) = rest.split_at_mut(g * hsz);
        let (gbi, gbh) = rest.split_at_mut(g);

        // Pre-activation gradients for the input path (a_i) and hidden path (a_h).
        let mut a_i = vec![0.0; g];
        let mut a_h = vec![0.0; g];
        let mut dh_prev = vec![0.0; hsz];
        for j in 0..hsz {
            let (r, z, n) = (cache.r[j], cache.z[j], cache.n[j]);
            let dn = dh[j] * (1.0 - z);
            let dz = dh[j] * (cache.h_prev[j] - n);
            dh_prev[j] = dh[j] * z;
            let dn_pre = dn * (1.0 - n * n);
            let dr = dn_pre * cache.hn[j];
            let dr_pre = dr * r * (1.0 - r);
            let dz_pre = dz * z * (1.0 - z);
            a_i[j] = dr_pre;
            a_i[hsz + j] = dz_pre;
            a_i[2 * hsz + j] = dn_pre;
            a_h[j] = dr_pre;
            a_h[hsz + j] = dz_pre;
            a_h[2 * hsz + j] = dn_pre * r;
        }
        let mut dx = vec![0.0; self.input];
        for row in 0..g {
            let ai = a_i[row];
            let ah = a_h[row];
            gbi[row] += ai;
            gbh[row] += ah;
            if ai != 0.0 {
                let off = row * self.input;
                for c in 0..self.input {
                    gwi[off + c] += ai * cache.x[c];
                    dx[c] += ai * wi[off + c];
                }
            }
            if ah != 0.0 {
                let off = row * hsz;
                for c in 0..hsz {
                    gwh[off + c] += ah * cache.h_prev[c];
                    dh_prev[c] += ah * wh[off + c];
                }
            }
        }
        (dx, dh_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dense_passes_input_through() {
        let layer = Dense::new(3, 3, Activation::Identity);
        let mut p = vec![0.0; layer.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = [0.5, -2.0, 7.0];
        assert_eq!(layer.forward(&p, &x).output, x.to_vec());
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let layer = Dense::new(2, 2, Activation::Relu);
        let p = vec![1.0, 0.0, 0.0, 1.0, -5.0, -5.0];
        assert_eq!(layer.forward(&p, &[1.0, 2.0]).output, vec![0.0, 0.0]);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let layer = Dense::new(2, 3, Activation::Identity);
        let p = vec![0.3; layer.param_count()];
        let x = [2.0, -1.0];
        let cache = layer.forward(&p, &x);
        let dy = [1.0, 0.5, -2.0];
        let mut g = vec![0.0; layer.param_count()];
        layer.backward(&p, &cache, &dy, &mut g);
        for o in 0..3 {
            for i in 0..2 {
                assert_eq!(g[o * 2 + i], dy[o] * x[i]);
            }
            assert_eq!(g[6 + o], dy[o]);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let cell = GruCell::new(2, 3);
        let p: Vec<f64> = (0..cell.param_count()).map(|i| (i as f64 * 0.37).sin() * 0.5).collect();
        let c = cell.step(&p, &[0.2, -0.4], &[0.1, 0.0, -0.3]);
        let mut g = vec![0.0; cell.param_count()];
        cell.backward_step(&p, &c, &[0.0; 3], &mut g);
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
