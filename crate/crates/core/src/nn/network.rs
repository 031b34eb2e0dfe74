use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{Activation, Dense, DenseCache, GruCell, GruStepCache};
use super::{check_finite, init_uniform, NnError};
use crate::math::softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense { width: usize, activation: Activation },
    Recurrent { hidden: usize },
    Softmax,
}

/// Layer stack. Layers before the (at most one) recurrent layer run on every
/// element of the input sequence; layers after it run on the final hidden
/// state. Without a recurrent layer the input sequence must have length 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Self {
        Self { input_dim, layers }
    }

    /// Dense stack with the given hidden widths and activation, then an
    /// identity output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], activation: Activation, output: usize) -> Self {
        let mut layers: Vec<LayerSpec> =
            hidden.iter().map(|&width| LayerSpec::Dense { width, activation }).collect();
        layers.push(LayerSpec::Dense { width: output, activation: Activation::Identity });
        Self { input_dim, layers }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 {
            return Err(NnError::InvalidSpec("input dimension is zero".into()));
        }
        let recurrent = self.layers.iter().filter(|l| matches!(l, LayerSpec::Recurrent { .. })).count();
        if recurrent > 1 {
            return Err(NnError::InvalidSpec("more than one recurrent layer".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { width: 0, .. } | LayerSpec::Recurrent { hidden: 0 } => {
                    return Err(NnError::InvalidSpec(format!("layer {i} has zero width")));
                }
                LayerSpec::Softmax if i + 1 != self.layers.len() => {
                    return Err(NnError::InvalidSpec("softmax must be the last layer".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().fold(self.input_dim, |d, l| match *l {
            LayerSpec::Dense { width, .. } => width,
            LayerSpec::Recurrent { hidden } => hidden,
            LayerSpec::Softmax => d,
        })
    }

    pub fn is_recurrent(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Recurrent { .. }))
    }

    /// Stable textual form, e.g. `in=3;dense(64,relu);gru(8);softmax`.
    pub fn canonical(&self) -> String {
        let mut s = format!("in={}", self.input_dim);
        for layer in &self.layers {
            let _ = match *layer {
                LayerSpec::Dense { width, activation } => {
                    let a = match activation {
                        Activation::Identity => "identity",
                        Activation::Relu => "relu",
                        Activation::Tanh => "tanh",
                    };
                    write!(s, ";dense({width},{a})")
                }
                LayerSpec::Recurrent { hidden } => write!(s, ";gru({hidden})"),
                LayerSpec::Softmax => write!(s, ";softmax"),
            };
        }
        s
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Built {
    Dense(Dense, Range<usize>),
    Gru(GruCell, Range<usize>),
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
enum StepCache {
    Dense(DenseCache),
    Softmax(Vec<f64>),
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    fingerprint: u64,
    /// Per input element, caches of the layers before the recurrent layer.
    pre: Vec<Vec<StepCache>>,
    gru: Vec<GruStepCache>,
    post: Vec<StepCache>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Recurrent hidden state after each input element (empty without a
    /// recurrent layer).
    pub fn hidden_states(&self) -> impl Iterator<Item = &[f64]> {
        self.gru.iter().map(|c| c.h.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// `dL/dx` for every input element.
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    built: Vec<Built>,
    recurrent_at: Option<usize>,
    param_count: usize,
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let mut built = Vec::with_capacity(spec.layers.len());
        let mut dim = spec.input_dim;
        let mut offset = 0;
        let mut recurrent_at = None;
        for (i, layer) in spec.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { width, activation } => {
                    let d = Dense::new(dim, width, activation);
                    let n = d.param_count();
                    built.push(Built::Dense(d, offset..offset + n));
                    offset += n;
                    dim = width;
                }
                LayerSpec::Recurrent { hidden } => {
                    let g = GruCell::new(dim, hidden);
                    let n = g.param_count();
                    built.push(Built::Gru(g, offset..offset + n));
                    offset += n;
                    dim = hidden;
                    recurrent_at = Some(i);
                }
                LayerSpec::Softmax => built.push(Built::Softmax),
            }
        }
        Ok(Self { spec, built, recurrent_at, param_count: offset })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count];
        for b in &self.built {
            match b {
                Built::Dense(d, r) => init_uniform(&mut p[r.clone()], d.input, rng),
                Built::Gru(g, r) => init_uniform(&mut p[r.clone()], g.hidden, rng),
                Built::Softmax => {}
            }
        }
        p
    }

    fn split_at_recurrent(&self) -> (&[Built], Option<&Built>, &[Built]) {
        match self.recurrent_at {
            Some(i) => (&self.built[..i], Some(&self.built[i]), &self.built[i + 1..]),
            None => (&self.built[..], None, &[]),
        }
    }

    fn run_feedforward(layers: &[Built], params: &[f64], x: &[f64]) -> (Vec<StepCache>, Vec<f64>) {
        let mut caches = Vec::with_capacity(layers.len());
        let mut cur = x.to_vec();
        for b in layers {
            match b {
                Built::Dense(d, r) => {
                    let c = d.forward(&params[r.clone()], &cur);
                    cur = c.output.clone();
                    caches.push(StepCache::Dense(c));
                }
                Built::Softmax => {
                    cur = softmax(&cur);
                    caches.push(StepCache::Softmax(cur.clone()));
                }
                Built::Gru(..) => unreachable!("recurrent layer inside feed-forward block"),
            }
        }
        (caches, cur)
    }

    fn back_feedforward(layers: &[Built], params: &[f64], caches: &[StepCache], dy: Vec<f64>, grad: &mut [f64]) -> Vec<f64> {
        let mut d = dy;
        for (b, c) in layers.iter().zip(caches).rev() {
            d = match (b, c) {
                (Built::Dense(layer, r), StepCache::Dense(cache)) => {
                    layer.backward(&params[r.clone()], cache, &d, &mut grad[r.clone()])
                }
                (Built::Softmax, StepCache::Softmax(y)) => super::softmax_backward(y, &d),
                _ => unreachable!("cache does not match layer"),
            };
        }
        d
    }

    fn check_input(&self, params: &[f64], seq: &[Vec<f64>]) -> Result<(), NnError> {
        if params.len() != self.param_count {
            return Err(NnError::Shape { expected: self.param_count, actual: params.len() });
        }
        let expected_len = if self.recurrent_at.is_some() { seq.len().max(1) } else { 1 };
        if seq.len() != expected_len {
            return Err(NnError::Shape { expected: expected_len, actual: seq.len() });
        }
        for x in seq {
            if x.len() != self.spec.input_dim {
                return Err(NnError::Shape { expected: self.spec.input_dim, actual: x.len() });
            }
            check_finite(x, "input")?;
        }
        Ok(())
    }

    /// Forward pass over a sequence of input vectors.
    pub fn forward(&self, params: &[f64], seq: &[Vec<f64>]) -> Result<ForwardCache, NnError> {
        self.check_input(params, seq)?;
        let (before, gru, after) = self.split_at_recurrent();
        let mut pre = Vec::with_capacity(seq.len());
        let mut gru_caches = Vec::new();
        let mut cur = Vec::new();
        match gru {
            Some(Built::Gru(cell, r)) => {
                let gp = &params[r.clone()];
                let mut h = vec![0.0; cell.hidden];
                for x in seq {
                    let (c, y) = Self::run_feedforward(before, params, x);
                    pre.push(c);
                    let step = cell.step(gp, &y, &h);
                    h = step.h.clone();
                    gru_caches.push(step);
                }
                cur = h;
            }
            _ => {
                for x in seq {
                    let (c, y) = Self::run_feedforward(before, params, x);
                    pre.push(c);
                    cur = y;
                }
            }
        }
        let (post, output) = Self::run_feedforward(after, params, &cur);
        check_finite(&output, "network output")?;
        Ok(ForwardCache { fingerprint: fingerprint(params), pre, gru: gru_caches, post, output })
    }

    /// Forward pass on a single input vector.
    pub fn forward_one(&self, params: &[f64], x: &[f64]) -> Result<ForwardCache, NnError> {
        self.forward(params, &[x.to_vec()])
    }

    /// Output only.
    pub fn predict(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_one(params, x)?.output)
    }

    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_output: &[f64]) -> Result<Gradients, NnError> {
        self.backward_with_hidden(params, cache, Some(d_output), &[])
    }

    /// Backward pass that can additionally inject `dL/dh_t` at the recurrent
    /// hidden state after element `t` (pairs `(t, grad)`), so one forward pass
    /// over a whole sequence can serve losses attached to every prefix.
    pub fn backward_with_hidden(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        d_output: Option<&[f64]>,
        hidden_grads: &[(usize, Vec<f64>)],
    ) -> Result<Gradients, NnError> {
        if params.len() != self.param_count {
            return Err(NnError::Shape { expected: self.param_count, actual: params.len() });
        }
        if fingerprint(params) != cache.fingerprint {
            return Err(NnError::StaleCache);
        }
        let out_dim = self.output_dim();
        let zero = vec![0.0; out_dim];
        let d_out = d_output.unwrap_or(&zero);
        if d_out.len() != out_dim {
            return Err(NnError::Shape { expected: out_dim, actual: d_out.len() });
        }
        check_finite(d_out, "output gradient")?;
        let mut grad = vec![0.0; self.param_count];
        let (before, gru, after) = self.split_at_recurrent();
        let d_last = Self::back_feedforward(after, params, &cache.post, d_out.to_vec(), &mut grad);

        let mut inputs = vec![Vec::new(); cache.pre.len()];
        match gru {
            Some(Built::Gru(cell, r)) => {
                let steps = cache.gru.len();
                let mut injected = vec![vec![0.0; cell.hidden]; steps];
                for (t, g) in hidden_grads {
                    if *t >= steps {
                        return Err(NnError::Shape { expected: steps, actual: *t + 1 });
                    }
                    if g.len() != cell.hidden {
                        return Err(NnError::Shape { expected: cell.hidden, actual: g.len() });
                    }
                    for (a, b) in injected[*t].iter_mut().zip(g) {
                        *a += b;
                    }
                }
                let mut dh = d_last;
                for t in (0..steps).rev() {
                    for (a, b) in dh.iter_mut().zip(&injected[t]) {
                        *a += b;
                    }
                    let gp = &params[r.clone()];
                    let (dx, dh_prev) = {
                        let g = &mut grad[r.clone()];
                        cell.backward_step(gp, &cache.gru[t], &dh, g)
                    };
                    inputs[t] = Self::back_feedforward(before, params, &cache.pre[t], dx, &mut grad);
                    dh = dh_prev;
                }
            }
            _ => {
                if !hidden_grads.is_empty() {
                    return Err(NnError::InvalidSpec("hidden-state gradients need a recurrent layer".into()));
                }
                inputs[0] = Self::back_feedforward(before, params, &cache.pre[0], d_last, &mut grad);
            }
        }
        check_finite(&grad, "parameter gradient")?;
        Ok(Gradients { params: grad, inputs })
    }
}

/// FNV-style hash over the bit patterns of all parameters, one word at a
/// time.
fn fingerprint(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in params {
        h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    }
    h ^ params.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn rejects_bad_specs() {
        let two_gru = NetworkSpec::new(2, vec![LayerSpec::Recurrent { hidden: 3 }, LayerSpec::Recurrent { hidden: 3 }]);
        assert!(Network::new(two_gru).is_err());
        let early_softmax = NetworkSpec::new(2, vec![LayerSpec::Softmax, LayerSpec::Recurrent { hidden: 3 }]);
        assert!(Network::new(early_softmax).is_err());
        assert!(Network::new(NetworkSpec::new(0, vec![])).is_err());
    }

    #[test]
    fn param_count_and_output_dim() {
        let spec = NetworkSpec::mlp(4, &[8], Activation::Relu, 2);
        let net = Network::new(spec).unwrap();
        assert_eq!(net.param_count(), 4 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(net.output_dim(), 2);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let net = Network::new(NetworkSpec::mlp(2, &[3], Activation::Tanh, 1)).unwrap();
        let mut p = net.init_params(&mut seed::rng(1));
        let cache = net.forward_one(&p, &[0.1, 0.2]).unwrap();
        p[0] += 1.0;
        assert_eq!(net.backward(&p, &cache, &[1.0]), Err(NnError::StaleCache));
    }

    #[test]
    fn feedforward_rejects_sequences() {
        let net = Network::new(NetworkSpec::mlp(2, &[], Activation::Tanh, 1)).unwrap();
        let p = net.init_params(&mut seed::rng(1));
        assert!(net.forward(&p, &[vec![0.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(net.forward(&p, &[vec![0.0]]).is_err());
        assert!(net.forward(&p, &[vec![f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn canonical_form() {
        let spec = NetworkSpec::new(
            3,
            vec![
                LayerSpec::Dense { width: 4, activation: Activation::Relu },
                LayerSpec::Recurrent { hidden: 5 },
                LayerSpec::Softmax,
            ],
        );
        assert_eq!(spec.canonical(), "in=3;dense(4,relu);gru(5);softmax");
        assert_eq!(spec.output_dim(), 5);
        assert_ne!(spec.digest(), NetworkSpec::mlp(3, &[4], Activation::Relu, 5).digest());
    }

    #[test]
    fn recurrent_state_depends_on_order() {
        let spec = NetworkSpec::new(2, vec![LayerSpec::Recurrent { hidden: 4 }]);
        let net = Network::new(spec).unwrap();
        let p = net.init_params(&mut seed::rng(3));
        let a = net.forward(&p, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = net.forward(&p, &[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_ne!(a.output(), b.output());
        assert_eq!(a.hidden_states().count(), 2);
    }
}
