//! Minimal dense-network machinery: f64 multilayer perceptrons with ReLU
//! hidden layers, three output heads, reverse-mode gradients, and the two
//! optimizer schemes used by the trainers.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Sigmoid outputs are kept this far away from {0, 1} so log terms stay finite.
pub const SIGMOID_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input dim {got} does not match layer {layer} input dim {want}")]
    ShapeMismatch { layer: usize, want: usize, got: usize },
    #[error("non-finite gradient component in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("gradient shape does not match parameters at layer {layer}")]
    GradShape { layer: usize },
}

/// Output head applied after the last affine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Linear,
    Sigmoid,
    /// Interprets the output as [mean.., log_std..]; log_std is clamped to
    /// [LOG_STD_MIN, LOG_STD_MAX]. Output dim must be even.
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[in_dim × out_dim]`: w[i * out_dim + o].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub head: Head,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub layers: Vec<LayerGrads>,
}

impl Grads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Grads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for lg in &mut self.layers {
            for v in lg.w.iter_mut().chain(lg.b.iter_mut()) {
                *v *= s;
            }
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Forward activations retained for the backward pass.
pub struct ForwardCache {
    n: usize,
    input: Vec<f64>,
    /// Pre-activation outputs per layer, each `n × out_dim`.
    pre: Vec<Vec<f64>>,
    /// Post-nonlinearity outputs per layer (last entry is post-head).
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("cache has at least one layer")
    }

    /// Final-layer pre-head values (the logits, for sigmoid-headed nets).
    pub fn logits(&self) -> &[f64] {
        self.pre.last().expect("cache has at least one layer")
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    /// Fan-in-scaled uniform init, biases zero.
    pub fn new<R: Rng>(dims: &[usize], head: Head, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        if head == Head::Gaussian {
            assert!(dims.last().unwrap() % 2 == 0, "gaussian head needs even output dim");
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (in_dim, out_dim) = (win[0], win[1]);
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push(Layer {
                in_dim,
                out_dim,
                w,
                b: vec![0.0; out_dim],
            });
        }
        Mlp { layers, head }
    }

    /// Fan-in-scaled uniform draw over the biases, which `new` leaves at
    /// zero. Random embedding nets need it so outputs vary even at the
    /// origin of a whitened input space.
    pub fn randomize_biases<R: Rng>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            let bound = 1.0 / (l.in_dim as f64).sqrt();
            for b in &mut l.b {
                *b = rng.gen_range(-bound..bound);
            }
        }
    }

    /// Shrinks the final affine layer; used for policy heads so initial
    /// actions start near zero.
    pub fn scale_final_layer(&mut self, s: f64) {
        let last = self.layers.last_mut().expect("at least one layer");
        for w in &mut last.w {
            *w *= s;
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for l in &self.layers {
            if i < l.w.len() {
                return l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("param index {idx} out of range");
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let mut i = idx;
        for l in &mut self.layers {
            if i < l.w.len() {
                l.w[i] = v;
                return;
            }
            i -= l.w.len();
            if i < l.b.len() {
                l.b[i] = v;
                return;
            }
            i -= l.b.len();
        }
        panic!("param index {idx} out of range");
    }

    pub fn grad_param(grads: &Grads, idx: usize) -> f64 {
        let mut i = idx;
        for l in &grads.layers {
            if i < l.w.len() {
                return l.w[i];
            }
            i -= l.w.len();
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("param index {idx} out of range");
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_batch(x, 1)?.output().to_vec())
    }

    /// Runs `n` row-major samples through the net, retaining activations.
    pub fn forward_batch(&self, xs: &[f64], n: usize) -> Result<ForwardCache, NnError> {
        if xs.len() != n * self.input_dim() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                want: self.input_dim(),
                got: if n == 0 { 0 } else { xs.len() / n },
            });
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut cur: &[f64] = xs;
        let n_layers = self.layers.len();
        for (li, layer) in self.layers.iter().enumerate() {
            let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
            let mut z = vec![0.0; n * out_dim];
            for r in 0..n {
                let row = &cur[r * in_dim..(r + 1) * in_dim];
                let out = &mut z[r * out_dim..(r + 1) * out_dim];
                out.copy_from_slice(&layer.b);
                for (i, &xi) in row.iter().enumerate() {
                    let wrow = &layer.w[i * out_dim..(i + 1) * out_dim];
                    for (o, wv) in wrow.iter().enumerate() {
                        out[o] += xi * wv;
                    }
                }
            }
            let a = if li + 1 < n_layers {
                z.iter().map(|&v| v.max(0.0)).collect::<Vec<f64>>()
            } else {
                match self.head {
                    Head::Linear => z.clone(),
                    Head::Sigmoid => z
                        .iter()
                        .map(|&v| sigmoid(v).clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS))
                        .collect(),
                    Head::Gaussian => {
                        let half = out_dim / 2;
                        let mut a = z.clone();
                        for r in 0..n {
                            for k in half..out_dim {
                                let idx = r * out_dim + k;
                                a[idx] = a[idx].clamp(LOG_STD_MIN, LOG_STD_MAX);
                            }
                        }
                        a
                    }
                }
            };
            pre.push(z);
            post.push(a);
            cur = post.last().unwrap();
        }
        Ok(ForwardCache {
            n,
            input: xs.to_vec(),
            pre,
            post,
        })
    }

    /// Backward pass taking the loss gradient w.r.t. the final-layer
    /// pre-head values directly, bypassing the head derivative. Used for the
    /// numerically stable logit-space cross-entropy path.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache,
        delta_logits: &[f64],
    ) -> Result<(Grads, Vec<f64>), NnError> {
        let last = self.layers.len() - 1;
        if delta_logits.len() != cache.n * self.layers[last].out_dim {
            return Err(NnError::ShapeMismatch {
                layer: last,
                want: self.layers[last].out_dim,
                got: if cache.n == 0 { 0 } else { delta_logits.len() / cache.n },
            });
        }
        self.backward_inner(cache, delta_logits.to_vec())
    }

    /// Reverse-mode gradients of `sum_b upstream_b · output_b` w.r.t. every
    /// parameter. Also returns the gradient w.r.t. the input batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<(Grads, Vec<f64>), NnError> {
        let n = cache.n;
        let last = self.layers.len() - 1;
        if upstream.len() != n * self.layers[last].out_dim {
            return Err(NnError::ShapeMismatch {
                layer: last,
                want: self.layers[last].out_dim,
                got: if n == 0 { 0 } else { upstream.len() / n },
            });
        }
        // dL/d(pre-activation) of the final layer, from the head derivative.
        let mut delta = vec![0.0; upstream.len()];
        let out_dim = self.layers[last].out_dim;
        match self.head {
            Head::Linear => delta.copy_from_slice(upstream),
            Head::Sigmoid => {
                let post = &cache.post[last];
                for (d, (&u, &p)) in delta.iter_mut().zip(upstream.iter().zip(post.iter())) {
                    *d = u * p * (1.0 - p);
                }
            }
            Head::Gaussian => {
                let half = out_dim / 2;
                let pre = &cache.pre[last];
                for r in 0..n {
                    for k in 0..out_dim {
                        let idx = r * out_dim + k;
                        let clamped = k >= half
                            && (pre[idx] <= LOG_STD_MIN || pre[idx] >= LOG_STD_MAX);
                        delta[idx] = if clamped { 0.0 } else { upstream[idx] };
                    }
                }
            }
        }
        self.backward_inner(cache, delta)
    }

    fn backward_inner(
        &self,
        cache: &ForwardCache,
        mut delta: Vec<f64>,
    ) -> Result<(Grads, Vec<f64>), NnError> {
        let n = cache.n;
        let mut grads = Grads::zeros_like(self);
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (in_dim, out_dim) = (layer.in_dim, layer.out_dim);
            let below: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.post[li - 1]
            };
            {
                let lg = &mut grads.layers[li];
                for r in 0..n {
                    let x = &below[r * in_dim..(r + 1) * in_dim];
                    let d = &delta[r * out_dim..(r + 1) * out_dim];
                    for (i, &xi) in x.iter().enumerate() {
                        let wrow = &mut lg.w[i * out_dim..(i + 1) * out_dim];
                        for (o, &dv) in d.iter().enumerate() {
                            wrow[o] += xi * dv;
                        }
                    }
                    for (o, &dv) in d.iter().enumerate() {
                        lg.b[o] += dv;
                    }
                }
            }
            // Propagate to the layer below (through its ReLU), or to the input.
            let mut next_delta = vec![0.0; n * in_dim];
            for r in 0..n {
                let d = &delta[r * out_dim..(r + 1) * out_dim];
                let nd = &mut next_delta[r * in_dim..(r + 1) * in_dim];
                for (i, ndv) in nd.iter_mut().enumerate() {
                    let wrow = &layer.w[i * out_dim..(i + 1) * out_dim];
                    let mut acc = 0.0;
                    for (o, &dv) in d.iter().enumerate() {
                        acc += wrow[o] * dv;
                    }
                    *ndv = acc;
                }
            }
            if li > 0 {
                let pre_below = &cache.pre[li - 1];
                for (ndv, &pv) in next_delta.iter_mut().zip(pre_below.iter()) {
                    if pv <= 0.0 {
                        *ndv = 0.0;
                    }
                }
            }
            delta = next_delta;
        }
        Ok((grads, delta))
    }
}

/// Optimizer scheme. The rms variant deliberately carries no first-moment
/// accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptScheme {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
}

impl OptScheme {
    pub fn adam() -> Self {
        OptScheme::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn rms_prop() -> Self {
        OptScheme::RmsProp {
            decay: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    pub lr: f64,
    pub scheme: OptScheme,
    pub step_count: u64,
    /// First moments, present for Adam only.
    m: Option<Vec<Vec<f64>>>,
    /// Second moments (Adam) or squared-gradient average (rms).
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(lr: f64, scheme: OptScheme, mlp: &Mlp) -> Self {
        let shapes: Vec<Vec<f64>> = mlp
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]])
            .collect();
        let m = match scheme {
            OptScheme::Adam { .. } => Some(shapes.clone()),
            OptScheme::RmsProp { .. } => None,
        };
        Optimizer {
            lr,
            scheme,
            step_count: 0,
            m,
            v: shapes,
        }
    }

    pub fn has_first_moment(&self) -> bool {
        self.m.is_some()
    }

    pub fn accumulators(&self) -> (Option<&Vec<Vec<f64>>>, &Vec<Vec<f64>>) {
        (self.m.as_ref(), &self.v)
    }

    pub fn restore_accumulators(&mut self, m: Option<Vec<Vec<f64>>>, v: Vec<Vec<f64>>) {
        self.m = m;
        self.v = v;
    }

    /// One update step. Errors on any non-finite gradient component; nothing
    /// is clipped silently.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &Grads) -> Result<(), NnError> {
        if grads.layers.len() != mlp.layers.len() {
            return Err(NnError::GradShape { layer: 0 });
        }
        for (li, (l, g)) in mlp.layers.iter().zip(&grads.layers).enumerate() {
            if g.w.len() != l.w.len() || g.b.len() != l.b.len() {
                return Err(NnError::GradShape { layer: li });
            }
            if g.w.iter().chain(g.b.iter()).any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { layer: li });
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        for (li, (layer, lg)) in mlp.layers.iter_mut().zip(&grads.layers).enumerate() {
            for part in 0..2 {
                let group = 2 * li + part;
                let (params, gs): (&mut [f64], &[f64]) = if part == 0 {
                    (&mut layer.w, &lg.w)
                } else {
                    (&mut layer.b, &lg.b)
                };
                match self.scheme {
                    OptScheme::Adam { beta1, beta2, eps } => {
                        let m = &mut self.m.as_mut().expect("adam has first moments")[group];
                        let v = &mut self.v[group];
                        let bc1 = 1.0 - beta1.powi(t as i32);
                        let bc2 = 1.0 - beta2.powi(t as i32);
                        for ((p, &g), (mi, vi)) in params
                            .iter_mut()
                            .zip(gs)
                            .zip(m.iter_mut().zip(v.iter_mut()))
                        {
                            *mi = beta1 * *mi + (1.0 - beta1) * g;
                            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                            let mhat = *mi / bc1;
                            let vhat = *vi / bc2;
                            *p -= self.lr * mhat / (vhat.sqrt() + eps);
                        }
                    }
                    OptScheme::RmsProp { decay, eps } => {
                        let v = &mut self.v[group];
                        for ((p, &g), vi) in params.iter_mut().zip(gs).zip(v.iter_mut()) {
                            *vi = decay * *vi + (1.0 - decay) * g * g;
                            *p -= self.lr * g / (*vi + eps).sqrt();
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Compares the analytic gradients returned by `f` against central finite
/// differences (h = 1e-5) over every parameter. Returns the worst relative
/// error `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(mlp: &Mlp, f: F) -> f64
where
    F: Fn(&Mlp) -> (f64, Grads),
{
    let h = 1e-5;
    let (_, analytic) = f(mlp);
    let mut work = mlp.clone();
    let mut worst = 0.0_f64;
    for idx in 0..mlp.param_count() {
        let orig = work.get_param(idx);
        work.set_param(idx, orig + h);
        let (lp, _) = f(&work);
        work.set_param(idx, orig - h);
        let (lm, _) = f(&work);
        work.set_param(idx, orig);
        let numeric = (lp - lm) / (2.0 * h);
        let a = Mlp::grad_param(&analytic, idx);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}
