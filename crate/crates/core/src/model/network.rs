//! Recurrent networks with hand-written backpropagation.
//!
//! All weights live in one flat parameter vector so that optimizers,
//! gradient checks and checkpoints treat every model the same way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A one-step recurrent map `(x, h) → (y, h')` with an exact adjoint.
pub trait SequenceModel {
    type Cache: Default + Clone;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn hidden_len(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Advances one step, writing `y` and the next hidden state and
    /// recording what the backward pass needs in `cache`.
    fn step(&self, x: &[f64], h: &[f64], y: &mut [f64], h_next: &mut [f64], cache: &mut Self::Cache);

    /// Accumulates parameter gradients into `grads` and writes the input and
    /// previous-hidden adjoints. `dh_next` is the adjoint of `h_next`.
    fn step_backward(
        &self,
        cache: &Self::Cache,
        dy: &[f64],
        dh_next: &[f64],
        grads: &mut [f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
    );
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + b` for row-major `W` of shape `rows × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = b[i] + dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// `dW += d xᵀ`, `db += d`, `dx += Wᵀ d`.
fn affine_backward(w: &[f64], x: &[f64], d: &[f64], dw: &mut [f64], db: &mut [f64], dx: &mut [f64]) {
    let cols = x.len();
    for (i, &g) in d.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[i] += g;
        axpy(g, x, &mut dw[i * cols..(i + 1) * cols]);
        axpy(g, &w[i * cols..(i + 1) * cols], dx);
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Dimensions of a gated recurrent stack with a linear head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruShape {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

/// Offsets of one layer's tensors inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub input: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub end: usize,
}

impl GruShape {
    pub fn layer(&self, l: usize) -> LayerLayout {
        let h = self.hidden;
        let mut start = 0;
        for i in 0..=l {
            let input = if i == 0 { self.input } else { h };
            let w_ih = start;
            let w_hh = w_ih + 3 * h * input;
            let b_ih = w_hh + 3 * h * h;
            let b_hh = b_ih + 3 * h;
            let end = b_hh + 3 * h;
            if i == l {
                return LayerLayout {
                    input,
                    w_ih,
                    w_hh,
                    b_ih,
                    b_hh,
                    end,
                };
            }
            start = end;
        }
        unreachable!()
    }

    /// Offsets of the head weight matrix and bias.
    pub fn head(&self) -> (usize, usize) {
        let w = if self.layers == 0 { 0 } else { self.layer(self.layers - 1).end };
        (w, w + self.output * self.hidden)
    }

    pub fn num_params(&self) -> usize {
        let (_, b) = self.head();
        b + self.output
    }
}

/// Per-layer intermediate values of one step.
#[derive(Clone, Debug, Default)]
pub struct GruLayerCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct GruCache {
    layers: Vec<GruLayerCache>,
    top: Vec<f64>,
}

/// Stacked gated recurrent units (reset/update/candidate gates) followed by
/// a linear read-out of the top layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruNetwork {
    pub shape: GruShape,
    pub params: Vec<f64>,
}

impl GruNetwork {
    pub fn zeros(shape: GruShape) -> Self {
        assert!(shape.layers >= 1 && shape.hidden >= 1, "need at least one recurrent layer");
        GruNetwork {
            shape,
            params: vec![0.0; shape.num_params()],
        }
    }

    /// Uniform `±1/√hidden` initialization.
    pub fn init(shape: GruShape, seed: u64) -> Self {
        let mut net = GruNetwork::zeros(shape);
        let bound = 1.0 / (shape.hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut net.params {
            *p = rng.gen_range(-bound..bound);
        }
        net
    }

    fn run_layer(&self, l: usize, x: &[f64], h: &[f64], h_next: &mut [f64], cache: &mut GruLayerCache) {
        let lay = self.shape.layer(l);
        let hs = self.shape.hidden;
        let p = &self.params;
        let mut gi = vec![0.0; 3 * hs];
        let mut gh = vec![0.0; 3 * hs];
        affine(&p[lay.w_ih..lay.w_hh], &p[lay.b_ih..lay.b_hh], x, &mut gi);
        affine(&p[lay.w_hh..lay.b_ih], &p[lay.b_hh..lay.end], h, &mut gh);
        cache.x.clear();
        cache.x.extend_from_slice(x);
        cache.h_prev.clear();
        cache.h_prev.extend_from_slice(h);
        cache.r.resize(hs, 0.0);
        cache.z.resize(hs, 0.0);
        cache.n.resize(hs, 0.0);
        cache.gh_n.resize(hs, 0.0);
        for j in 0..hs {
            let r = sigmoid(gi[j] + gh[j]);
            let z = sigmoid(gi[hs + j] + gh[hs + j]);
            let n = (gi[2 * hs + j] + r * gh[2 * hs + j]).tanh();
            h_next[j] = (1.0 - z) * n + z * h[j];
            cache.r[j] = r;
            cache.z[j] = z;
            cache.n[j] = n;
            cache.gh_n[j] = gh[2 * hs + j];
        }
    }

    fn layer_backward(
        &self,
        l: usize,
        c: &GruLayerCache,
        dh_next: &[f64],
        grads: &mut [f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let lay = self.shape.layer(l);
        let hs = self.shape.hidden;
        let mut dgi = vec![0.0; 3 * hs];
        let mut dgh = vec![0.0; 3 * hs];
        for j in 0..hs {
            let (r, z, n) = (c.r[j], c.z[j], c.n[j]);
            let dh = dh_next[j];
            dh_prev[j] = dh * z;
            let dn = dh * (1.0 - z);
            let dz = dh * (c.h_prev[j] - n);
            let da_n = dn * (1.0 - n * n);
            let dr = da_n * c.gh_n[j];
            let da_r = dr * r * (1.0 - r);
            let da_z = dz * z * (1.0 - z);
            dgi[j] = da_r;
            dgi[hs + j] = da_z;
            dgi[2 * hs + j] = da_n;
            dgh[j] = da_r;
            dgh[hs + j] = da_z;
            dgh[2 * hs + j] = da_n * r;
        }
        let p = &self.params;
        let (g_wih, rest) = grads[lay.w_ih..lay.end].split_at_mut(lay.w_hh - lay.w_ih);
        let (g_whh, rest) = rest.split_at_mut(lay.b_ih - lay.w_hh);
        let (g_bih, g_bhh) = rest.split_at_mut(lay.b_hh - lay.b_ih);
        dx.iter_mut().for_each(|v| *v = 0.0);
        affine_backward(&p[lay.w_ih..lay.w_hh], &c.x, &dgi, g_wih, g_bih, dx);
        affine_backward(&p[lay.w_hh..lay.b_ih], &c.h_prev, &dgh, g_whh, g_bhh, dh_prev);
    }
}

impl SequenceModel for GruNetwork {
    type Cache = GruCache;

    fn input_dim(&self) -> usize {
        self.shape.input
    }

    fn output_dim(&self) -> usize {
        self.shape.output
    }

    fn hidden_len(&self) -> usize {
        self.shape.hidden * self.shape.layers
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn step(&self, x: &[f64], h: &[f64], y: &mut [f64], h_next: &mut [f64], cache: &mut GruCache) {
        let hs = self.shape.hidden;
        cache.layers.resize(self.shape.layers, GruLayerCache::default());
        for l in 0..self.shape.layers {
            let (done, rest) = h_next.split_at_mut(l * hs);
            let input = if l == 0 { x } else { &done[(l - 1) * hs..] };
            self.run_layer(l, input, &h[l * hs..(l + 1) * hs], &mut rest[..hs], &mut cache.layers[l]);
        }
        let top = &h_next[(self.shape.layers - 1) * hs..];
        cache.top.clear();
        cache.top.extend_from_slice(top);
        let (w, b) = self.shape.head();
        affine(&self.params[w..b], &self.params[b..b + self.shape.output], top, y);
    }

    fn step_backward(
        &self,
        cache: &GruCache,
        dy: &[f64],
        dh_next: &[f64],
        grads: &mut [f64],
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let hs = self.shape.hidden;
        let layers = self.shape.layers;
        let (w, b) = self.shape.head();
        let mut d_top = dh_next[(layers - 1) * hs..].to_vec();
        {
            let (g_w, g_b) = grads[w..b + self.shape.output].split_at_mut(b - w);
            affine_backward(&self.params[w..b], &cache.top, dy, g_w, g_b, &mut d_top);
        }
        // Adjoint flowing into the current layer's output.
        let mut d_out = d_top;
        for l in (0..layers).rev() {
            let lay = self.shape.layer(l);
            let mut d_in = vec![0.0; lay.input];
            self.layer_backward(
                l,
                &cache.layers[l],
                &d_out,
                grads,
                &mut d_in,
                &mut dh_prev[l * hs..(l + 1) * hs],
            );
            if l == 0 {
                dx.copy_from_slice(&d_in);
            } else {
                // Lower layer output feeds this layer and also carries its own
                // recurrent adjoint from the future.
                d_out = dh_next[(l - 1) * hs..l * hs].to_vec();
                axpy(1.0, &d_in, &mut d_out);
            }
        }
    }
}

/// Memoryless affine map `y = W x + b`; a reference model for tests and a
/// trivial baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub input: usize,
    pub output: usize,
    /// Row-major `W` followed by `b`.
    pub params: Vec<f64>,
}

impl LinearModel {
    pub fn new(input: usize, output: usize, weights: &[f64], bias: &[f64]) -> Self {
        assert_eq!(weights.len(), input * output);
        assert_eq!(bias.len(), output);
        let mut params = weights.to_vec();
        params.extend_from_slice(bias);
        LinearModel {
            input,
            output,
            params,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LinearCache {
    x: Vec<f64>,
}

impl SequenceModel for LinearModel {
    type Cache = LinearCache;

    fn input_dim(&self) -> usize {
        self.input
    }

    fn output_dim(&self) -> usize {
        self.output
    }

    fn hidden_len(&self) -> usize {
        0
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn step(&self, x: &[f64], _h: &[f64], y: &mut [f64], _h_next: &mut [f64], cache: &mut LinearCache) {
        let split = self.input * self.output;
        affine(&self.params[..split], &self.params[split..], x, y);
        cache.x.clear();
        cache.x.extend_from_slice(x);
    }

    fn step_backward(
        &self,
        cache: &LinearCache,
        dy: &[f64],
        _dh_next: &[f64],
        grads: &mut [f64],
        dx: &mut [f64],
        _dh_prev: &mut [f64],
    ) {
        let split = self.input * self.output;
        let (g_w, g_b) = grads.split_at_mut(split);
        dx.iter_mut().for_each(|v| *v = 0.0);
        affine_backward(&self.params[..split], &cache.x, dy, g_w, g_b, dx);
    }
}

/// Runs one step without keeping the cache.
pub fn infer<M: SequenceModel>(model: &M, x: &[f64], h: &mut Vec<f64>) -> Vec<f64> {
    let mut y = vec![0.0; model.output_dim()];
    let mut h_next = vec![0.0; model.hidden_len()];
    let mut cache = M::Cache::default();
    model.step(x, h, &mut y, &mut h_next, &mut cache);
    *h = h_next;
    y
}
