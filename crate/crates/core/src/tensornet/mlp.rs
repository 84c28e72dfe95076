use rand::Rng;
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("matrix row", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Elu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh_act(),
            Activation::Elu => x.elu_act(),
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Elu => {
                if pre > 0.0 {
                    1.0
                } else {
                    post + 1.0
                }
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Elu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Elu),
            _ => None,
        }
    }
}

/// One affine layer, `weights` is `[out × in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            biases: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Feature-major batch: `data[feature * lanes + lane]`.
///
/// Keeping lanes contiguous lets the dense loops vectorize over the batch
/// while each output element still accumulates its inputs in index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    features: usize,
    lanes: usize,
    data: Vec<f64>,
}

impl Batch {
    pub fn zeros(features: usize, lanes: usize) -> Self {
        Self {
            features,
            lanes,
            data: vec![0.0; features * lanes],
        }
    }

    /// Builds a batch from per-sample vectors (one sample per lane).
    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S]) -> Result<Self> {
        let lanes = samples.len();
        let features = samples.first().map_or(0, |s| s.as_ref().len());
        let mut out = Self::zeros(features, lanes);
        for (lane, s) in samples.iter().enumerate() {
            let s = s.as_ref();
            if s.len() != features {
                return Err(Error::shape("batch sample", features, s.len()));
            }
            for (f, &v) in s.iter().enumerate() {
                out.data[f * lanes + lane] = v;
            }
        }
        Ok(out)
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn feature(&self, f: usize) -> &[f64] {
        &self.data[f * self.lanes..(f + 1) * self.lanes]
    }

    pub fn feature_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.data[f * self.lanes..(f + 1) * self.lanes]
    }

    pub fn get(&self, f: usize, lane: usize) -> f64 {
        self.data[f * self.lanes + lane]
    }

    pub fn set(&mut self, f: usize, lane: usize, v: f64) {
        self.data[f * self.lanes + lane] = v;
    }

    pub fn sample(&self, lane: usize) -> Vec<f64> {
        (0..self.features).map(|f| self.get(f, lane)).collect()
    }

    pub fn samples(&self) -> Vec<Vec<f64>> {
        (0..self.lanes).map(|l| self.sample(l)).collect()
    }
}

/// Per-layer activations recorded by [`Mlp::forward_batch`].
#[derive(Clone, Debug)]
pub struct BatchTrace {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    inputs: Vec<Batch>,
    pre: Vec<Batch>,
}

impl BatchTrace {
    pub fn output(&self) -> &Batch {
        self.inputs.last().expect("trace always holds the input")
    }
}

/// Gradients shaped like the network they differentiate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.as_mut_slice().iter_mut().for_each(|x| *x *= s);
            l.biases.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weights.as_slice().iter().map(|x| x * x).sum::<f64>() + l.biases.iter().map(|x| x * x).sum::<f64>()
            })
            .sum()
    }

    /// Index of the first layer holding a non-finite entry.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers.iter().position(|l| {
            !l.weights.as_slice().iter().all(|x| x.is_finite()) || !l.biases.iter().all(|x| x.is_finite())
        })
    }
}

/// Multilayer perceptron with activated hidden layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    activations: Vec<Activation>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`; weights and biases uniform in
    /// `±sqrt(1 / fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                for x in layer.weights.as_mut_slice() {
                    *x = rng.gen_range(-bound..=bound);
                }
                for b in &mut layer.biases {
                    *b = rng.gen_range(-bound..=bound);
                }
                layer
            })
            .collect();
        Self {
            layers,
            activations: vec![activation; sizes.len() - 2],
        }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activations: vec![activation; sizes.len() - 2],
        }
    }

    pub fn from_layers(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("MLP with no layers".into()));
        }
        if activations.len() + 1 != layers.len() {
            return Err(Error::shape("activation count", layers.len() - 1, activations.len()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.biases.len() != layer.output_dim() {
                return Err(Error::shape(
                    format!("layer {i} biases"),
                    layer.output_dim(),
                    layer.biases.len(),
                ));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::shape(
                    format!("layer {i} input"),
                    layers[i - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        let net = Self { layers, activations };
        if !net.is_finite() {
            return Err(Error::NonFinite("MLP parameters".into()));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.as_slice().iter().all(|x| x.is_finite()) && l.biases.iter().all(|x| x.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("mlp input", self.input_dim(), input.len()));
        }
        let mut cur = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = affine(layer, &cur);
            if let Some(act) = self.activations.get(l) {
                next.iter_mut().for_each(|x| *x = act.apply(*x));
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Reverse-mode gradients of `⟨upstream, forward(input)⟩` with respect to
    /// the parameters and the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("mlp input", self.input_dim(), input.len()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("upstream gradient", self.output_dim(), upstream.len()));
        }
        let mut inputs = vec![input.to_vec()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = affine(layer, &inputs[l]);
            let post = match self.activations.get(l) {
                Some(act) => pre.iter().map(|&x| act.apply(x)).collect(),
                None => pre.clone(),
            };
            pres.push(pre);
            inputs.push(post);
        }

        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &inputs[l];
            let g = &mut grads.layers[l];
            for (j, &d) in delta.iter().enumerate() {
                g.biases[j] = d;
                for (i, &xi) in x.iter().enumerate() {
                    g.weights.set(j, i, d * xi);
                }
            }
            let mut dx = vec![0.0; layer.input_dim()];
            for (j, &d) in delta.iter().enumerate() {
                for (i, &w) in layer.weights.row(j).iter().enumerate() {
                    dx[i] += w * d;
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                for (i, v) in dx.iter_mut().enumerate() {
                    *v *= act.derivative(pres[l - 1][i], inputs[l][i]);
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Batched forward pass that keeps what [`Mlp::backward_batch`] needs.
    pub fn forward_batch(&self, input: &Batch) -> Result<BatchTrace> {
        if input.features() != self.input_dim() {
            return Err(Error::shape("mlp batch input", self.input_dim(), input.features()));
        }
        let lanes = input.lanes();
        let mut inputs = vec![input.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = &inputs[l];
            let mut y = Batch::zeros(layer.output_dim(), lanes);
            for j in 0..layer.output_dim() {
                let row = layer.weights.row(j);
                let out = y.feature_mut(j);
                out.fill(layer.biases[j]);
                for (i, &w) in row.iter().enumerate() {
                    for (o, &xv) in out.iter_mut().zip(x.feature(i)) {
                        *o = o.madd(w, xv);
                    }
                }
            }
            let post = match self.activations.get(l) {
                Some(&act) => {
                    let mut p = y.clone();
                    p.data.iter_mut().for_each(|v| *v = act.apply(*v));
                    p
                }
                None => y.clone(),
            };
            pre.push(y);
            inputs.push(post);
        }
        Ok(BatchTrace { inputs, pre })
    }

    /// Gradients summed over lanes, plus per-lane input gradients.
    pub fn backward_batch(&self, trace: &BatchTrace, upstream: &Batch) -> Result<(Gradients, Batch)> {
        if upstream.features() != self.output_dim() {
            return Err(Error::shape(
                "upstream gradient",
                self.output_dim(),
                upstream.features(),
            ));
        }
        let lanes = upstream.lanes();
        if trace.output().lanes() != lanes {
            return Err(Error::shape("upstream lanes", trace.output().lanes(), lanes));
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for j in 0..layer.output_dim() {
                let d = delta.feature(j);
                g.biases[j] = d.iter().sum();
                for i in 0..layer.input_dim() {
                    g.weights.set(j, i, dot(d, x.feature(i)));
                }
            }
            let mut dx = Batch::zeros(layer.input_dim(), lanes);
            for j in 0..layer.output_dim() {
                let d = delta.feature(j);
                for (i, &w) in layer.weights.row(j).iter().enumerate() {
                    for (o, &dv) in dx.feature_mut(i).iter_mut().zip(d) {
                        *o += w * dv;
                    }
                }
            }
            if l > 0 {
                let act = self.activations[l - 1];
                let pre = &trace.pre[l - 1];
                let post = &trace.inputs[l];
                for ((v, &p), &q) in dx.data.iter_mut().zip(&pre.data).zip(&post.data) {
                    *v *= act.derivative(p, q);
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Visits every parameter with its gradient, in storage order.
    pub(crate) fn for_each_param_mut(&mut self, grads: &Gradients, mut f: impl FnMut(usize, &mut f64, f64)) {
        let mut idx = 0;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, &d) in layer.weights.as_mut_slice().iter_mut().zip(g.weights.as_slice()) {
                f(idx, p, d);
                idx += 1;
            }
            for (p, &d) in layer.biases.iter_mut().zip(&g.biases) {
                f(idx, p, d);
                idx += 1;
            }
        }
    }

    pub(crate) fn check_congruent(&self, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layers", self.layers.len(), grads.layers.len()));
        }
        for (i, (p, g)) in self.layers.iter().zip(&grads.layers).enumerate() {
            if p.weights.rows() != g.weights.rows()
                || p.weights.cols() != g.weights.cols()
                || p.biases.len() != g.biases.len()
            {
                return Err(Error::shape(
                    format!("gradient layer {i}"),
                    p.weights.as_slice().len() + p.biases.len(),
                    g.weights.as_slice().len() + g.biases.len(),
                ));
            }
        }
        Ok(())
    }
}

/// `b + W x`, accumulated in input order with [`Real::madd`].
#[inline]
fn affine(layer: &Layer, x: &[f64]) -> Vec<f64> {
    (0..layer.output_dim())
        .map(|j| {
            layer
                .weights
                .row(j)
                .iter()
                .zip(x)
                .fold(layer.biases[j], |acc, (&w, &xi)| acc.madd(w, xi))
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for k in 0..8 {
            acc[k] += a[c * 8 + k] * b[c * 8 + k];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    acc.iter().sum::<f64>() + tail
}
