use super::mlp::{Activation, Mlp};
use super::real::Real;

/// Batches handed to [`FrozenMlp::forward_batch`] must have a lane count
/// that is a multiple of this.
pub const LANE_QUANTUM: usize = 32;
const ROW_BLOCK: usize = 6;

pub fn padded_lanes(n: usize) -> usize {
    n.div_ceil(LANE_QUANTUM).max(1) * LANE_QUANTUM
}

#[derive(Clone, Debug)]
struct FrozenLayer<T> {
    input: usize,
    output: usize,
    out_padded: usize,
    /// Transposed weights, `[input × out_padded]`, zero in the padding rows.
    wt: Vec<T>,
    bias: Vec<T>,
}

/// Read-only inference copy of an [`Mlp`] laid out for batched evaluation.
///
/// Every output element is accumulated as `bias + Σ_i w_i x_i` in input
/// order with [`Real::madd`], the same order [`Mlp::forward`] uses, so the
/// `f64` instantiation reproduces it bit for bit.
#[derive(Clone, Debug)]
pub struct FrozenMlp<T> {
    layers: Vec<FrozenLayer<T>>,
    activations: Vec<Activation>,
}

/// Ping-pong scratch buffers reused across calls.
#[derive(Clone, Debug, Default)]
pub struct Scratch<T> {
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: Real> FrozenMlp<T> {
    pub fn from_mlp(net: &Mlp) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| {
                let (input, output) = (l.input_dim(), l.output_dim());
                let out_padded = output.div_ceil(ROW_BLOCK) * ROW_BLOCK;
                let mut wt = vec![T::ZERO; input * out_padded];
                for j in 0..output {
                    for i in 0..input {
                        wt[i * out_padded + j] = T::from_f64(l.weights.get(j, i));
                    }
                }
                let mut bias = vec![T::ZERO; out_padded];
                for (b, &v) in bias.iter_mut().zip(&l.biases) {
                    *b = T::from_f64(v);
                }
                FrozenLayer {
                    input,
                    output,
                    out_padded,
                    wt,
                    bias,
                }
            })
            .collect();
        Self {
            layers,
            activations: net.activations().to_vec(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    /// Evaluates `lanes` samples stored feature-major in `x`
    /// (`x[f * lanes + lane]`), writing `out[f * lanes + lane]` for the
    /// `output_dim()` output features.
    pub fn forward_batch(&self, x: &[T], lanes: usize, out: &mut [T], scratch: &mut Scratch<T>) {
        assert_eq!(lanes % LANE_QUANTUM, 0, "lane count must be padded");
        assert!(x.len() >= self.input_dim() * lanes);
        assert!(out.len() >= self.output_dim() * lanes);
        let widest = self.layers.iter().map(|l| l.out_padded).max().unwrap_or(0) * lanes;
        if scratch.a.len() < widest {
            scratch.a.resize(widest, T::ZERO);
            scratch.b.resize(widest, T::ZERO);
        }
        let Scratch { a, b } = scratch;
        let mut src: &mut Vec<T> = a;
        let mut dst: &mut Vec<T> = b;
        for (l, layer) in self.layers.iter().enumerate() {
            let input: &[T] = if l == 0 { x } else { src.as_slice() };
            match self.activations.get(l) {
                Some(Activation::Tanh) => dense(layer, input, lanes, dst.as_mut_slice(), T::tanh_slice),
                Some(Activation::Elu) => dense(layer, input, lanes, dst.as_mut_slice(), |s: &mut [T]| {
                    s.iter_mut().for_each(|v| *v = v.elu_act())
                }),
                None => dense(layer, input, lanes, dst.as_mut_slice(), |_: &mut [T]| {}),
            }
            std::mem::swap(&mut src, &mut dst);
        }
        let n = self.output_dim() * lanes;
        out[..n].copy_from_slice(&src[..n]);
    }
}

/// `y = act(W x + b)`, the activation applied block by block while the
/// block is still in cache.
fn dense<T: Real, F: Fn(&mut [T]) + Copy>(layer: &FrozenLayer<T>, x: &[T], lanes: usize, y: &mut [T], act: F) {
    // 2 × 512-bit registers of lanes per row block in either precision.
    if std::mem::size_of::<T>() == 4 {
        dense_blocked::<T, F, 32>(layer, x, lanes, y, act)
    } else {
        dense_blocked::<T, F, 16>(layer, x, lanes, y, act)
    }
}

#[inline(always)]
fn dense_blocked<T: Real, F: Fn(&mut [T]) + Copy, const LB: usize>(
    layer: &FrozenLayer<T>,
    x: &[T],
    lanes: usize,
    y: &mut [T],
    act: F,
) {
    let op = layer.out_padded;
    for jb in (0..op).step_by(ROW_BLOCK) {
        let bias: &[T; ROW_BLOCK] = layer.bias[jb..jb + ROW_BLOCK].try_into().unwrap();
        for c in (0..lanes).step_by(LB) {
            let mut acc = [[T::ZERO; LB]; ROW_BLOCK];
            for r in 0..ROW_BLOCK {
                acc[r] = [bias[r]; LB];
            }
            for i in 0..layer.input {
                let xs: &[T; LB] = x[i * lanes + c..i * lanes + c + LB].try_into().unwrap();
                let ws: &[T; ROW_BLOCK] = layer.wt[i * op + jb..i * op + jb + ROW_BLOCK].try_into().unwrap();
                for r in 0..ROW_BLOCK {
                    let w = ws[r];
                    for l in 0..LB {
                        acc[r][l] = acc[r][l].madd(w, xs[l]);
                    }
                }
            }
            for r in 0..ROW_BLOCK {
                let row = (jb + r) * lanes + c;
                y[row..row + LB].copy_from_slice(&acc[r]);
            }
            for r in 0..ROW_BLOCK {
                let row = (jb + r) * lanes + c;
                act(&mut y[row..row + LB]);
            }
        }
    }
}
