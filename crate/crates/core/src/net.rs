//! Fixed-architecture multilayer perceptron with exact input and parameter derivatives.
//!
//! Every layer carries a "dual" block of shape `width x (1 + D)`: column 0 holds the
//! activations and columns `1..=D` hold their tangents with respect to the `D` input
//! coordinates. One forward sweep therefore yields the output and its input gradient.
//! A reverse sweep over the same tape accumulates `seed_value * d(out)/d(theta) +
//! sum_i seed_grad[i] * d(d out/d x_i)/d(theta)`, which is all the loss assembly needs.
//!
//! Flat parameter order is `(w_K, b_K, W_{K-1}, b_{K-1}, ..., W_0, b_0)`, weight
//! matrices row-major with shape `(fan_out, fan_in)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported scalar nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Sinc,
    Elu,
    Sigmoid,
    Identity,
}

const SINC_VALUE_SERIES: f64 = 1e-4;
const SINC_DERIV_SERIES: f64 = 1e-2;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Value and first derivative at `z`.
    pub fn eval(self, z: f64) -> (f64, f64) {
        let (v, d, _) = self.eval2(z);
        (v, d)
    }

    /// Value, first and second derivative at `z`.
    pub fn eval2(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Softplus => {
                let v = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                let s = sigmoid(z);
                (v, s, s * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            Activation::Elu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    let e = z.exp();
                    (z.exp_m1(), e, e)
                }
            }
            Activation::Identity => (z, 1.0, 0.0),
            Activation::Sinc => sinc3(z),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Sinc => "sinc",
            Activation::Elu => "elu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

fn sinc3(z: f64) -> (f64, f64, f64) {
    let z2 = z * z;
    let value = if z.abs() < SINC_VALUE_SERIES {
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    };
    if z.abs() < SINC_DERIV_SERIES {
        let d = z * (-1.0 / 3.0 + z2 * (1.0 / 30.0 + z2 * (-1.0 / 840.0 + z2 / 45360.0)));
        let dd = -1.0 / 3.0 + z2 * (1.0 / 10.0 + z2 * (-1.0 / 168.0 + z2 / 6480.0));
        (value, d, dd)
    } else {
        let (s, c) = z.sin_cos();
        let d = (z * c - s) / z2;
        let dd = (2.0 * s - 2.0 * z * c - z2 * s) / (z2 * z);
        (value, d, dd)
    }
}

/// Architecture of one network: input size, hidden widths and their activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        activations: Vec<Activation>,
        output_activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_widths,
            activations,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.activations.len() != self.hidden_widths.len() {
            return Err(Error::InvalidSpec(format!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                self.hidden_widths.len()
            )));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidSpec("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let mut fan_in = self.input_dim;
        let mut n = 0;
        for &w in &self.hidden_widths {
            n += w * fan_in + w;
            fan_in = w;
        }
        n + fan_in + 1
    }
}

/// Location of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub weights: usize,
    pub bias: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }
}

/// Flat-vector layout: hidden layers in forward order, then the output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub hidden: Vec<LayerSlot>,
    pub output: LayerSlot,
    pub len: usize,
}

impl ParamLayout {
    fn for_spec(spec: &MlpSpec) -> Self {
        let last = spec.hidden_widths.last().copied().unwrap_or(spec.input_dim);
        let output = LayerSlot {
            weights: 0,
            bias: last,
            rows: 1,
            cols: last,
        };
        let mut offset = last + 1;
        let mut fan_in = Vec::with_capacity(spec.hidden_widths.len());
        let mut prev = spec.input_dim;
        for &w in &spec.hidden_widths {
            fan_in.push(prev);
            prev = w;
        }
        let mut hidden = vec![
            LayerSlot {
                weights: 0,
                bias: 0,
                rows: 0,
                cols: 0
            };
            spec.hidden_widths.len()
        ];
        for k in (0..spec.hidden_widths.len()).rev() {
            let rows = spec.hidden_widths[k];
            let cols = fan_in[k];
            hidden[k] = LayerSlot {
                weights: offset,
                bias: offset + rows * cols,
                rows,
                cols,
            };
            offset += rows * cols + rows;
        }
        Self {
            hidden,
            output,
            len: offset,
        }
    }

    /// Number of slots (hidden layers plus output).
    pub fn slot_count(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Flat parameter vector of one network. Updates produce new vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Structured view of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output value and its gradient with respect to the input point.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub input_grad: Vec<f64>,
}

/// Radial projection onto the ball `|theta| <= sqrt(2B)`.
pub fn project_ball(params: &ParamVector, bound: f64) -> ParamVector {
    let radius = (2.0 * bound).sqrt();
    if !radius.is_finite() {
        return params.clone();
    }
    let n = params.norm();
    if n <= radius || n == 0.0 {
        return params.clone();
    }
    let s = radius / n;
    ParamVector(params.0.iter().map(|v| v * s).collect())
}

/// Per-point scratch space recorded by a forward sweep.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    cols: usize,
    /// `duals[0]` is the input block, `duals[k]` the post-activation block of hidden layer k.
    duals: Vec<Vec<f64>>,
    /// Pre-activation blocks of the hidden layers.
    pre: Vec<Vec<f64>>,
    d1: Vec<Vec<f64>>,
    d2: Vec<Vec<f64>>,
    out_pre: Vec<f64>,
    out_d1: f64,
    out_d2: f64,
    bar: Vec<f64>,
    bar_next: Vec<f64>,
}

/// A network architecture bound to its parameter layout.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layout: ParamLayout,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layout = ParamLayout::for_spec(&spec);
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn param_count(&self) -> usize {
        self.layout.len
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut p = vec![0.0; self.layout.len];
        let slots = self.layout.hidden.iter().chain(std::iter::once(&self.layout.output));
        for slot in slots {
            let a = (6.0 / (slot.rows + slot.cols) as f64).sqrt();
            for w in &mut p[slot.weights..slot.weights + slot.rows * slot.cols] {
                *w = rng.random_range(-a..=a);
            }
        }
        ParamVector(p)
    }

    pub fn unflatten(&self, params: &ParamVector) -> Result<Vec<DenseParams>> {
        self.check_params(params.as_slice())?;
        let p = params.as_slice();
        let slots = self.layout.hidden.iter().chain(std::iter::once(&self.layout.output));
        Ok(slots
            .map(|s| DenseParams {
                rows: s.rows,
                cols: s.cols,
                weights: p[s.weights..s.weights + s.rows * s.cols].to_vec(),
                bias: p[s.bias..s.bias + s.rows].to_vec(),
            })
            .collect())
    }

    pub fn flatten(&self, layers: &[DenseParams]) -> Result<ParamVector> {
        if layers.len() != self.layout.slot_count() {
            return Err(Error::DimensionMismatch {
                what: "layer count",
                expected: self.layout.slot_count(),
                found: layers.len(),
            });
        }
        let mut p = vec![0.0; self.layout.len];
        let slots = self.layout.hidden.iter().chain(std::iter::once(&self.layout.output));
        for (s, l) in slots.zip(layers) {
            if l.rows != s.rows || l.cols != s.cols || l.weights.len() != s.rows * s.cols || l.bias.len() != s.rows {
                return Err(Error::InvalidSpec(format!(
                    "layer shape ({}, {}) does not match layout ({}, {})",
                    l.rows, l.cols, s.rows, s.cols
                )));
            }
            p[s.weights..s.weights + s.rows * s.cols].copy_from_slice(&l.weights);
            p[s.bias..s.bias + s.rows].copy_from_slice(&l.bias);
        }
        Ok(ParamVector(p))
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.len {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.layout.len,
                found: params.len(),
            });
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                what: "input point",
                expected: self.spec.input_dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Output value and exact input gradient.
    pub fn forward(&self, params: &ParamVector, x: &[f64]) -> Result<DualEval> {
        self.check_params(params.as_slice())?;
        self.check_point(x)?;
        let mut tape = Tape::default();
        Ok(self.forward_tape(params.as_slice(), x, true, &mut tape))
    }

    /// Output value only.
    pub fn value(&self, params: &ParamVector, x: &[f64]) -> Result<f64> {
        self.check_params(params.as_slice())?;
        self.check_point(x)?;
        let mut tape = Tape::default();
        Ok(self.forward_tape(params.as_slice(), x, false, &mut tape).value)
    }

    /// Exact parameter gradients of the output and of each input-gradient component.
    ///
    /// Returns `(d out / d theta, rows i = d(d out / d x_i) / d theta)`.
    pub fn param_grads(&self, params: &ParamVector, x: &[f64]) -> Result<(ParamVector, Vec<Vec<f64>>)> {
        self.check_params(params.as_slice())?;
        self.check_point(x)?;
        let p = params.as_slice();
        let d = self.spec.input_dim;
        let mut tape = Tape::default();
        self.forward_tape(p, x, true, &mut tape);
        let mut value_grad = vec![0.0; self.layout.len];
        let zeros = vec![0.0; d];
        self.backward(p, &mut tape, 1.0, &zeros, &mut value_grad);
        let mut jac = Vec::with_capacity(d);
        let mut seed = vec![0.0; d];
        for i in 0..d {
            seed.iter_mut().for_each(|s| *s = 0.0);
            seed[i] = 1.0;
            let mut row = vec![0.0; self.layout.len];
            self.backward(p, &mut tape, 0.0, &seed, &mut row);
            jac.push(row);
        }
        Ok((ParamVector(value_grad), jac))
    }

    /// Forward sweep recording everything the reverse sweep needs.
    ///
    /// Unchecked: the caller guarantees `params` and `x` match the spec.
    pub fn forward_tape(&self, params: &[f64], x: &[f64], tangents: bool, tape: &mut Tape) -> DualEval {
        let mut input_grad = Vec::new();
        let value = self.forward_into(params, x, tangents, tape, &mut input_grad);
        DualEval { value, input_grad }
    }

    /// Like [`Mlp::forward_tape`], appending the input gradient to `grad_out` (when
    /// `tangents`) instead of allocating.
    pub fn forward_into(&self, params: &[f64], x: &[f64], tangents: bool, tape: &mut Tape, grad_out: &mut Vec<f64>) -> f64 {
        let d = self.spec.input_dim;
        let cols = if tangents { d + 1 } else { 1 };
        let nh = self.layout.hidden.len();
        tape.cols = cols;
        tape.duals.resize_with(nh + 1, Vec::new);
        tape.pre.resize_with(nh, Vec::new);
        tape.d1.resize_with(nh, Vec::new);
        tape.d2.resize_with(nh, Vec::new);

        // Blocks are column-major: column j (0 = value, j = tangent along x_j) is contiguous.
        let input = &mut tape.duals[0];
        input.clear();
        input.resize(d * cols, 0.0);
        input[..d].copy_from_slice(x);
        if tangents {
            for i in 0..d {
                input[(1 + i) * d + i] = 1.0;
            }
        }

        for (k, slot) in self.layout.hidden.iter().enumerate() {
            let act = self.spec.activations[k];
            let (rows, cin) = (slot.rows, slot.cols);
            let (before, after) = tape.duals.split_at_mut(k + 1);
            let prev = &before[k];
            let out = &mut after[0];
            let pre = &mut tape.pre[k];
            let d1 = &mut tape.d1[k];
            let d2 = &mut tape.d2[k];
            pre.clear();
            pre.resize(rows * cols, 0.0);
            out.clear();
            out.resize(rows * cols, 0.0);
            d1.clear();
            d1.resize(rows, 0.0);
            d2.clear();
            d2.resize(rows, 0.0);
            let w = &params[slot.weights..slot.weights + rows * cin];
            let b = &params[slot.bias..slot.bias + rows];
            for j in 0..cols {
                let h = &prev[j * cin..(j + 1) * cin];
                let z = &mut pre[j * rows..(j + 1) * rows];
                for (r, zr) in z.iter_mut().enumerate() {
                    *zr = dot(&w[r * cin..(r + 1) * cin], h);
                }
                if j == 0 {
                    for (zr, br) in z.iter_mut().zip(b) {
                        *zr += br;
                    }
                }
            }
            for r in 0..rows {
                let (v, g1, g2) = act.eval2(pre[r]);
                d1[r] = g1;
                d2[r] = g2;
                out[r] = v;
            }
            for j in 1..cols {
                let z = &pre[j * rows..(j + 1) * rows];
                let o = &mut out[j * rows..(j + 1) * rows];
                for r in 0..rows {
                    o[r] = d1[r] * z[r];
                }
            }
        }

        let slot = self.layout.output;
        let cin = slot.cols;
        let last = &tape.duals[nh];
        let w = &params[slot.weights..slot.weights + cin];
        tape.out_pre.clear();
        for j in 0..cols {
            tape.out_pre.push(dot(w, &last[j * cin..(j + 1) * cin]));
        }
        tape.out_pre[0] += params[slot.bias];
        let (v, g1, g2) = self.spec.output_activation.eval2(tape.out_pre[0]);
        tape.out_d1 = g1;
        tape.out_d2 = g2;
        if tangents {
            grad_out.extend(tape.out_pre[1..].iter().map(|s| g1 * s));
        }
        v
    }

    /// Reverse sweep over a tape recorded with tangents (or with `seed_grad` all zero).
    ///
    /// Accumulates into `grad` the vector-Jacobian product for the seeds
    /// `(seed_value, seed_grad)` applied to `(out, d out / d x)`.
    pub fn backward(&self, params: &[f64], tape: &mut Tape, seed_value: f64, seed_grad: &[f64], grad: &mut [f64]) {
        let cols = tape.cols;
        let nh = self.layout.hidden.len();
        let g1 = tape.out_d1;
        let g2 = tape.out_d2;

        // Adjoint of the output pre-activation dual.
        let mut vbar = [0.0; 16];
        let mut vbar_heap;
        let vbar: &mut [f64] = if cols <= 16 {
            &mut vbar[..cols]
        } else {
            vbar_heap = vec![0.0; cols];
            &mut vbar_heap
        };
        let mut curvature = 0.0;
        for j in 1..cols {
            let sg = seed_grad[j - 1];
            vbar[j] = g1 * sg;
            curvature += sg * tape.out_pre[j];
        }
        vbar[0] = seed_value * g1 + g2 * curvature;

        let slot = self.layout.output;
        let cin = slot.cols;
        let last = &tape.duals[nh];
        {
            let gw = &mut grad[slot.weights..slot.weights + cin];
            for j in 0..cols {
                if vbar[j] != 0.0 {
                    axpy(vbar[j], &last[j * cin..(j + 1) * cin], gw);
                }
            }
        }
        grad[slot.bias] += vbar[0];
        if nh == 0 {
            return;
        }

        let w = &params[slot.weights..slot.weights + cin];
        let bar = &mut tape.bar;
        bar.clear();
        bar.resize(cin * cols, 0.0);
        for j in 0..cols {
            let blk = &mut bar[j * cin..(j + 1) * cin];
            for (bc, wc) in blk.iter_mut().zip(w) {
                *bc = wc * vbar[j];
            }
        }

        for k in (0..nh).rev() {
            let slot = self.layout.hidden[k];
            let (rows, cin) = (slot.rows, slot.cols);
            let pre = &tape.pre[k];
            let d1 = &tape.d1[k];
            let d2 = &tape.d2[k];
            // Convert the post-activation adjoint into the pre-activation adjoint in place.
            {
                let (head, tail) = tape.bar.split_at_mut(rows);
                for r in 0..rows {
                    let mut curv = 0.0;
                    for j in 1..cols {
                        let idx = (j - 1) * rows + r;
                        curv += tail[idx] * pre[j * rows + r];
                        tail[idx] *= d1[r];
                    }
                    head[r] = head[r] * d1[r] + d2[r] * curv;
                }
            }
            let prev = &tape.duals[k];
            let w = &params[slot.weights..slot.weights + rows * cin];
            let zb = &tape.bar;
            for (gb, z) in grad[slot.bias..slot.bias + rows].iter_mut().zip(&zb[..rows]) {
                *gb += z;
            }
            {
                let gw = &mut grad[slot.weights..slot.weights + rows * cin];
                for j in 0..cols {
                    let h = &prev[j * cin..(j + 1) * cin];
                    let zj = &zb[j * rows..(j + 1) * rows];
                    for r in 0..rows {
                        if zj[r] != 0.0 {
                            axpy(zj[r], h, &mut gw[r * cin..(r + 1) * cin]);
                        }
                    }
                }
            }
            if k > 0 {
                let next = &mut tape.bar_next;
                next.clear();
                next.resize(cin * cols, 0.0);
                for j in 0..cols {
                    let zj = &zb[j * rows..(j + 1) * rows];
                    let nj = &mut next[j * cin..(j + 1) * cin];
                    for r in 0..rows {
                        if zj[r] != 0.0 {
                            axpy(zj[r], &w[r * cin..(r + 1) * cin], nj);
                        }
                    }
                }
                std::mem::swap(&mut tape.bar, &mut tape.bar_next);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(acts: &[Activation], out: Activation, d: usize) -> Mlp {
        let widths = vec![6; acts.len()];
        Mlp::new(MlpSpec::new(d, widths, acts.to_vec(), out).unwrap()).unwrap()
    }

    #[test]
    fn activation_values_at_origin() {
        assert_eq!(Activation::Tanh.eval(0.0), (0.0, 1.0));
        assert_eq!(Activation::Sinc.eval(0.0), (1.0, 0.0));
        let (v, d) = Activation::Softplus.eval(1.0);
        let e = std::f64::consts::E;
        assert!((v - (1.0 + e).ln()).abs() < 1e-15);
        assert!((d - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn sinc_series_matches_closed_form_near_switchover() {
        for &z in &[0.99e-4, 1.01e-4, 0.0099, 0.0101, -0.0101] {
            let (v, d, dd) = sinc3(z);
            let (s, c) = z.sin_cos();
            assert!((v - s / z).abs() < 1e-15);
            assert!((d - (z * c - s) / (z * z)).abs() < 1e-9);
            assert!((dd + 1.0 / 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert_eq!(Activation::Softplus.eval(800.0).0, 800.0);
        assert!(Activation::Softplus.eval(-800.0).0 >= 0.0);
        assert!(Activation::Sigmoid.eval(-800.0).0.is_finite());
    }

    #[test]
    fn mismatched_activation_count_is_rejected() {
        assert!(MlpSpec::new(2, vec![4, 4], vec![Activation::Tanh], Activation::Identity).is_err());
        assert!(MlpSpec::new(2, vec![0], vec![Activation::Tanh], Activation::Identity).is_err());
    }

    #[test]
    fn constant_network() {
        let net = small(&[Activation::Tanh, Activation::Sinc], Activation::Identity, 3);
        let mut p = vec![0.0; net.param_count()];
        p[net.layout().output.bias] = 1.7;
        let p = ParamVector::from_vec(p);
        let out = net.forward(&p, &[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(out.value, 1.7);
        assert_eq!(out.input_grad, vec![0.0; 3]);
        let (vg, jac) = net.param_grads(&p, &[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(vg.as_slice()[net.layout().output.bias], 1.0);
        // With all weights zero the input gradient depends on theta only through W_0.
        let first = net.layout().hidden[0];
        for row in &jac {
            for (j, v) in row.iter().enumerate() {
                let in_first = j >= first.weights && j < first.weights + first.rows * first.cols;
                if !in_first {
                    assert_eq!(*v, 0.0, "entry {j}");
                }
            }
        }
    }

    #[test]
    fn full_size_network_accepts_five_vector() {
        let spec = MlpSpec::new(5, vec![20; 8], vec![Activation::Tanh; 8], Activation::Identity).unwrap();
        let net = Mlp::new(spec).unwrap();
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(1));
        let out = net.forward(&p, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        assert!(out.value.is_finite());
        assert_eq!(out.input_grad.len(), 5);
        assert!(net.forward(&p, &[0.1, 0.2]).is_err());
        assert!(net.forward(&ParamVector::zeros(3), &[0.0; 5]).is_err());
    }

    #[test]
    fn layout_round_trip() {
        let net = small(&[Activation::Tanh, Activation::Elu, Activation::Sigmoid], Activation::Elu, 4);
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(3));
        let layers = net.unflatten(&p).unwrap();
        assert_eq!(layers.len(), 4);
        assert_eq!(layers[0].cols, 4);
        assert_eq!(layers[3].rows, 1);
        assert_eq!(net.flatten(&layers).unwrap(), p);
        // Output layer comes first in the flat vector.
        assert_eq!(net.layout().output.weights, 0);
    }

    #[test]
    fn scaling_output_weights_scales_lower_gradients() {
        let net = small(&[Activation::Tanh, Activation::Tanh], Activation::Identity, 2);
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(5));
        let mut q = p.clone().into_inner();
        let out = net.layout().output;
        for v in &mut q[out.weights..out.weights + out.cols] {
            *v *= 2.0;
        }
        let q = ParamVector::from_vec(q);
        let x = [0.4, -0.7];
        let (gp, _) = net.param_grads(&p, &x).unwrap();
        let (gq, _) = net.param_grads(&q, &x).unwrap();
        for j in out.cols + 1..net.param_count() {
            assert!((gq.as_slice()[j] - 2.0 * gp.as_slice()[j]).abs() < 1e-12 * (1.0 + gp.as_slice()[j].abs()));
        }
    }

    #[test]
    fn projection_cases() {
        let b: f64 = 2.0;
        let r = (2.0 * b).sqrt();
        let inside = ParamVector::from_vec(vec![r / 2.0, 0.0]);
        assert_eq!(project_ball(&inside, b), inside);
        let outside = ParamVector::from_vec(vec![0.0, 2.0 * r]);
        let p = project_ball(&outside, b);
        assert!((p.as_slice()[1] - r).abs() < 1e-15);
        let zero = ParamVector::zeros(3);
        assert_eq!(project_ball(&zero, b), zero);
        assert_eq!(project_ball(&outside, f64::INFINITY), outside);
    }
}
