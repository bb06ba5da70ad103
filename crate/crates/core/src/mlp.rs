//! Multilayer perceptron that maps channel features to packed covariance
//! labels.
//!
//! Fully connected layers with ReLU activations and a linear output,
//! trained on mean squared error with Adam, a step learning-rate schedule and
//! validation-based early stopping. Batched products go through
//! `matrixmultiply`; everything else is plain loops.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use half::f16;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channels::{ChannelPair, NormalSource};
use crate::error::{Error, Result};
use crate::features::{build_input, feature_len, label_len, unpack_labels, Dataset, FEATURE_VERSION};
use crate::secrecy_rates::CovariancePair;

pub const MODEL_FORMAT: &str = "noma-secrecy-model";
pub const MODEL_VERSION: u32 = 1;

/// Nine 256-wide layers funnelling through 128 and 64.
pub fn default_hidden_widths() -> Vec<usize> {
    let mut w = vec![256; 9];
    w.extend([128, 64]);
    w
}

/// What a model was trained for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelContext {
    pub n_t: usize,
    pub alpha: f64,
    #[serde(rename = "P")]
    pub power: f64,
    pub feature_version: u32,
}

impl ModelContext {
    pub fn new(n_t: usize, alpha: f64, power: f64) -> Self {
        ModelContext {
            n_t,
            alpha,
            power,
            feature_version: FEATURE_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            inputs,
            outputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderModel {
    pub layers: Vec<Layer>,
    pub context: ModelContext,
}

impl PrecoderModel {
    /// Default architecture for the context's antenna count.
    pub fn new(context: ModelContext, seed: u64) -> Self {
        let mut widths = vec![feature_len(context.n_t)];
        widths.extend(default_hidden_widths());
        widths.push(label_len(context.n_t));
        Self::with_widths(&widths, context, seed).expect("default widths are valid")
    }

    /// Gaussian fan-in initialization (`√(2/fan_in)` for ReLU layers,
    /// `√(1/fan_in)` for the linear output), zero biases.
    pub fn with_widths(widths: &[usize], context: ModelContext, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer widths {widths:?}")));
        }
        let mut src = NormalSource::new(seed, 0);
        let n_layers = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let gain = if l + 1 == n_layers { 1.0 } else { 2.0 };
                let std = (gain / fan_in as f64).sqrt();
                let mut layer = Layer::zeros(fan_in, fan_out);
                layer.weights.iter_mut().for_each(|x| *x = std * src.next_normal());
                layer
            })
            .collect();
        Ok(PrecoderModel { layers, context })
    }

    pub fn zeros(widths: &[usize], context: ModelContext) -> Result<Self> {
        let mut m = Self::with_widths(widths, context, 0)?;
        m.layers.iter_mut().for_each(|l| l.weights.fill(0.0));
        Ok(m)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.input_len(),
                input.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            affine(&layer.weights, &layer.biases, &cur, &mut next, l < last);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass over `rows` samples stored row-major in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
        if inputs.len() != rows * self.input_len() {
            return Err(Error::Shape(format!(
                "{} values for {rows} samples of width {}",
                inputs.len(),
                self.input_len()
            )));
        }
        let mut ws = Workspace::new(self, rows);
        ws.acts[0][..inputs.len()].copy_from_slice(inputs);
        self.forward_ws(&mut ws, rows);
        Ok(ws.acts.last().expect("output activations")[..rows * self.output_len()].to_vec())
    }

    fn forward_ws(&self, ws: &mut Workspace, rows: usize) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let a = &head[l][..rows * layer.inputs];
            let z = &mut tail[0][..rows * layer.outputs];
            // z = a · Wᵀ
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.inputs,
                    layer.outputs,
                    1.0,
                    a.as_ptr(),
                    layer.inputs as isize,
                    1,
                    layer.weights.as_ptr(),
                    1,
                    layer.inputs as isize,
                    0.0,
                    z.as_mut_ptr(),
                    layer.outputs as isize,
                    1,
                );
            }
            for row in z.chunks_exact_mut(layer.outputs) {
                for (v, b) in row.iter_mut().zip(&layer.biases) {
                    *v += b;
                    if l < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    /// Mean-squared-error loss and its gradient for one batch.
    ///
    /// Loss is the mean over the batch of the mean over outputs of the squared
    /// error.
    pub fn loss_and_gradient(&self, inputs: &[f64], targets: &[f64], rows: usize) -> Result<(f64, Vec<Layer>)> {
        if targets.len() != rows * self.output_len() {
            return Err(Error::Shape(format!(
                "{} targets for {rows} samples of width {}",
                targets.len(),
                self.output_len()
            )));
        }
        let mut ws = Workspace::new(self, rows);
        ws.acts[0][..inputs.len()].copy_from_slice(inputs);
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let loss = self.backprop(&mut ws, targets, rows, &mut grads);
        Ok((loss, grads))
    }

    fn backprop(&self, ws: &mut Workspace, targets: &[f64], rows: usize, grads: &mut [Layer]) -> f64 {
        self.forward_ws(ws, rows);
        let n_layers = self.layers.len();
        let out_w = self.output_len();
        let scale = 2.0 / (rows * out_w) as f64;
        let mut loss = 0.0;
        {
            let y = &ws.acts[n_layers][..rows * out_w];
            let delta = &mut ws.deltas[n_layers - 1][..rows * out_w];
            for ((d, &yv), &t) in delta.iter_mut().zip(y).zip(targets) {
                let e = yv - t;
                loss += e * e;
                *d = scale * e;
            }
        }
        loss /= (rows * out_w) as f64;

        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let g = &mut grads[l];
            let delta = &ws.deltas[l][..rows * layer.outputs];
            let a = &ws.acts[l][..rows * layer.inputs];
            // dW = δᵀ · a
            unsafe {
                matrixmultiply::dgemm(
                    layer.outputs,
                    rows,
                    layer.inputs,
                    1.0,
                    delta.as_ptr(),
                    1,
                    layer.outputs as isize,
                    a.as_ptr(),
                    layer.inputs as isize,
                    1,
                    0.0,
                    g.weights.as_mut_ptr(),
                    layer.inputs as isize,
                    1,
                );
            }
            g.biases.fill(0.0);
            for row in delta.chunks_exact(layer.outputs) {
                for (b, d) in g.biases.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l == 0 {
                break;
            }
            let (lower, upper) = ws.deltas.split_at_mut(l);
            let delta = &upper[0][..rows * layer.outputs];
            let prev = &mut lower[l - 1][..rows * layer.inputs];
            // δ_prev = (δ · W) ⊙ relu'(z_prev)
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.outputs,
                    layer.inputs,
                    1.0,
                    delta.as_ptr(),
                    layer.outputs as isize,
                    1,
                    layer.weights.as_ptr(),
                    layer.inputs as isize,
                    1,
                    0.0,
                    prev.as_mut_ptr(),
                    layer.inputs as isize,
                    1,
                );
            }
            for (d, &act) in prev.iter_mut().zip(&ws.acts[l][..rows * layer.inputs]) {
                if act <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        loss
    }

    /// Predicted covariance pair for a channel, repaired to be feasible.
    pub fn predict_covariances(&self, ch: &ChannelPair) -> Result<CovariancePair> {
        check_channel(&self.context, self.input_len(), self.output_len(), ch)?;
        let out = self.forward(&build_input(ch))?;
        unpack_labels(&out, self.context.power)
    }
}

/// `out = W x + b`, optionally rectified. `w` is `out × in` row-major.
fn affine<W: Copy + Into<f64>>(w: &[W], biases: &[f64], x: &[f64], out: &mut Vec<f64>, relu: bool) {
    out.clear();
    out.resize(biases.len(), 0.0);
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
        // SAFETY: the required CPU features were just detected.
        unsafe { affine_fma(w, biases, x, out, relu) };
        return;
    }
    affine_body::<W, false>(w, biases, x, out, relu);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn affine_fma<W: Copy + Into<f64>>(w: &[W], biases: &[f64], x: &[f64], out: &mut [f64], relu: bool) {
    affine_body::<W, true>(w, biases, x, out, relu);
}

const LANES: usize = 8;

#[inline(always)]
fn affine_body<W: Copy + Into<f64>, const FUSED: bool>(
    w: &[W],
    biases: &[f64],
    x: &[f64],
    out: &mut [f64],
    relu: bool,
) {
    let n = x.len();
    let split = n - n % LANES;
    let (xv, xr) = x.split_at(split);
    let madd = |acc: f64, a: W, b: f64| {
        let a: f64 = a.into();
        if FUSED {
            a.mul_add(b, acc)
        } else {
            acc + a * b
        }
    };
    let reduce = |a: &[f64; LANES]| ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7]));
    let finish = |z: f64| if relu { z.max(0.0) } else { z };
    // Four rows per pass so each load of `x` feeds four products.
    let mut blocks = w.chunks_exact(4 * n);
    let mut o = 0;
    for block in blocks.by_ref() {
        let rows: [&[W]; 4] = [&block[..n], &block[n..2 * n], &block[2 * n..3 * n], &block[3 * n..]];
        let mut acc = [[0.0f64; LANES]; 4];
        for (c, xc) in xv.chunks_exact(LANES).enumerate() {
            let base = c * LANES;
            for (r, row) in rows.iter().enumerate() {
                let wc = &row[base..base + LANES];
                for k in 0..LANES {
                    acc[r][k] = madd(acc[r][k], wc[k], xc[k]);
                }
            }
        }
        for (r, row) in rows.iter().enumerate() {
            let mut s = reduce(&acc[r]);
            for (&wi, &xi) in row[split..].iter().zip(xr) {
                s = madd(s, wi, xi);
            }
            out[o + r] = finish(s + biases[o + r]);
        }
        o += 4;
    }
    for row in blocks.remainder().chunks_exact(n) {
        let mut a = [0.0f64; LANES];
        for (wc, xc) in row[..split].chunks_exact(LANES).zip(xv.chunks_exact(LANES)) {
            for k in 0..LANES {
                a[k] = madd(a[k], wc[k], xc[k]);
            }
        }
        let mut s = reduce(&a);
        for (&wi, &xi) in row[split..].iter().zip(xr) {
            s = madd(s, wi, xi);
        }
        out[o] = finish(s + biases[o]);
        o += 1;
    }
}

/// Column chunk of [`FrozenModel`] weights, one AVX-512 register of `f32`.
const CHUNK: usize = 16;
/// Rows interleaved per [`FrozenModel`] weight block.
const BLOCK: usize = 8;

/// Position of weight `(o, i)` in a frozen layer with `rows` outputs and
/// `n` (a multiple of [`CHUNK`]) padded inputs.
///
/// Full blocks of [`BLOCK`] rows are stored chunk by chunk, so a kernel pass
/// over one block reads a single contiguous stream. Leftover rows follow in
/// row-major order.
fn frozen_index(o: usize, i: usize, rows: usize, n: usize) -> usize {
    let full = rows - rows % BLOCK;
    if o >= full {
        return full * n + (o - full) * n + i;
    }
    let (block, r) = (o / BLOCK, o % BLOCK);
    let (chunk, k) = (i / CHUNK, i % CHUNK);
    block * BLOCK * n + (chunk * BLOCK + r) * CHUNK + k
}

/// Half-precision weights of one layer, laid out by [`frozen_index`].
#[derive(Clone, Debug)]
struct FrozenLayer {
    weights: Vec<f16>,
    biases: Vec<f32>,
    /// Inputs rounded up to a multiple of [`CHUNK`].
    padded: usize,
}

/// Inference-only copy of a model with half-precision weights.
///
/// The weights of the default architecture then fit in a typical L2 cache,
/// which is what bounds single-sample latency. Products are accumulated in
/// single precision. Outputs agree with [`PrecoderModel::forward`] to
/// roughly half-precision relative accuracy.
#[derive(Clone, Debug)]
pub struct FrozenModel {
    layers: Vec<FrozenLayer>,
    input_len: usize,
    pub context: ModelContext,
}

impl FrozenModel {
    pub fn new(m: &PrecoderModel) -> Self {
        let layers = m
            .layers
            .iter()
            .map(|l| {
                let padded = l.inputs.next_multiple_of(CHUNK);
                let mut weights = vec![f16::ZERO; l.outputs * padded];
                for o in 0..l.outputs {
                    for i in 0..l.inputs {
                        weights[frozen_index(o, i, l.outputs, padded)] = f16::from_f64(l.weights[o * l.inputs + i]);
                    }
                }
                FrozenLayer {
                    weights,
                    biases: l.biases.iter().map(|&b| b as f32).collect(),
                    padded,
                }
            })
            .collect();
        FrozenModel {
            layers,
            input_len: m.input_len(),
            context: m.context,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("at least one layer").biases.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_len {
            return Err(Error::Shape(format!(
                "model expects {} inputs, got {}",
                self.input_len,
                input.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cur: Vec<f32> = input.iter().map(|&v| v as f32).collect();
        let mut next = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            cur.resize(layer.padded, 0.0);
            layer.apply(&cur, &mut next, l < last);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur.into_iter().map(f64::from).collect())
    }

    /// Same contract as [`PrecoderModel::predict_covariances`].
    pub fn predict_covariances(&self, ch: &ChannelPair) -> Result<CovariancePair> {
        check_channel(&self.context, self.input_len, self.output_len(), ch)?;
        let out = self.forward(&build_input(ch))?;
        unpack_labels(&out, self.context.power)
    }
}

impl FrozenLayer {
    /// `out = W x + b`, optionally rectified. `x` has `padded` entries.
    fn apply(&self, x: &[f32], out: &mut Vec<f32>, relu: bool) {
        out.clear();
        out.resize(self.biases.len(), 0.0);
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required CPU feature was just detected.
                unsafe { self.apply_avx512(x, out) };
                return self.finish(out, relu);
            }
            if std::is_x86_feature_detected!("avx2")
                && std::is_x86_feature_detected!("fma")
                && std::is_x86_feature_detected!("f16c")
            {
                // SAFETY: the required CPU features were just detected.
                unsafe { self.apply_avx2(x, out) };
                return self.finish(out, relu);
            }
        }
        self.apply_portable(x, out);
        self.finish(out, relu);
    }

    fn apply_portable(&self, x: &[f32], out: &mut [f32]) {
        let rows = self.biases.len();
        for (o, y) in out.iter_mut().enumerate() {
            *y = (0..self.padded).fold(0.0f32, |s, i| {
                self.weights[frozen_index(o, i, rows, self.padded)]
                    .to_f32()
                    .mul_add(x[i], s)
            });
        }
    }

    fn finish(&self, out: &mut [f32], relu: bool) {
        for (y, b) in out.iter_mut().zip(&self.biases) {
            *y += b;
            if relu {
                *y = y.max(0.0);
            }
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn apply_avx512(&self, x: &[f32], out: &mut [f32]) {
        use std::arch::x86_64::*;

        let n = self.padded;
        let xp = x.as_ptr();
        let mut wp = self.weights.as_ptr();
        let full = out.len() - out.len() % BLOCK;
        for o in (0..full).step_by(BLOCK) {
            let mut acc = [_mm512_setzero_ps(); BLOCK];
            for c in (0..n).step_by(CHUNK) {
                let xv = _mm512_loadu_ps(xp.add(c));
                for a in acc.iter_mut() {
                    let wv = _mm512_cvtph_ps(_mm256_loadu_si256(wp as *const __m256i));
                    *a = _mm512_fmadd_ps(wv, xv, *a);
                    wp = wp.add(CHUNK);
                }
            }
            for (r, a) in acc.iter().enumerate() {
                out[o + r] = _mm512_reduce_add_ps(*a);
            }
        }
        for y in &mut out[full..] {
            let mut a = _mm512_setzero_ps();
            for c in (0..n).step_by(CHUNK) {
                let wv = _mm512_cvtph_ps(_mm256_loadu_si256(wp as *const __m256i));
                a = _mm512_fmadd_ps(wv, _mm512_loadu_ps(xp.add(c)), a);
                wp = wp.add(CHUNK);
            }
            *y = _mm512_reduce_add_ps(a);
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma,f16c")]
    unsafe fn apply_avx2(&self, x: &[f32], out: &mut [f32]) {
        use std::arch::x86_64::*;

        #[inline(always)]
        unsafe fn hsum(v: __m256) -> f32 {
            let s = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
            let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
            let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
            _mm_cvtss_f32(s)
        }
        #[inline(always)]
        unsafe fn load(p: *const f16) -> __m256 {
            _mm256_cvtph_ps(_mm_loadu_si128(p as *const __m128i))
        }

        let n = self.padded;
        let xp = x.as_ptr();
        let mut wp = self.weights.as_ptr();
        let full = out.len() - out.len() % BLOCK;
        for o in (0..full).step_by(BLOCK) {
            let mut acc = [_mm256_setzero_ps(); BLOCK];
            for c in (0..n).step_by(CHUNK) {
                let (lo, hi) = (_mm256_loadu_ps(xp.add(c)), _mm256_loadu_ps(xp.add(c + 8)));
                for a in acc.iter_mut() {
                    *a = _mm256_fmadd_ps(load(wp), lo, *a);
                    *a = _mm256_fmadd_ps(load(wp.add(8)), hi, *a);
                    wp = wp.add(CHUNK);
                }
            }
            for (r, a) in acc.iter().enumerate() {
                out[o + r] = hsum(*a);
            }
        }
        for y in &mut out[full..] {
            let mut a = _mm256_setzero_ps();
            for c in (0..n).step_by(8) {
                a = _mm256_fmadd_ps(load(wp), _mm256_loadu_ps(xp.add(c)), a);
                wp = wp.add(8);
            }
            *y = hsum(a);
        }
    }
}

fn check_channel(ctx: &ModelContext, input_len: usize, output_len: usize, ch: &ChannelPair) -> Result<()> {
    if ch.n_t() != ctx.n_t {
        return Err(Error::ContextMismatch(format!(
            "model trained for n_t={}, channel has n_t={}",
            ctx.n_t,
            ch.n_t()
        )));
    }
    if input_len != feature_len(ch.n_t()) || output_len != label_len(ch.n_t()) {
        return Err(Error::ContextMismatch(format!(
            "model maps {input_len} inputs to {output_len} outputs, which does not fit n_t={}",
            ch.n_t()
        )));
    }
    Ok(())
}

/// Activation and delta buffers sized for one batch.
struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(m: &PrecoderModel, rows: usize) -> Self {
        let widths = m.widths();
        Workspace {
            acts: widths.iter().map(|w| vec![0.0; w * rows]).collect(),
            deltas: widths[1..].iter().map(|w| vec![0.0; w * rows]).collect(),
        }
    }
}

/// Training hyperparameters. Defaults are the tuned values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub drop_factor: f64,
    /// Epochs between learning-rate drops.
    pub drop_period: usize,
    pub batch_size: usize,
    /// Iterations between validation passes.
    pub validation_frequency: usize,
    /// Consecutive non-improving validations before stopping.
    pub validation_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    /// Keep a copy of every new best model in the log.
    pub keep_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            drop_factor: 0.5,
            drop_period: 5,
            batch_size: 256,
            validation_frequency: 1000,
            validation_patience: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 30,
            seed: 0,
            hidden_widths: default_hidden_widths(),
            keep_checkpoints: false,
        }
    }
}

impl TrainConfig {
    /// Step schedule `lr₀ · drop^⌊epoch / period⌋`, epochs counted from 0.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.drop_factor.powi((epoch / self.drop_period.max(1)) as i32)
    }

    fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.drop_factor > 0.0
            && self.drop_period > 0
            && self.batch_size > 0
            && self.validation_frequency > 0
            && self.validation_patience > 0
            && self.max_epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if !positive {
            return Err(Error::InvalidInput(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training loss since the previous validation.
    pub train_loss: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<ValidationRecord>,
    pub best_iteration: usize,
    pub epochs_run: usize,
    pub iterations: usize,
    pub stopped_early: bool,
    /// `(iteration, model)` for each improvement, when requested.
    #[serde(skip)]
    pub checkpoints: Vec<(usize, PrecoderModel)>,
}

impl TrainLog {
    pub fn best_val_mse(&self) -> f64 {
        self.records.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min)
    }
}

/// Mean squared error of raw network outputs against stored labels.
pub fn dataset_mse(model: &PrecoderModel, ds: &Dataset) -> Result<f64> {
    const CHUNK: usize = 1024;
    if ds.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if ds.feature_len() != model.input_len() || ds.label_len() != model.output_len() {
        return Err(Error::ContextMismatch(format!(
            "dataset has {} features / {} labels, model expects {} / {}",
            ds.feature_len(),
            ds.label_len(),
            model.input_len(),
            model.output_len()
        )));
    }
    let mut ws = Workspace::new(model, CHUNK.min(ds.len()));
    let fl = model.input_len();
    let ol = model.output_len();
    let mut sum = 0.0;
    for chunk in ds.samples.chunks(CHUNK) {
        let rows = chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            ws.acts[0][i * fl..(i + 1) * fl].copy_from_slice(&s.features);
        }
        model.forward_ws(&mut ws, rows);
        let y = &ws.acts[model.layers.len()];
        for (i, s) in chunk.iter().enumerate() {
            for (p, t) in y[i * ol..(i + 1) * ol].iter().zip(&s.labels) {
                sum += (p - t) * (p - t);
            }
        }
    }
    Ok(sum / (ds.len() * ol) as f64)
}

fn check_context(train: &Dataset, val: &Dataset) -> Result<ModelContext> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let (a, b) = (&train.header, &val.header);
    if a.n_t != b.n_t || a.alpha != b.alpha || a.power != b.power {
        return Err(Error::ContextMismatch(format!(
            "training set (n_t={}, alpha={}, P={}) vs validation set (n_t={}, alpha={}, P={})",
            a.n_t, a.alpha, a.power, b.n_t, b.alpha, b.power
        )));
    }
    Ok(ModelContext::new(a.n_t, a.alpha, a.power))
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
}

impl Adam {
    fn new(model: &PrecoderModel) -> Self {
        let zeros = || model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut PrecoderModel, grads: &[Layer], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let step_size = lr * c2.sqrt() / c1;
        let eps = cfg.epsilon * c2.sqrt();
        for (((layer, g), m), v) in model.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    p[i] -= step_size * m[i] / (v[i].sqrt() + eps);
                }
            };
            update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
    }
}

/// Trains a model from scratch on `train`, early-stopping on `val`.
///
/// Validation runs every `validation_frequency` iterations and once more at
/// the end; the returned model is the best one seen on the validation set.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<(PrecoderModel, TrainLog)> {
    cfg.validate()?;
    let context = check_context(train_set, val_set)?;
    let mut widths = vec![train_set.feature_len()];
    widths.extend(&cfg.hidden_widths);
    widths.push(train_set.label_len());
    let mut model = PrecoderModel::with_widths(&widths, context, cfg.seed)?;

    let n = train_set.len();
    let bs = cfg.batch_size.min(n);
    let fl = train_set.feature_len();
    let ll = train_set.label_len();
    let mut ws = Workspace::new(&model, bs);
    let mut grads: Vec<Layer> = model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
    let mut targets = vec![0.0; bs * ll];
    let mut adam = Adam::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, PrecoderModel)> = None;
    let mut stale = 0;
    let mut iteration = 0;
    let mut loss_acc = 0.0;
    let mut loss_count = 0usize;

    let mut validate = |model: &PrecoderModel,
                        iteration: usize,
                        epoch: usize,
                        lr: f64,
                        train_loss: f64,
                        log: &mut TrainLog|
     -> Result<bool> {
        let val_mse = dataset_mse(model, val_set)?;
        let improved = best.as_ref().is_none_or(|(b, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, model.clone()));
            log.best_iteration = iteration;
            if cfg.keep_checkpoints {
                log.checkpoints.push((iteration, model.clone()));
            }
            stale = 0;
        } else {
            stale += 1;
        }
        log.records.push(ValidationRecord {
            iteration,
            epoch,
            learning_rate: lr,
            train_loss,
            val_mse,
            best_val_mse: best.as_ref().map(|(b, _)| *b).unwrap_or(val_mse),
        });
        Ok(stale >= cfg.validation_patience)
    };

    let mut stop = false;
    let mut last_validated = usize::MAX;
    let mut epoch = 0;
    while epoch < cfg.max_epochs && !stop {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(bs) {
            let rows = batch.len();
            for (r, &idx) in batch.iter().enumerate() {
                let s = &train_set.samples[idx];
                ws.acts[0][r * fl..(r + 1) * fl].copy_from_slice(&s.features);
                targets[r * ll..(r + 1) * ll].copy_from_slice(&s.labels);
            }
            let loss = model.backprop(&mut ws, &targets[..rows * ll], rows, &mut grads);
            adam.update(&mut model, &grads, lr, cfg);
            iteration += 1;
            loss_acc += loss;
            loss_count += 1;
            if iteration % cfg.validation_frequency == 0 {
                let tl = loss_acc / loss_count as f64;
                loss_acc = 0.0;
                loss_count = 0;
                last_validated = iteration;
                if validate(&model, iteration, epoch, lr, tl, &mut log)? {
                    stop = true;
                    log.stopped_early = true;
                    break;
                }
            }
        }
        epoch += 1;
    }
    if last_validated != iteration {
        let tl = if loss_count > 0 {
            loss_acc / loss_count as f64
        } else {
            f64::NAN
        };
        let lr = cfg.learning_rate_at(epoch.saturating_sub(1));
        validate(&model, iteration, epoch.saturating_sub(1), lr, tl, &mut log)?;
    }
    log.epochs_run = epoch;
    log.iterations = iteration;
    let (_, best_model) = best.expect("at least one validation ran");
    Ok((best_model, log))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: u32,
    widths: Vec<usize>,
    context: ModelContext,
    param_count: usize,
    sha256: String,
}

fn param_bytes(m: &PrecoderModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.param_count() * 8);
    for x in m.params() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_model<W: Write>(m: &PrecoderModel, mut w: W) -> std::io::Result<()> {
    let body = param_bytes(m);
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        widths: m.widths(),
        context: m.context,
        param_count: m.param_count(),
        sha256: hex(&Sha256::digest(&body)),
    };
    let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&body)?;
    w.flush()
}

pub fn read_model<R: Read>(r: R) -> Result<PrecoderModel> {
    let bad = |detail: String| Error::Format { what: "model", detail };
    let mut reader = BufReader::new(r);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| bad(format!("reading header: {e}")))?;
    if line.last() != Some(&b'\n') {
        return Err(bad("missing header line".into()));
    }
    let header: ModelHeader =
        serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != MODEL_FORMAT {
        return Err(bad(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != MODEL_VERSION {
        return Err(bad(format!(
            "version {} not supported (expected {MODEL_VERSION})",
            header.version
        )));
    }
    if header.widths.len() < 2 || header.widths.contains(&0) {
        return Err(bad(format!("invalid widths {:?}", header.widths)));
    }
    let expected: usize = header.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    if expected != header.param_count {
        return Err(bad(format!(
            "widths imply {expected} parameters, header says {}",
            header.param_count
        )));
    }
    let mut body = Vec::with_capacity(expected * 8);
    reader
        .read_to_end(&mut body)
        .map_err(|e| bad(format!("reading parameters: {e}")))?;
    if body.len() != expected * 8 {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            body.len()
        )));
    }
    if hex(&Sha256::digest(&body)) != header.sha256 {
        return Err(bad("parameter checksum mismatch".into()));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut layers = Vec::with_capacity(header.widths.len() - 1);
    for w in header.widths.windows(2) {
        let mut layer = Layer::zeros(w[0], w[1]);
        layer
            .weights
            .iter_mut()
            .for_each(|p| *p = vals.next().expect("length checked"));
        layer
            .biases
            .iter_mut()
            .for_each(|p| *p = vals.next().expect("length checked"));
        layers.push(layer);
    }
    let model = PrecoderModel {
        layers,
        context: header.context,
    };
    if model.params().any(|p| !p.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    Ok(model)
}

pub fn save_model(m: &PrecoderModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io("creating model file", path, e))?;
    write_model(m, BufWriter::new(f)).map_err(|e| Error::io("writing model", path, e))
}

pub fn load_model(path: &Path) -> Result<PrecoderModel> {
    let f = File::open(path).map_err(|e| Error::io("opening model", path, e))?;
    read_model(f)
}
