use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::{gemm, View};
use super::{Architecture, LayerSpec, Real, Shape, Tensor};
use crate::{Error, Result};

/// Softmax cross-entropy never takes the log of anything smaller than this.
pub const LOG_FLOOR: f64 = 1e-12;

/// A feed-forward network with all parameters in one flat buffer.
///
/// Layer `i` owns `params[offsets[i]..offsets[i+1]]`: weights first
/// (convolutions as `[c_out][c_in][ky][kx]`, dense layers as
/// `[n_out][n_in]`), then biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    shapes: Vec<Shape>,
    offsets: Vec<usize>,
    params: Vec<T>,
}

/// Result of one forward/backward pass.
#[derive(Debug, Clone)]
pub struct LossGrad<T> {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Gradient of `loss`, laid out like [`Network::params`].
    pub grads: Vec<T>,
    pub logits: Tensor<T>,
}

/// Predicted label and class probabilities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Reusable buffers for forward and backward passes.
///
/// Keeping one per training loop avoids re-faulting tens of megabytes of
/// fresh activation memory on every batch.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    /// Input of every computing layer; the last entry is the logits. Left
    /// empty for the output of a layer fused with the ReLU after it.
    acts: Vec<Vec<T>>,
    /// Flat argmax positions, one list per pooling layer (empty otherwise).
    argmax: Vec<Vec<u32>>,
    scratch: Scratch<T>,
    grads: Vec<T>,
    delta: Vec<T>,
    dx: Vec<T>,
    batch: usize,
}

impl<T: Real> Workspace<T> {
    pub fn new() -> Self {
        Workspace {
            acts: Vec::new(),
            argmax: Vec::new(),
            scratch: Scratch::default(),
            grads: Vec::new(),
            delta: Vec::new(),
            dx: Vec::new(),
            batch: 0,
        }
    }

    /// Gradient from the last [`Network::loss_and_grad_in`].
    pub fn grads(&self) -> &[T] {
        &self.grads
    }

    /// Logits of sample `s` from the last pass.
    pub fn logits(&self, s: usize) -> &[T] {
        let z = self.acts.last().map(Vec::as_slice).unwrap_or(&[]);
        let per = z.len() / self.batch.max(1);
        &z[s * per..(s + 1) * per]
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Real> Network<T> {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut offsets = vec![0];
        for l in &arch.layers {
            let (w, b) = l.param_counts();
            offsets.push(offsets.last().unwrap() + w + b);
        }
        let n = *offsets.last().unwrap();
        Ok(Network {
            arch,
            shapes,
            offsets,
            params: vec![T::zero(); n],
        })
    }

    /// He-style fan-in initialization: weights uniform in ±√(6/fan_in),
    /// biases zero.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..net.arch.layers.len() {
            let layer = net.arch.layers[i];
            let (nw, _) = layer.param_counts();
            if nw == 0 {
                continue;
            }
            let limit = libm::sqrt(6.0 / layer.fan_in() as f64);
            let start = net.offsets[i];
            for p in &mut net.params[start..start + nw] {
                *p = T::of(rng.gen_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.params.len()),
                got: format!("{}", params.len()),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        self.params = params;
        Ok(())
    }

    /// `(weights, biases)` of layer `i`; both empty for parameter-free layers.
    pub fn layer_params(&self, i: usize) -> (&[T], &[T]) {
        let (nw, _) = self.arch.layers[i].param_counts();
        let s = &self.params[self.offsets[i]..self.offsets[i + 1]];
        s.split_at(nw)
    }

    /// Parameter range owned by layer `i`.
    pub fn layer_range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().unwrap().size()
    }

    fn computing_layers(&self) -> usize {
        match self.arch.layers.last() {
            Some(LayerSpec::Softmax) => self.arch.layers.len() - 1,
            _ => self.arch.layers.len(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let mut want = vec![batch.batch()];
        want.extend(self.input_shape().dims());
        if batch.shape() != want.as_slice() || batch.batch() == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("[B>0, {:?}]", self.input_shape().dims()),
                got: format!("{:?}", batch.shape()),
            });
        }
        if !batch.is_finite() {
            return Err(Error::NonFinite("input batch".into()));
        }
        Ok(batch.batch())
    }

    /// First layer whose input is flat. Layers before it run one sample at
    /// a time so each sample's activations stay cache-resident.
    fn image_prefix(&self) -> usize {
        (0..self.computing_layers())
            .find(|&i| matches!(self.shapes[i], Shape::Flat(_)))
            .unwrap_or(self.computing_layers())
    }

    pub(crate) fn run_forward(&self, ws: &mut Workspace<T>, batch: &Tensor<T>) -> Result<()> {
        let b = self.check_batch(batch)?;
        let n = self.computing_layers();
        let d = self.image_prefix();
        ws.batch = b;
        ws.acts.resize_with(n + 1, Vec::new);
        ws.acts[0].clear();
        ws.acts[0].extend_from_slice(batch.data());
        for i in 1..=n {
            // stale contents are fine: every layer overwrites its output
            let len = if self.fused_with_relu(i - 1) {
                0
            } else {
                b * self.shapes[i].size()
            };
            ws.acts[i].resize(len, T::zero());
        }
        ws.argmax.resize_with(n, Vec::new);
        for i in 0..n {
            let len = match self.arch.layers[i] {
                LayerSpec::MaxPool => b * self.shapes[i + 1].size(),
                _ => 0,
            };
            ws.argmax[i].resize(len, 0);
        }
        let Workspace {
            acts,
            argmax,
            scratch,
            ..
        } = ws;
        let Scratch { cols, out, .. } = scratch;
        for s in 0..b {
            let mut i = 0;
            while i < d {
                let (ins, outs) = (self.shapes[i].size(), self.shapes[i + 1].size());
                let fused = self.fused_with_relu(i);
                let (lo, hi) = acts.split_at_mut(i + 1);
                let (cur, rest) = hi.split_first_mut().unwrap();
                let am = if argmax[i].is_empty() {
                    &mut [][..]
                } else {
                    &mut argmax[i][s * outs..(s + 1) * outs]
                };
                let y = if fused {
                    // pre-activation stays in a cache-hot scratch buffer
                    out.resize(outs, T::zero());
                    &mut out[..]
                } else {
                    &mut cur[s * outs..(s + 1) * outs]
                };
                let (w, bias) = self.layer_params(i);
                forward_layer(
                    self.arch.layers[i],
                    self.shapes[i],
                    self.shapes[i + 1],
                    1,
                    &lo[i][s * ins..(s + 1) * ins],
                    w,
                    bias,
                    y,
                    am,
                    cols,
                );
                // checked while the sample is still cache-resident; ReLU,
                // pooling and flatten cannot turn finite input non-finite
                if has_params(self.arch.layers[i]) && !all_finite(y) {
                    return Err(non_finite(i, self.arch.layers[i]));
                }
                if fused {
                    relu(y, &mut rest[0][s * outs..(s + 1) * outs]);
                    i += 1;
                }
                i += 1;
            }
        }
        for i in d..n {
            let (lo, hi) = acts.split_at_mut(i + 1);
            let (w, bias) = self.layer_params(i);
            forward_layer(
                self.arch.layers[i],
                self.shapes[i],
                self.shapes[i + 1],
                b,
                &lo[i],
                w,
                bias,
                &mut hi[0],
                &mut argmax[i],
                cols,
            );
            if has_params(self.arch.layers[i]) && !all_finite(&hi[0]) {
                return Err(non_finite(i, self.arch.layers[i]));
            }
        }

        Ok(())
    }

    /// Logits `[B, classes]` for a `[B, C, H, W]` batch.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ws = Workspace::new();
        self.forward_in(&mut ws, batch)
    }

    /// [`forward`](Self::forward) reusing caller-owned buffers.
    pub fn forward_in(&self, ws: &mut Workspace<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.run_forward(ws, batch)?;
        Tensor::new(
            vec![ws.batch, self.classes()],
            ws.acts.last().unwrap().clone(),
        )
    }

    /// Mean softmax cross-entropy and its gradient for every parameter.
    pub fn loss_and_grad(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<LossGrad<T>> {
        let mut ws = Workspace::new();
        let loss = self.loss_and_grad_in(&mut ws, batch, labels)?;
        let logits = Tensor::new(vec![ws.batch, self.classes()], ws.acts.pop().unwrap())?;
        Ok(LossGrad {
            loss,
            grads: ws.grads,
            logits,
        })
    }

    /// [`loss_and_grad`](Self::loss_and_grad) reusing caller-owned buffers;
    /// returns the loss and leaves gradients and logits in `ws`.
    pub fn loss_and_grad_in(
        &self,
        ws: &mut Workspace<T>,
        batch: &Tensor<T>,
        labels: &[usize],
    ) -> Result<f64> {
        let classes = self.classes();
        if labels.len() != batch.batch() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels", batch.batch()),
                got: format!("{}", labels.len()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {} outside 0..{}",
                l, classes
            )));
        }
        self.run_forward(ws, batch)?;
        let b = ws.batch;

        let mut loss = 0.0;
        let logits = ws.acts.last().unwrap();
        ws.delta.clear();
        ws.delta.resize(logits.len(), T::zero());
        for (s, &y) in labels.iter().enumerate() {
            let p = softmax(&logits[s * classes..(s + 1) * classes]);
            loss -= libm::log(p[y].max(LOG_FLOOR));
            for (k, pk) in p.iter().enumerate() {
                let target = if k == y { 1.0 } else { 0.0 };
                ws.delta[s * classes + k] = T::of((pk - target) / b as f64);
            }
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        ws.grads.clear();
        ws.grads.resize(self.params.len(), T::zero());
        let n = self.computing_layers();
        let d = self.image_prefix();
        let Workspace {
            acts,
            argmax,
            scratch,
            grads,
            delta,
            dx,
            ..
        } = ws;
        // every layer overwrites all of dx, so stale buffer contents are fine
        for i in (d..n).rev() {
            dx.resize(if i > 0 { b * self.shapes[i].size() } else { 0 }, T::zero());
            self.backward_into(
                i,
                b,
                acts,
                argmax,
                0,
                delta,
                grads,
                (i > 0).then_some(&mut dx[..]),
                scratch,
            );
            core::mem::swap(delta, dx);
        }
        if d > 0 {
            // per sample through the convolutional prefix
            let size = self.shapes[d].size();
            let all = core::mem::take(delta);
            for s in 0..b {
                delta.clear();
                delta.extend_from_slice(&all[s * size..(s + 1) * size]);
                for i in (0..d).rev() {
                    dx.resize(if i > 0 { self.shapes[i].size() } else { 0 }, T::zero());
                    self.backward_into(
                        i,
                        1,
                        acts,
                        argmax,
                        s,
                        delta,
                        grads,
                        (i > 0).then_some(&mut dx[..]),
                        scratch,
                    );
                    core::mem::swap(delta, dx);
                }
            }
        }
        Ok(loss)
    }

    /// Whether layer `i` runs per sample, has parameters and feeds a ReLU
    /// that also runs per sample. Such pairs are computed in one pass and
    /// the pre-activation is never stored: ReLU's backward pass only needs
    /// the sign of its output.
    fn fused_with_relu(&self, i: usize) -> bool {
        i + 1 < self.image_prefix()
            && has_params(self.arch.layers[i])
            && matches!(self.arch.layers[i + 1], LayerSpec::Relu)
    }

    /// Backward through layer `i` for `b` samples starting at sample `s0`.
    #[allow(clippy::too_many_arguments)]
    fn backward_into(
        &self,
        i: usize,
        b: usize,
        acts: &[Vec<T>],
        argmax: &[Vec<u32>],
        s0: usize,
        dy: &[T],
        grads: &mut [T],
        dx: Option<&mut [T]>,
        scratch: &mut Scratch<T>,
    ) {
        let (ins, outs) = (self.shapes[i].size(), self.shapes[i + 1].size());
        let (gw, gb) =
            grads[self.layer_range(i)].split_at_mut(self.arch.layers[i].param_counts().0);
        let am = &argmax[i];
        let am = if am.is_empty() {
            am.as_slice()
        } else {
            &am[s0 * outs..(s0 + b) * outs]
        };
        // ReLU masks by its output, which has the same sign as its input
        let x = match self.arch.layers[i] {
            LayerSpec::Relu => &acts[i + 1][s0 * outs..(s0 + b) * outs],
            _ => &acts[i][s0 * ins..(s0 + b) * ins],
        };
        backward_layer(
            self.arch.layers[i],
            self.shapes[i],
            self.shapes[i + 1],
            b,
            x,
            am,
            self.layer_params(i).0,
            dy,
            gw,
            gb,
            dx,
            scratch,
        );
    }

    /// Argmax of the softmax (ties go to the lowest class index).
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<Prediction>> {
        let logits = self.forward(batch)?;
        Ok((0..logits.batch())
            .map(|s| prediction(logits.item(s)))
            .collect())
    }
}

/// Numerically stable softmax (max subtraction), evaluated in `f64`.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<f64> {
    let z: Vec<f64> = logits
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn prediction<T: Real>(logits: &[T]) -> Prediction {
    let probabilities = softmax(logits);
    // Argmax on the logits themselves: exact ties there stay ties, whereas
    // rounding in exp could split them.
    let z: Vec<f64> = logits
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();
    Prediction {
        label: argmax(&z),
        probabilities,
    }
}

fn image_dims(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Image { c, h, w } => (c, h, w),
        Shape::Flat(n) => (n, 1, 1),
    }
}

/// For the kernel tap `(ky, kx)` of a same-padded convolution: the flat
/// offset from output to input pixel, the range of output rows that read
/// inside the image, and the output columns that read past the left/right
/// border.
fn tap_geometry(
    h: usize,
    w: usize,
    k: usize,
    ky: usize,
    kx: usize,
) -> (isize, core::ops::Range<usize>, core::ops::Range<usize>) {
    let p = k / 2;
    let dy = ky as isize - p as isize;
    let dx = kx as isize - p as isize;
    let rows = (p.saturating_sub(ky))..(h + p).saturating_sub(ky).min(h);
    let cols = (p.saturating_sub(kx))..(w + p).saturating_sub(kx).min(w);
    (dy * w as isize + dx, rows, cols)
}

/// Lower one `c×h×w` image into a `(c·k·k) × (h·w)` column matrix for a
/// same-padded stride-1 convolution.
///
/// Each tap row is a shifted copy of a channel plane: one bulk copy over the
/// valid output rows, then the few border columns that wrapped are zeroed.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (shift, rows, valid) = tap_geometry(h, w, k, ky, kx);
                if rows.is_empty() || valid.is_empty() {
                    row.fill(T::zero());
                    continue;
                }
                let lo = ((rows.start * w) as isize).max(-shift) as usize;
                let hi = ((rows.end * w) as isize).min(hw as isize - shift) as usize;
                row[..lo].fill(T::zero());
                row[lo..hi].copy_from_slice(
                    &plane[(lo as isize + shift) as usize..(hi as isize + shift) as usize],
                );
                row[hi..].fill(T::zero());
                if valid.start > 0 || valid.end < w {
                    for r in row[rows.start * w..rows.end * w].chunks_exact_mut(w) {
                        r[..valid.start].iter_mut().for_each(|v| *v = T::zero());
                        r[valid.end..].iter_mut().for_each(|v| *v = T::zero());
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image. Entries
/// of `cols` that correspond to padding are overwritten with zero.
fn col2im<T: Real>(cols: &mut [T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let (shift, rows, valid) = tap_geometry(h, w, k, ky, kx);
                if rows.is_empty() || valid.is_empty() {
                    continue;
                }
                if valid.start > 0 || valid.end < w {
                    for r in row[rows.start * w..rows.end * w].chunks_exact_mut(w) {
                        r[..valid.start].iter_mut().for_each(|v| *v = T::zero());
                        r[valid.end..].iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                let lo = ((rows.start * w) as isize).max(-shift) as usize;
                let hi = ((rows.end * w) as isize).min(hw as isize - shift) as usize;
                let dst =
                    &mut plane[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                for (d, s) in dst.iter_mut().zip(&row[lo..hi]) {
                    *d += *s;
                }
            }
        }
    }
}

fn has_params(layer: LayerSpec) -> bool {
    matches!(layer, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
}

fn non_finite(i: usize, layer: LayerSpec) -> Error {
    Error::NonFinite(format!("output of layer {} ({:?})", i, layer))
}

/// True when every value is finite. Lane-wise accumulation of `v·0`, which
/// is NaN exactly for non-finite `v`, so the loop vectorizes.
pub(crate) fn all_finite<T: Real>(v: &[T]) -> bool {
    let mut acc = [T::zero(); 16];
    let mut chunks = v.chunks_exact(16);
    for c in &mut chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += x * T::zero();
        }
    }
    acc.iter().all(|a| *a == T::zero()) && chunks.remainder().iter().all(|x| x.is_finite())
}

/// Sum with 16 independent accumulators, so the loop vectorizes.
fn lane_sum<T: Real>(v: &[T]) -> T {
    let mut acc = [T::zero(); 16];
    let mut chunks = v.chunks_exact(16);
    for c in &mut chunks {
        for (a, &x) in acc.iter_mut().zip(c) {
            *a += x;
        }
    }
    let tail: T = chunks.remainder().iter().copied().sum();
    acc.iter().copied().sum::<T>() + tail
}

#[derive(Debug, Default)]
struct Scratch<T> {
    cols: Vec<T>,
    dcols: Vec<T>,
    out: Vec<T>,
}

fn relu<T: Real>(x: &[T], y: &mut [T]) {
    y.iter_mut()
        .zip(x)
        .for_each(|(o, &v)| *o = if v > T::zero() { v } else { T::zero() });
}

/// Writes every element of `y`; `am` is only touched by pooling.
#[allow(clippy::too_many_arguments)]
fn forward_layer<T: Real>(
    layer: LayerSpec,
    input: Shape,
    output: Shape,
    b: usize,
    x: &[T],
    w: &[T],
    bias: &[T],
    y: &mut [T],
    am: &mut [u32],
    cols: &mut Vec<T>,
) {
    let out_size = output.size();
    let in_size = input.size();
    match layer {
        LayerSpec::Conv2d {
            kernel,
            c_in,
            c_out,
        } => {
            let (_, h, wd) = image_dims(input);
            let hw = h * wd;
            let ckk = c_in * kernel * kernel;
            cols.resize(ckk * hw, T::zero());
            for s in 0..b {
                im2col(
                    &x[s * in_size..(s + 1) * in_size],
                    c_in,
                    h,
                    wd,
                    kernel,
                    cols,
                );
                let ys = &mut y[s * out_size..(s + 1) * out_size];
                gemm(
                    View::new(w, c_out, ckk),
                    View::new(cols, ckk, hw),
                    T::zero(),
                    ys,
                );
                for (co, row) in ys.chunks_exact_mut(hw).enumerate() {
                    let bv = bias[co];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        LayerSpec::Dense { n_in, n_out } => {
            gemm(
                View::new(x, b, n_in),
                View::transposed(w, n_in, n_out),
                T::zero(),
                y,
            );
            for row in y.chunks_exact_mut(n_out) {
                row.iter_mut().zip(bias).for_each(|(v, &bv)| *v += bv);
            }
        }
        LayerSpec::Relu => relu(x, y),
        LayerSpec::MaxPool => {
            let (_, h, wd) = image_dims(input);
            let ow = wd / 2;
            for s in 0..b {
                let xs = &x[s * in_size..(s + 1) * in_size];
                let ys = &mut y[s * out_size..(s + 1) * out_size];
                let ams = &mut am[s * out_size..(s + 1) * out_size];
                for (r, (yr, ar)) in ys
                    .chunks_exact_mut(ow)
                    .zip(ams.chunks_exact_mut(ow))
                    .enumerate()
                {
                    // output row r covers input rows 2r, 2r+1 of the same channel
                    let (ch, oy) = (r / (h / 2), r % (h / 2));
                    let top = ch * h * wd + 2 * oy * wd;
                    let r0 = &xs[top..top + wd];
                    let r1 = &xs[top + wd..top + 2 * wd];
                    for (ox, ((yo, ao), (a, b))) in yr
                        .iter_mut()
                        .zip(ar.iter_mut())
                        .zip(r0.chunks_exact(2).zip(r1.chunks_exact(2)))
                        .enumerate()
                    {
                        // first maximum in row-major order wins ties
                        let (mut v, mut off) = (a[0], 0);
                        if a[1] > v {
                            (v, off) = (a[1], 1);
                        }
                        if b[0] > v {
                            (v, off) = (b[0], wd);
                        }
                        if b[1] > v {
                            (v, off) = (b[1], wd + 1);
                        }
                        *yo = v;
                        *ao = (top + 2 * ox + off) as u32;
                    }
                }
            }
        }
        LayerSpec::Flatten => y.copy_from_slice(x),
        LayerSpec::Softmax => unreachable!("softmax is applied by the loss"),
    }
}

/// Accumulates into `gw`/`gb`; overwrites every element of `dx`.
/// `x` is the layer input, except for ReLU where it is the output.
#[allow(clippy::too_many_arguments)]
fn backward_layer<T: Real>(
    layer: LayerSpec,
    input: Shape,
    output: Shape,
    b: usize,
    x: &[T],
    argmax: &[u32],
    w: &[T],
    dy: &[T],
    gw: &mut [T],
    gb: &mut [T],
    dx: Option<&mut [T]>,
    scratch: &mut Scratch<T>,
) {
    let in_size = input.size();
    let out_size = output.size();
    match layer {
        LayerSpec::Conv2d {
            kernel,
            c_in,
            c_out,
        } => {
            let (_, h, wd) = image_dims(input);
            let hw = h * wd;
            let ckk = c_in * kernel * kernel;
            let Scratch { cols, dcols, .. } = scratch;
            cols.resize(ckk * hw, T::zero());
            let mut dx = dx;
            if dx.is_some() {
                dcols.resize(ckk * hw, T::zero());
            }
            for s in 0..b {
                im2col(
                    &x[s * in_size..(s + 1) * in_size],
                    c_in,
                    h,
                    wd,
                    kernel,
                    cols,
                );
                let d = &dy[s * out_size..(s + 1) * out_size];
                gemm(
                    View::new(d, c_out, hw),
                    View::transposed(cols, hw, ckk),
                    T::one(),
                    gw,
                );
                for (co, row) in d.chunks_exact(hw).enumerate() {
                    gb[co] += lane_sum(row);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    gemm(
                        View::transposed(w, ckk, c_out),
                        View::new(d, c_out, hw),
                        T::zero(),
                        dcols,
                    );
                    let dxs = &mut dx[s * in_size..(s + 1) * in_size];
                    dxs.fill(T::zero());
                    col2im(dcols, c_in, h, wd, kernel, dxs);
                }
            }
        }
        LayerSpec::Dense { n_in, n_out } => {
            gemm(
                View::transposed(dy, n_out, b),
                View::new(x, b, n_in),
                T::one(),
                gw,
            );
            for row in dy.chunks_exact(n_out) {
                gb.iter_mut().zip(row).for_each(|(g, &v)| *g += v);
            }
            if let Some(dx) = dx {
                gemm(
                    View::new(dy, b, n_out),
                    View::new(w, n_out, n_in),
                    T::zero(),
                    dx,
                );
            }
        }
        LayerSpec::Relu => {
            if let Some(dx) = dx {
                for ((d, &g), &v) in dx.iter_mut().zip(dy).zip(x) {
                    *d = if v > T::zero() { g } else { T::zero() };
                }
            }
        }
        LayerSpec::MaxPool => {
            if let Some(dx) = dx {
                let (_, h, wd) = image_dims(input);
                let ow = wd / 2;
                for s in 0..b {
                    let dxs = &mut dx[s * in_size..(s + 1) * in_size];
                    let (dys, ams) = (
                        &dy[s * out_size..(s + 1) * out_size],
                        &argmax[s * out_size..(s + 1) * out_size],
                    );
                    // windows tile the input: clear each one, then route the gradient
                    for (r, (dr, ar)) in dys.chunks_exact(ow).zip(ams.chunks_exact(ow)).enumerate()
                    {
                        let (ch, oy) = (r / (h / 2), r % (h / 2));
                        let top = ch * h * wd + 2 * oy * wd;
                        dxs[top..top + 2 * wd].fill(T::zero());
                        for (&g, &a) in dr.iter().zip(ar) {
                            dxs[a as usize] = g;
                        }
                    }
                }
            }
        }
        LayerSpec::Flatten => {
            if let Some(dx) = dx {
                dx.copy_from_slice(dy);
            }
        }
        LayerSpec::Softmax => unreachable!("softmax is applied by the loss"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let (c, h, w, k) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| libm::sin(i as f64 * 0.7)).collect();
        let y: Vec<f64> = (0..c * k * k * h * w)
            .map(|i| libm::cos(i as f64 * 0.3))
            .collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, c, h, w, k, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&mut y.clone(), c, h, w, k, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn im2col_centre_tap_is_identity() {
        let (c, h, w, k) = (1, 3, 3, 3);
        let x: Vec<f64> = (1..=9).map(f64::from).collect();
        let mut cols = vec![0.0; 9 * 9];
        im2col(&x, c, h, w, k, &mut cols);
        assert_eq!(&cols[4 * 9..5 * 9], x.as_slice());
        // top-left tap sees the pixel up-left, zero on the border
        assert_eq!(&cols[0..9], &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]);
    }

    #[test]
    fn convolution_matches_direct_loops() {
        for k in [1usize, 3, 5] {
            let (c_in, c_out, h, w) = (2, 3, 5, 7);
            let arch = Architecture {
                input: [c_in, h, w],
                layers: vec![
                    LayerSpec::Conv2d {
                        kernel: k,
                        c_in,
                        c_out,
                    },
                    LayerSpec::Flatten,
                ],
            };
            let mut net = Network::<f64>::new(arch, k as u64).unwrap();
            let nw = c_out * c_in * k * k;
            for (j, b) in net.params_mut()[nw..].iter_mut().enumerate() {
                *b = 0.1 * j as f64;
            }
            let x: Vec<f64> = (0..c_in * h * w)
                .map(|i| libm::sin(i as f64 * 1.3))
                .collect();
            let got = net
                .forward(&Tensor::new(vec![1, c_in, h, w], x.clone()).unwrap())
                .unwrap();
            let (wt, bias) = net.layer_params(0);
            let p = (k / 2) as isize;
            for co in 0..c_out {
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..c_in {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize + ky as isize - p;
                                    let ix = ox as isize + kx as isize - p;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt[((co * c_in + ci) * k + ky) * k + kx]
                                        * x[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        let v = got.data()[(co * h + oy) * w + ox];
                        assert!(
                            (v - acc).abs() < 1e-12,
                            "k={k} ({co},{oy},{ox}): {v} vs {acc}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pooling_takes_first_maximum() {
        let arch = Architecture {
            input: [1, 2, 4],
            layers: vec![LayerSpec::MaxPool, LayerSpec::Flatten],
        };
        let net = Network::<f64>::zeros(arch).unwrap();
        let x = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 3.0, 5.0, 5.0, 3.0, 2.0, 5.0, 4.0],
        )
        .unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[3.0, 5.0]);
        let mut ws = Workspace::new();
        net.run_forward(&mut ws, &x).unwrap();
        assert_eq!(ws.argmax[0], vec![1, 2]);
    }
}
