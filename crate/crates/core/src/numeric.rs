//! Dense matrices and fixed-architecture multilayer perceptrons.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Batched inputs are
//! `(batch, in_dim)` matrices with one sample per row. Backward passes return
//! gradients *summed* over the batch; callers that want a mean fold `1/B` into the
//! output gradient they seed with.
//!
//! Hidden layers always use ReLU. The output layer is either `tanh` (policies) or
//! linear (critic logits).

use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};

/// Row-major dense matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
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
            return Err(Error::Config(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFault("non-finite matrix entry".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally sized rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(dim_mismatch("matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates the columns of `self` and `other` row by row.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(dim_mismatch("hcat rows", self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copies columns `start..start + len` into a new matrix.
    pub fn columns(&self, start: usize, len: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Matrix {
            rows: self.rows,
            cols: len,
            data,
        }
    }
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`.
fn gemm_abt(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    debug_assert_eq!(a.cols, b.cols);
    debug_assert_eq!((c.rows, c.cols), (a.rows, b.rows));
    let (m, k, n) = (a.rows, a.cols, b.rows);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides describe the row-major buffers of the given shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = aᵀ · b` with `a: k×m`, `b: k×n`.
fn gemm_atb(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    debug_assert_eq!(a.rows, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    let (m, k, n) = (a.cols, a.rows, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides describe the row-major buffers of the given shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            1,
            m as isize,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a · b` with `a: m×k`, `b: k×n`.
fn gemm_ab(a: &Matrix, b: &Matrix, c: &mut Matrix) {
    debug_assert_eq!(a.cols, b.rows);
    debug_assert_eq!((c.rows, c.cols), (a.rows, b.cols));
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides describe the row-major buffers of the given shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            n as isize,
            1,
            0.0,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Activation applied by the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Tanh,
    Linear,
}

/// One affine map: `weight` has shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }
}

/// Parameters of a ReLU multilayer perceptron. The same type doubles as the
/// container for parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Layer>,
    output: OutputActivation,
}

impl NetworkParams {
    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>, output: OutputActivation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(dim_mismatch(
                    &format!("bias of layer {i}"),
                    layer.out_dim(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].out_dim() != layer.in_dim() {
                return Err(dim_mismatch(
                    &format!("input of layer {i}"),
                    layers[i - 1].out_dim(),
                    layer.in_dim(),
                ));
            }
        }
        Ok(Self { layers, output })
    }

    /// All-zero network with layer widths `sizes = [in, hidden.., out]`.
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("network sizes need input and output".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weight: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self::from_layers(layers, output)
    }

    /// Weights and biases drawn uniformly from `±1/√fan_in`.
    pub fn init_uniform<R: Rng + ?Sized>(
        sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(sizes, output)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.in_dim() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in &mut layer.bias {
                *b = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer widths `[in, hidden.., out]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &NetworkParams) -> bool {
        self.output == other.output && self.sizes() == other.sizes()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.sizes(), self.output).expect("shape already validated")
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Flattened parameters: for each layer, weights row-major then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(dim_mismatch("flat parameters", self.num_params(), flat.len()));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.data.len();
            l.weight.data.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        self.for_each_mut(|v| *v *= c);
    }

    /// `self += c · other`. Panics if the shapes differ.
    pub fn add_scaled(&mut self, other: &NetworkParams, c: f64) {
        assert!(self.same_shape(other), "add_scaled on mismatched networks");
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.data.iter_mut().zip(&b.weight.data) {
                *x += c * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += c * y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for l in &self.layers {
            for v in l.weight.data.iter().chain(&l.bias) {
                m = m.max(v.abs());
            }
        }
        m
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            l.weight.data.iter_mut().for_each(&mut f);
            l.bias.iter_mut().for_each(&mut f);
        }
    }
}

/// Intermediate values of a forward pass, one row per sample.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("at least one layer")
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    pub fn post_activations(&self) -> &[Matrix] {
        &self.post
    }

    pub fn batch(&self) -> usize {
        self.input.rows
    }
}

/// Largest `f64` below one; saturated `tanh` is held here so outputs stay strictly inside (−1, 1).
const TANH_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

/// Forward pass over a batch of inputs.
pub fn forward_batch(params: &NetworkParams, input: &Matrix) -> Result<ForwardCache> {
    if input.cols != params.input_dim() {
        return Err(dim_mismatch("network input", params.input_dim(), input.cols));
    }
    let n_layers = params.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post: Vec<Matrix> = Vec::with_capacity(n_layers);
    for (i, layer) in params.layers.iter().enumerate() {
        let x = if i == 0 { input } else { &post[i - 1] };
        let mut z = Matrix::zeros(input.rows, layer.out_dim());
        gemm_abt(x, &layer.weight, &mut z);
        for r in 0..z.rows {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let mut y = z.clone();
        if i + 1 < n_layers {
            y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        } else if params.output == OutputActivation::Tanh {
            y.data.iter_mut().for_each(|v| *v = v.tanh().clamp(-TANH_LIMIT, TANH_LIMIT));
        }
        pre.push(z);
        post.push(y);
    }
    Ok(ForwardCache {
        input: input.clone(),
        pre,
        post,
    })
}

/// Forward pass for a single input vector.
pub fn mlp_forward(params: &NetworkParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let cache = forward_batch(params, &Matrix::row_vector(input))?;
    Ok((cache.output().data.clone(), cache))
}

fn check_cache(params: &NetworkParams, cache: &ForwardCache) -> Result<()> {
    if cache.pre.len() != params.layers.len() {
        return Err(dim_mismatch(
            "forward cache layers",
            params.layers.len(),
            cache.pre.len(),
        ));
    }
    if cache.input.cols != params.input_dim() {
        return Err(dim_mismatch("forward cache input", params.input_dim(), cache.input.cols));
    }
    for (layer, z) in params.layers.iter().zip(&cache.pre) {
        if z.cols != layer.out_dim() {
            return Err(dim_mismatch("forward cache layer width", layer.out_dim(), z.cols));
        }
    }
    Ok(())
}

fn backward_impl(
    params: &NetworkParams,
    cache: &ForwardCache,
    output_grad: &Matrix,
    want_params: bool,
) -> Result<(Option<NetworkParams>, Matrix)> {
    check_cache(params, cache)?;
    if output_grad.rows != cache.batch() || output_grad.cols != params.output_dim() {
        return Err(Error::Config(format!(
            "output gradient {}x{} does not match batch {} x output {}",
            output_grad.rows,
            output_grad.cols,
            cache.batch(),
            params.output_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut grads = want_params.then(|| params.zeros_like());

    let mut delta = output_grad.clone();
    if params.output == OutputActivation::Tanh {
        for (d, y) in delta.data.iter_mut().zip(&cache.post[n_layers - 1].data) {
            *d *= 1.0 - y * y;
        }
    }
    for i in (0..n_layers).rev() {
        let layer = &params.layers[i];
        let x = if i == 0 { &cache.input } else { &cache.post[i - 1] };
        if let Some(g) = grads.as_mut() {
            let gl = &mut g.layers[i];
            gemm_atb(&delta, x, &mut gl.weight);
            for r in 0..delta.rows {
                for (b, d) in gl.bias.iter_mut().zip(delta.row(r)) {
                    *b += d;
                }
            }
        }
        let mut dx = Matrix::zeros(delta.rows, layer.in_dim());
        gemm_ab(&delta, &layer.weight, &mut dx);
        if i > 0 {
            for (d, z) in dx.data.iter_mut().zip(&cache.pre[i - 1].data) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        delta = dx;
    }
    Ok((grads, delta))
}

/// Reverse-mode pass over a batch: gradients of `Σ_rows output·output_grad` with
/// respect to all parameters (summed over rows) and to every input row.
pub fn backward_batch(
    params: &NetworkParams,
    cache: &ForwardCache,
    output_grad: &Matrix,
) -> Result<(NetworkParams, Matrix)> {
    let (g, dx) = backward_impl(params, cache, output_grad, true)?;
    Ok((g.expect("requested parameter gradients"), dx))
}

/// Like [`backward_batch`] but skips the parameter gradients.
pub fn input_gradient_batch(
    params: &NetworkParams,
    cache: &ForwardCache,
    output_grad: &Matrix,
) -> Result<Matrix> {
    Ok(backward_impl(params, cache, output_grad, false)?.1)
}

/// Single-sample reverse-mode pass.
pub fn mlp_backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    output_grad: &[f64],
) -> Result<(NetworkParams, Vec<f64>)> {
    let (g, dx) = backward_batch(params, cache, &Matrix::row_vector(output_grad))?;
    Ok((g, dx.data))
}

/// Plain gradient descent step `params -= learning_rate · grads`.
///
/// A non-finite gradient aborts the step and leaves `params` untouched.
pub fn sgd_apply(params: &mut NetworkParams, grads: &NetworkParams, learning_rate: f64) -> Result<()> {
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
    }
    if !params.same_shape(grads) {
        return Err(Error::Config("gradient shape does not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NumericalFault("non-finite gradient entry".into()));
    }
    params.add_scaled(grads, -learning_rate);
    Ok(())
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(like: &NetworkParams) -> Self {
        let n = like.num_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Bias-corrected Adam descent step on `grads`; same error contract as [`sgd_apply`].
    pub fn apply(&mut self, params: &mut NetworkParams, grads: &NetworkParams, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !params.same_shape(grads) || grads.num_params() != self.m.len() {
            return Err(Error::Config("gradient shape does not match parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NumericalFault("non-finite gradient entry".into()));
        }
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut i = 0;
        for (pl, gl) in params.layers.iter_mut().zip(&grads.layers) {
            let pairs = pl.weight.data.iter_mut().zip(&gl.weight.data).chain(pl.bias.iter_mut().zip(&gl.bias));
            for (p, g) in pairs {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                *p -= learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
                i += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

/// An optimizer together with whatever state it carries between steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, like: &NetworkParams) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => Self::Adam(Adam::new(like)),
        }
    }

    /// One descent step on `grads`.
    pub fn apply(&mut self, params: &mut NetworkParams, grads: &NetworkParams, learning_rate: f64) -> Result<()> {
        match self {
            Self::Sgd => sgd_apply(params, grads, learning_rate),
            Self::Adam(a) => a.apply(params, grads, learning_rate),
        }
    }
}
