//! Cross-attentive local encoder.
//!
//! Each group's vector starts as the per-dimension max over its token
//! embeddings and is then refined by `L` single-head cross-attention layers
//! whose keys and values come from the group's own tokens only:
//!
//! ```text
//! q_j = LN_q(W_Q p_j)      k_i = LN_k(W_K e_i)      v_i = LN_v(W_V e_i)
//! a_ji = softmax_{i in g_j}(q_j . k_i / sqrt(d))
//! z_j = sum_i a_ji v_i
//! p_j <- p_j + W_O z_j
//! ```
//!
//! Token-side inputs stay at the embeddings `e_i` in every layer, and no
//! positional information is added, so permuting tokens inside a group does
//! not change that group's output.

mod io;
mod matrix;
mod pool;

pub use io::{
    decode_checkpoint, decode_group_embeddings, encode_checkpoint, encode_group_embeddings, read_checkpoint,
    read_group_embeddings, write_checkpoint, write_group_embeddings, CHECKPOINT_VERSION, EMBEDDINGS_VERSION,
};
pub use matrix::{axpy, dot, Matrix};
pub use pool::{pool_aggregate, Pooling};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmenter::Segmentation;

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Learnable scale and shift of one layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn identity(d: usize) -> Self {
        LayerNormParams {
            gamma: vec![T::one(); d],
            beta: vec![T::zero(); d],
        }
    }

    fn zeros(d: usize) -> Self {
        LayerNormParams {
            gamma: vec![T::zero(); d],
            beta: vec![T::zero(); d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaleLayer<T> {
    pub w_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub w_o: Matrix<T>,
    pub ln_q: LayerNormParams<T>,
    pub ln_k: LayerNormParams<T>,
    pub ln_v: LayerNormParams<T>,
}

impl<T: Scalar> CaleLayer<T> {
    fn zeros(d: usize) -> Self {
        CaleLayer {
            w_q: Matrix::zeros(d, d),
            w_k: Matrix::zeros(d, d),
            w_v: Matrix::zeros(d, d),
            w_o: Matrix::zeros(d, d),
            ln_q: LayerNormParams::zeros(d),
            ln_k: LayerNormParams::zeros(d),
            ln_v: LayerNormParams::zeros(d),
        }
    }

    /// All tensors of the layer in a fixed order, for generic traversal.
    pub fn tensors(&self) -> [&[T]; 10] {
        [
            self.w_q.as_slice(),
            self.w_k.as_slice(),
            self.w_v.as_slice(),
            self.w_o.as_slice(),
            &self.ln_q.gamma,
            &self.ln_q.beta,
            &self.ln_k.gamma,
            &self.ln_k.beta,
            &self.ln_v.gamma,
            &self.ln_v.beta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 10] {
        [
            self.w_q.as_mut_slice(),
            self.w_k.as_mut_slice(),
            self.w_v.as_mut_slice(),
            self.w_o.as_mut_slice(),
            &mut self.ln_q.gamma,
            &mut self.ln_q.beta,
            &mut self.ln_k.gamma,
            &mut self.ln_k.beta,
            &mut self.ln_v.gamma,
            &mut self.ln_v.beta,
        ]
    }
}

pub const LAYER_TENSOR_NAMES: [&str; 10] = [
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "ln_q.gamma",
    "ln_q.beta",
    "ln_k.gamma",
    "ln_k.beta",
    "ln_v.gamma",
    "ln_v.beta",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CaleParams<T> {
    /// `K x d` token embedding table.
    pub embedding: Matrix<T>,
    pub layers: Vec<CaleLayer<T>>,
    /// Layer-norm variance stabilizer.
    pub eps: T,
}

impl<T: Scalar> CaleParams<T> {
    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.layers.is_empty() {
            return Err(Error::invalid("encoder needs d >= 1 and at least one layer"));
        }
        if !(self.eps > T::zero() && self.eps.is_finite()) {
            return Err(Error::invalid("layer-norm eps must be positive"));
        }
        if !self.embedding.is_finite() {
            return Err(Error::invalid("embedding table has non-finite entries"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for m in [&layer.w_q, &layer.w_k, &layer.w_v, &layer.w_o] {
                if m.rows() != d || m.cols() != d {
                    return Err(Error::invalid(format!("layer {l}: projection is not {d}x{d}")));
                }
            }
            for (name, t) in LAYER_TENSOR_NAMES.iter().zip(layer.tensors()) {
                if t.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid(format!("layer {l}: {name} has non-finite entries")));
                }
            }
            for ln in [&layer.ln_q, &layer.ln_k, &layer.ln_v] {
                if ln.gamma.len() != d || ln.beta.len() != d {
                    return Err(Error::invalid(format!(
                        "layer {l}: layer-norm parameters are not length {d}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Random parameters: every matrix entry is drawn from `N(0, (scale/sqrt d)^2)`,
/// layer norms start at `gamma = 1, beta = 0`.
pub fn init_params<T: Scalar>(
    vocab_size: usize,
    d: usize,
    layers: usize,
    seed: u64,
    init_scale: f64,
) -> Result<CaleParams<T>> {
    if vocab_size < 1 || d < 1 || layers < 1 {
        return Err(Error::invalid(format!(
            "encoder dimensions must be positive: K={vocab_size}, d={d}, L={layers}"
        )));
    }
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::invalid(format!(
            "init scale must be non-negative, got {init_scale}"
        )));
    }
    let std = init_scale / (d as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| T::of(normal.sample(&mut rng))).collect(),
        )
    };
    let embedding = draw(vocab_size, d);
    let layers = (0..layers)
        .map(|_| CaleLayer {
            w_q: draw(d, d),
            w_k: draw(d, d),
            w_v: draw(d, d),
            w_o: draw(d, d),
            ln_q: LayerNormParams::identity(d),
            ln_k: LayerNormParams::identity(d),
            ln_v: LayerNormParams::identity(d),
        })
        .collect();
    Ok(CaleParams {
        embedding,
        layers,
        eps: T::of(DEFAULT_LN_EPS),
    })
}

/// Gather the embedding rows of `tokens` into an `N x d` matrix.
pub fn embed<T: Scalar>(tokens: &[u32], params: &CaleParams<T>) -> Result<Matrix<T>> {
    let k = params.vocab_size();
    let d = params.dim();
    let mut out = Matrix::zeros(tokens.len(), d);
    for (i, &t) in tokens.iter().enumerate() {
        if t as usize >= k {
            return Err(Error::IdOutOfRange { id: t, vocab_size: k });
        }
        out.row_mut(i).copy_from_slice(params.embedding.row(t as usize));
    }
    Ok(out)
}

/// Per-dimension max over each group's rows, plus the winning row index for
/// every (group, dimension). Ties go to the earliest row.
fn max_pool_with_argmax<T: Scalar>(emb: &Matrix<T>, segm: &Segmentation) -> (Matrix<T>, Vec<usize>) {
    let d = emb.cols();
    let mut out = Matrix::zeros(segm.num_groups(), d);
    let mut argmax = vec![0; segm.num_groups() * d];
    for (j, g) in segm.groups().enumerate() {
        let row = out.row_mut(j);
        row.copy_from_slice(emb.row(g.start));
        let arg = &mut argmax[j * d..(j + 1) * d];
        arg.fill(g.start);
        for i in g.start + 1..g.end {
            for (c, &x) in emb.row(i).iter().enumerate() {
                if x > row[c] {
                    row[c] = x;
                    arg[c] = i;
                }
            }
        }
    }
    (out, argmax)
}

/// Max-pooled initial group vectors.
pub fn init_queries<T: Scalar>(emb: &Matrix<T>, segm: &Segmentation) -> Result<Matrix<T>> {
    segm.check_len(emb.rows())?;
    Ok(max_pool_with_argmax(emb, segm).0)
}

/// Output vectors of one encoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEmbeddings<T> {
    /// Utterance / segmentation identifier.
    pub id: String,
    /// Number of cross-attention layers applied (0 for plain pooling).
    pub layers: usize,
    /// `M x d`
    pub vectors: Matrix<T>,
}

/// Layer normalization of `a`; writes the standardized vector and the
/// affine output, returns `1 / sqrt(var + eps)`.
fn layer_norm<T: Scalar>(a: &[T], ln: &LayerNormParams<T>, eps: T, x_hat: &mut [T], y: &mut [T]) -> T {
    let n = T::of(a.len() as f64);
    let mean = a.iter().copied().sum::<T>() / n;
    let var = a.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + eps).sqrt();
    for c in 0..a.len() {
        x_hat[c] = (a[c] - mean) * inv_std;
        y[c] = ln.gamma[c] * x_hat[c] + ln.beta[c];
    }
    inv_std
}

/// Backward through [`layer_norm`]: accumulates parameter gradients and
/// writes the gradient with respect to the input into `da`.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    x_hat: &[T],
    inv_std: T,
    ln: &LayerNormParams<T>,
    grad: &mut LayerNormParams<T>,
    da: &mut [T],
) {
    let n = T::of(dy.len() as f64);
    let mut mean_dxh = T::zero();
    let mut mean_dxh_xh = T::zero();
    for c in 0..dy.len() {
        grad.gamma[c] += dy[c] * x_hat[c];
        grad.beta[c] += dy[c];
        let dxh = dy[c] * ln.gamma[c];
        mean_dxh += dxh;
        mean_dxh_xh += dxh * x_hat[c];
    }
    mean_dxh /= n;
    mean_dxh_xh /= n;
    for c in 0..dy.len() {
        let dxh = dy[c] * ln.gamma[c];
        da[c] = inv_std * (dxh - mean_dxh - x_hat[c] * mean_dxh_xh);
    }
}

/// Projected-and-normalized vectors for a set of inputs.
#[derive(Debug, Clone)]
struct Normalized<T> {
    x_hat: Matrix<T>,
    inv_std: Vec<T>,
    out: Matrix<T>,
}

impl<T: Scalar> Normalized<T> {
    fn compute(inputs: &Matrix<T>, w: &Matrix<T>, ln: &LayerNormParams<T>, eps: T) -> Self {
        let (n, d) = (inputs.rows(), w.rows());
        let mut x_hat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        let mut pre = vec![T::zero(); d];
        for i in 0..n {
            w.matvec(inputs.row(i), &mut pre);
            let mut y = vec![T::zero(); d];
            inv_std.push(layer_norm(&pre, ln, eps, x_hat.row_mut(i), &mut y));
            out.row_mut(i).copy_from_slice(&y);
        }
        Normalized { x_hat, inv_std, out }
    }
}

/// Intermediates of one layer kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerState<T> {
    p_in: Matrix<T>,
    q: Normalized<T>,
    k: Normalized<T>,
    v: Normalized<T>,
    /// Attention weight of every token within its own group.
    alpha: Vec<T>,
    z: Matrix<T>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState<T> {
    tokens: Vec<u32>,
    segm: Segmentation,
    emb: Matrix<T>,
    argmax: Vec<usize>,
    layers: Vec<LayerState<T>>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    pub embeddings: GroupEmbeddings<T>,
    pub state: Option<ForwardState<T>>,
}

/// Numerically stable softmax of `scores` in place.
fn softmax_in_place<T: Scalar>(scores: &mut [T]) {
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Encode one sequence. With `retain`, the intermediates needed by
/// [`backward`] are kept in the output.
pub fn forward<T: Scalar>(
    params: &CaleParams<T>,
    tokens: &[u32],
    segm: &Segmentation,
    retain: bool,
) -> Result<EncoderOutput<T>> {
    params.validate()?;
    segm.check_len(tokens.len())?;
    let d = params.dim();
    let emb = embed(tokens, params)?;
    let (mut p, argmax) = max_pool_with_argmax(&emb, segm);
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut states = Vec::new();

    for layer in &params.layers {
        let q = Normalized::compute(&p, &layer.w_q, &layer.ln_q, params.eps);
        let k = Normalized::compute(&emb, &layer.w_k, &layer.ln_k, params.eps);
        let v = Normalized::compute(&emb, &layer.w_v, &layer.ln_v, params.eps);
        let mut alpha = vec![T::zero(); tokens.len()];
        let mut z = Matrix::zeros(p.rows(), d);
        for (j, g) in segm.groups().enumerate() {
            let a = &mut alpha[g.clone()];
            for (slot, i) in a.iter_mut().zip(g.clone()) {
                *slot = dot(q.out.row(j), k.out.row(i)) * scale;
            }
            softmax_in_place(a);
            let zj = z.row_mut(j);
            for (&w, i) in a.iter().zip(g) {
                axpy(w, v.out.row(i), zj);
            }
        }
        let mut p_next = p.clone();
        let mut delta = vec![T::zero(); d];
        for j in 0..p.rows() {
            layer.w_o.matvec(z.row(j), &mut delta);
            for (x, &dx) in p_next.row_mut(j).iter_mut().zip(&delta) {
                *x += dx;
            }
        }
        if retain {
            states.push(LayerState {
                p_in: p,
                q,
                k,
                v,
                alpha,
                z,
            });
        }
        p = p_next;
    }

    let embeddings = GroupEmbeddings {
        id: String::new(),
        layers: params.num_layers(),
        vectors: p,
    };
    let state = retain.then(|| ForwardState {
        tokens: tokens.to_vec(),
        segm: segm.clone(),
        emb,
        argmax,
        layers: states,
    });
    Ok(EncoderOutput { embeddings, state })
}

/// Gradients with the same layout as [`CaleParams`]. Embedding rows of
/// tokens absent from the sequence stay exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CaleGrads<T> {
    pub embedding: Matrix<T>,
    pub layers: Vec<CaleLayer<T>>,
}

impl<T: Scalar> CaleGrads<T> {
    pub fn zeros_like(params: &CaleParams<T>) -> Self {
        CaleGrads {
            embedding: Matrix::zeros(params.vocab_size(), params.dim()),
            layers: (0..params.num_layers())
                .map(|_| CaleLayer::zeros(params.dim()))
                .collect(),
        }
    }

    /// Sum another gradient into this one.
    pub fn accumulate(&mut self, other: &CaleGrads<T>) {
        for (a, b) in self.embedding.as_mut_slice().iter_mut().zip(other.embedding.as_slice()) {
            *a += *b;
        }
        for (la, lb) in self.layers.iter_mut().zip(&other.layers) {
            for (ta, tb) in la.tensors_mut().into_iter().zip(lb.tensors()) {
                for (a, b) in ta.iter_mut().zip(tb) {
                    *a += *b;
                }
            }
        }
    }
}

/// Exact gradients of `sum_j <upstream_j, p_j>` with respect to every
/// parameter, using the state retained by [`forward`].
pub fn backward<T: Scalar>(
    params: &CaleParams<T>,
    output: &EncoderOutput<T>,
    upstream: &Matrix<T>,
) -> Result<CaleGrads<T>> {
    let state = output
        .state
        .as_ref()
        .ok_or_else(|| Error::invalid("backward needs a forward pass run with retained state"))?;
    let d = params.dim();
    let m = state.segm.num_groups();
    if upstream.rows() != m || upstream.cols() != d {
        return Err(Error::invalid(format!(
            "upstream gradient is {}x{}, expected {m}x{d}",
            upstream.rows(),
            upstream.cols()
        )));
    }
    if state.layers.len() != params.num_layers() {
        return Err(Error::invalid(
            "retained state does not match the parameter layer count",
        ));
    }

    let n = state.tokens.len();
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut grads = CaleGrads::zeros_like(params);
    let mut dp = upstream.clone();
    let mut de = Matrix::<T>::zeros(n, d);

    let mut dz = vec![T::zero(); d];
    let mut dq = vec![T::zero(); d];
    let mut da = vec![T::zero(); d];
    for (l, (layer, st)) in params.layers.iter().zip(&state.layers).enumerate().rev() {
        let g = &mut grads.layers[l];
        let mut dk = Matrix::<T>::zeros(n, d);
        let mut dv = Matrix::<T>::zeros(n, d);
        let mut dp_prev = dp.clone();

        for (j, grp) in state.segm.groups().enumerate() {
            let dpj = dp.row(j);
            g.w_o.add_outer(dpj, st.z.row(j));
            dz.fill(T::zero());
            layer.w_o.matvec_t_acc(dpj, &mut dz);

            let alpha = &st.alpha[grp.clone()];
            let dalpha: Vec<T> = grp.clone().map(|i| dot(&dz, st.v.out.row(i))).collect();
            let mean = alpha.iter().zip(&dalpha).fold(T::zero(), |acc, (&a, &b)| acc + a * b);

            dq.fill(T::zero());
            let qj = st.q.out.row(j);
            for ((&a, &dai), i) in alpha.iter().zip(&dalpha).zip(grp) {
                axpy(a, &dz, dv.row_mut(i));
                let ds = a * (dai - mean) * scale;
                axpy(ds, st.k.out.row(i), &mut dq);
                axpy(ds, qj, dk.row_mut(i));
            }

            layer_norm_backward(
                &dq,
                st.q.x_hat.row(j),
                st.q.inv_std[j],
                &layer.ln_q,
                &mut g.ln_q,
                &mut da,
            );
            g.w_q.add_outer(&da, st.p_in.row(j));
            layer.w_q.matvec_t_acc(&da, dp_prev.row_mut(j));
        }

        for i in 0..n {
            let e_i = state.emb.row(i);
            layer_norm_backward(
                dk.row(i),
                st.k.x_hat.row(i),
                st.k.inv_std[i],
                &layer.ln_k,
                &mut g.ln_k,
                &mut da,
            );
            g.w_k.add_outer(&da, e_i);
            layer.w_k.matvec_t_acc(&da, de.row_mut(i));
            layer_norm_backward(
                dv.row(i),
                st.v.x_hat.row(i),
                st.v.inv_std[i],
                &layer.ln_v,
                &mut g.ln_v,
                &mut da,
            );
            g.w_v.add_outer(&da, e_i);
            layer.w_v.matvec_t_acc(&da, de.row_mut(i));
        }
        dp = dp_prev;
    }

    // max pooling routes each dimension's gradient to its winning token
    for j in 0..m {
        for c in 0..d {
            let i = state.argmax[j * d + c];
            de[(i, c)] += dp[(j, c)];
        }
    }
    for (i, &t) in state.tokens.iter().enumerate() {
        axpy(T::one(), de.row(i), grads.embedding.row_mut(t as usize));
    }
    Ok(grads)
}
