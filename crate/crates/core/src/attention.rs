//! Dense, cross and cluster-sparse multi-head attention.
//!
//! All variants share one kernel: a set of *groups*, each pairing a list of
//! query rows with a list of key/value rows. Dense and cross attention use a
//! single group holding every row; cluster-sparse attention uses one group per
//! K-Means cluster, so a token never sees keys outside its own cluster and the
//! softmax is normalized inside the cluster only.

use std::sync::Arc;

use rand::Rng;

use crate::clustering::{choose_cluster_count, kmeans_fit, ClusterAssignment, KMeansConfig};
use crate::error::{dim_err, input_err, Result};
use crate::harness::flops;
use crate::numeric::{axpy, dot, softmax_in_place, ParamId, ParamStore, Tape, TapeFunction, Tensor, Var};

/// Logit scaling used inside clusters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SparseAttentionFlags {
    /// Divide logits by `√d_k`, as dense attention does.
    pub scaled_logits: bool,
    /// Use raw `q·k` logits inside clusters. Requires `scaled_logits = false`.
    pub raw_logits: bool,
}

impl Default for SparseAttentionFlags {
    fn default() -> Self {
        Self {
            scaled_logits: true,
            raw_logits: false,
        }
    }
}

impl SparseAttentionFlags {
    pub fn validate(&self) -> Result<()> {
        if self.raw_logits && self.scaled_logits {
            return Err(input_err!("raw_logits requires scaled_logits = false"));
        }
        Ok(())
    }

    pub fn scale(&self, d_k: usize) -> f64 {
        if self.scaled_logits {
            1.0 / (d_k as f64).sqrt()
        } else {
            1.0
        }
    }
}

/// Which query rows attend to which key/value rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Groups {
    /// Every query sees every key.
    Full,
    /// Self-attention restricted to clusters; each entry lists token indices.
    Clusters(Arc<Vec<Vec<usize>>>),
}

impl Groups {
    pub fn from_assignment(ca: &ClusterAssignment) -> Self {
        Groups::Clusters(Arc::new(ca.members()))
    }

    fn for_each<F: FnMut(&[usize], &[usize])>(&self, nq: usize, nkv: usize, mut f: F) {
        match self {
            Groups::Full => {
                let q: Vec<usize> = (0..nq).collect();
                let k: Vec<usize> = (0..nkv).collect();
                f(&q, &k);
            }
            Groups::Clusters(members) => {
                for m in members.iter() {
                    f(m, m);
                }
            }
        }
    }
}

/// Scratch buffers reused across groups and heads. Capacity only grows, so
/// [`AttentionWorkspace::bytes`] is the high-water mark.
#[derive(Debug, Default)]
pub struct AttentionWorkspace {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    scores: Vec<f64>,
    out: Vec<f64>,
}

impl AttentionWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> usize {
        8 * (self.q.capacity()
            + self.k.capacity()
            + self.v.capacity()
            + self.scores.capacity()
            + self.out.capacity())
    }
}

fn gather(src: &[f64], width: usize, col: usize, dk: usize, rows: &[usize], dst: &mut Vec<f64>) {
    dst.clear();
    for &r in rows {
        dst.extend_from_slice(&src[r * width + col..r * width + col + dk]);
    }
}

/// `softmax(q·kᵀ·scale)` for gathered blocks, written to `scores` (`nq × nk`).
fn block_probs(q: &[f64], k: &[f64], nq: usize, nk: usize, dk: usize, scale: f64, scores: &mut Vec<f64>) {
    scores.clear();
    scores.resize(nq * nk, 0.0);
    for i in 0..nq {
        let qi = &q[i * dk..(i + 1) * dk];
        let row = &mut scores[i * nk..(i + 1) * nk];
        for (j, s) in row.iter_mut().enumerate() {
            *s = dot(qi, &k[j * dk..(j + 1) * dk]) * scale;
        }
        softmax_in_place(row);
    }
}

/// Multi-head grouped attention on row-major `[n × heads·dk]` inputs.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grouped_attention(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    nq: usize,
    nkv: usize,
    heads: usize,
    dk: usize,
    scale: f64,
    groups: &Groups,
    ws: &mut AttentionWorkspace,
) -> Vec<f64> {
    let width = heads * dk;
    let mut out = vec![0.0; nq * width];
    for h in 0..heads {
        let col = h * dk;
        groups.for_each(nq, nkv, |qi, ki| {
            gather(q, width, col, dk, qi, &mut ws.q);
            gather(k, width, col, dk, ki, &mut ws.k);
            gather(v, width, col, dk, ki, &mut ws.v);
            block_probs(&ws.q, &ws.k, qi.len(), ki.len(), dk, scale, &mut ws.scores);
            ws.out.clear();
            ws.out.resize(qi.len() * dk, 0.0);
            for i in 0..qi.len() {
                let o = &mut ws.out[i * dk..(i + 1) * dk];
                for j in 0..ki.len() {
                    axpy(ws.scores[i * ki.len() + j], &ws.v[j * dk..(j + 1) * dk], o);
                }
            }
            for (i, &r) in qi.iter().enumerate() {
                out[r * width + col..r * width + col + dk]
                    .copy_from_slice(&ws.out[i * dk..(i + 1) * dk]);
            }
        });
    }
    out
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize)> {
    let (nq, dk) = q.as_matrix()?;
    let (nk, dk2) = k.as_matrix()?;
    let (nv, dv) = v.as_matrix()?;
    if dk != dk2 || dk != dv || nk != nv {
        return Err(dim_err!(
            "attention shapes disagree: Q {nq}x{dk}, K {nk}x{dk2}, V {nv}x{dv}"
        ));
    }
    Ok((nq, nk, dk))
}

/// `softmax(Q·Kᵀ/√d_k)·V` for a single head.
pub fn dense_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (nq, nk, dk) = check_qkv(q, k, v)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut ws = AttentionWorkspace::new();
    let out = grouped_attention(q.data(), k.data(), v.data(), nq, nk, 1, dk, scale, &Groups::Full, &mut ws);
    Tensor::new(vec![nq, dk], out)
}

/// Single-head attention restricted to clusters.
pub fn cluster_sparse_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    ca: &ClusterAssignment,
    flags: SparseAttentionFlags,
) -> Result<Tensor> {
    flags.validate()?;
    let (n, nk, dk) = check_qkv(q, k, v)?;
    if n != nk || ca.len() != n {
        return Err(dim_err!(
            "cluster assignment covers {} tokens, attention has {n} queries and {nk} keys",
            ca.len()
        ));
    }
    let mut ws = AttentionWorkspace::new();
    let out = grouped_attention(
        q.data(),
        k.data(),
        v.data(),
        n,
        n,
        1,
        dk,
        flags.scale(dk),
        &Groups::from_assignment(ca),
        &mut ws,
    );
    Tensor::new(vec![n, dk], out)
}

/// Full `n_q × n_kv` attention weight matrix; zero outside each query's group.
pub fn attention_weights(q: &Tensor, k: &Tensor, groups: &Groups, scale: f64) -> Result<Tensor> {
    let (nq, dk) = q.as_matrix()?;
    let (nk, dk2) = k.as_matrix()?;
    if dk != dk2 {
        return Err(dim_err!("Q width {dk} vs K width {dk2}"));
    }
    let mut w = vec![0.0; nq * nk];
    let mut ws = AttentionWorkspace::new();
    groups.for_each(nq, nk, |qi, ki| {
        gather(q.data(), dk, 0, dk, qi, &mut ws.q);
        gather(k.data(), dk, 0, dk, ki, &mut ws.k);
        block_probs(&ws.q, &ws.k, qi.len(), ki.len(), dk, scale, &mut ws.scores);
        for (a, &r) in qi.iter().enumerate() {
            for (b, &c) in ki.iter().enumerate() {
                w[r * nk + c] = ws.scores[a * ki.len() + b];
            }
        }
    });
    Tensor::new(vec![nq, nk], w)
}

/// Tape node for [`grouped_attention`]; inputs are `[q, k, v]`.
#[derive(Debug)]
struct GroupedAttentionFn {
    heads: usize,
    dk: usize,
    scale: f64,
    groups: Groups,
}

impl TapeFunction for GroupedAttentionFn {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64], grads: &mut [Vec<f64>]) {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let (nq, nkv) = (q.rows(), k.rows());
        let (heads, dk, scale) = (self.heads, self.dk, self.scale);
        let width = heads * dk;
        let (mut gq, mut gk, mut gv) = (vec![0.0; nq * width], vec![0.0; nkv * width], vec![0.0; nkv * width]);
        let mut ws = AttentionWorkspace::new();
        let mut go = Vec::new();
        for h in 0..heads {
            let col = h * dk;
            self.groups.for_each(nq, nkv, |qi, ki| {
                let (a, b) = (qi.len(), ki.len());
                gather(q.data(), width, col, dk, qi, &mut ws.q);
                gather(k.data(), width, col, dk, ki, &mut ws.k);
                gather(v.data(), width, col, dk, ki, &mut ws.v);
                gather(grad_out, width, col, dk, qi, &mut go);
                block_probs(&ws.q, &ws.k, a, b, dk, scale, &mut ws.scores);
                let p = &ws.scores;
                // dV_j = Σ_i P_ij dO_i ; dP_ij = dO_i · V_j
                let mut ds = vec![0.0; a * b];
                for i in 0..a {
                    let goi = &go[i * dk..(i + 1) * dk];
                    for j in 0..b {
                        let pij = p[i * b + j];
                        let r = ki[j] * width + col;
                        axpy(pij, goi, &mut gv[r..r + dk]);
                        ds[i * b + j] = dot(goi, &ws.v[j * dk..(j + 1) * dk]);
                    }
                    let row_p = &p[i * b..(i + 1) * b];
                    let inner = dot(row_p, &ds[i * b..(i + 1) * b]);
                    for j in 0..b {
                        ds[i * b + j] = row_p[j] * (ds[i * b + j] - inner) * scale;
                    }
                }
                for i in 0..a {
                    let rq = qi[i] * width + col;
                    for j in 0..b {
                        let s = ds[i * b + j];
                        if s == 0.0 {
                            continue;
                        }
                        axpy(s, &ws.k[j * dk..(j + 1) * dk], &mut gq[rq..rq + dk]);
                        let rk = ki[j] * width + col;
                        axpy(s, &ws.q[i * dk..(i + 1) * dk], &mut gk[rk..rk + dk]);
                    }
                }
            });
        }
        for (dst, src) in grads.iter_mut().zip([gq, gk, gv]) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

/// Records grouped multi-head attention on the tape.
pub fn attention_on_tape(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: f64,
    groups: Groups,
) -> Result<Var> {
    let (qt, kt, vt) = (tape.value(q), tape.value(k), tape.value(v));
    let (nq, width) = qt.as_matrix()?;
    let (nk, wk) = kt.as_matrix()?;
    if vt.shape() != kt.shape() || wk != width {
        return Err(dim_err!(
            "attention shapes disagree: Q {:?}, K {:?}, V {:?}",
            qt.shape(),
            kt.shape(),
            vt.shape()
        ));
    }
    if nk == 0 {
        return Err(input_err!("attention needs at least one key"));
    }
    if heads == 0 || width % heads != 0 {
        return Err(dim_err!("width {width} not divisible into {heads} heads"));
    }
    let dk = width / heads;
    if let Groups::Clusters(m) = &groups {
        let covered: usize = m.iter().map(Vec::len).sum();
        if nq != nk || covered != nq {
            return Err(dim_err!("clusters cover {covered} tokens, attention has {nq}"));
        }
    }
    let mut ws = AttentionWorkspace::new();
    let out = grouped_attention(qt.data(), kt.data(), vt.data(), nq, nk, heads, dk, scale, &groups, &mut ws);
    let out = Tensor::new(vec![nq, width], out)?;
    Ok(tape.custom(
        &[q, k, v],
        out,
        Box::new(GroupedAttentionFn {
            heads,
            dk,
            scale,
            groups,
        }),
    ))
}

/// Projection weights of one multi-head attention layer.
///
/// `wq`, `wk`, `wv` are `d_model × heads·d_k` (head `h` owns column block `h`);
/// `wo` is `heads·d_k × d_model`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d_k: usize,
}

impl AttentionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, d_model: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(input_err!("d_model {d_model} not divisible by {heads} heads"));
        }
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut mat = |name: &str| {
            let data = (0..d_model * d_model).map(|_| rng.random_range(-bound..bound)).collect();
            store.add(
                format!("{prefix}.{name}"),
                Tensor::new(vec![d_model, d_model], data).expect("square"),
                true,
            )
        };
        Ok(Self {
            wq: mat("wq"),
            wk: mat("wk"),
            wv: mat("wv"),
            wo: mat("wo"),
            heads,
            d_k: d_model / heads,
        })
    }
}

/// How a self-attention layer picks its token groups.
#[derive(Clone, Debug)]
pub enum SparsePlan {
    Dense,
    /// Reuse a given clustering (e.g. held fixed for gradient checks).
    Fixed(ClusterAssignment),
    /// Run K-Means on head-0 queries. `k = 0` means `ceil(log2 n)`.
    KMeans(KMeansConfig),
}

#[derive(Debug)]
pub struct LayerOutput {
    pub out: Var,
    /// Clustering used by a sparse layer.
    pub clusters: Option<ClusterAssignment>,
    /// Score, softmax, value-weighting and clustering FLOPs.
    pub attn_flops: u64,
}

/// Multi-head self-attention plus optional residual. Clustering, when
/// requested, runs on the head-0 query projection and is shared by all heads.
#[allow(clippy::too_many_arguments)]
pub fn self_attention_layer(
    tape: &mut Tape,
    store: &ParamStore,
    tokens: Var,
    p: &AttentionParams,
    plan: &SparsePlan,
    flags: SparseAttentionFlags,
    residual: bool,
) -> Result<LayerOutput> {
    flags.validate()?;
    let wq = tape.param(store, p.wq);
    let wk = tape.param(store, p.wk);
    let wv = tape.param(store, p.wv);
    let q = tape.matmul(tokens, wq)?;
    let k = tape.matmul(tokens, wk)?;
    let v = tape.matmul(tokens, wv)?;
    let n = tape.value(q).rows();

    let clusters = match plan {
        SparsePlan::Dense => None,
        SparsePlan::Fixed(ca) => Some(ca.clone()),
        SparsePlan::KMeans(cfg) => {
            let qt = tape.value(q);
            let mut head0 = Vec::with_capacity(n * p.d_k);
            for i in 0..n {
                head0.extend_from_slice(&qt.row(i)[..p.d_k]);
            }
            let head0 = Tensor::new(vec![n, p.d_k], head0)?;
            let k = if cfg.k == 0 { choose_cluster_count(n)? } else { cfg.k.min(n) };
            Some(kmeans_fit(&head0, &KMeansConfig { k, ..cfg.clone() })?)
        }
    };
    let (groups, scale, attn_flops) = match &clusters {
        None => (
            Groups::Full,
            1.0 / (p.d_k as f64).sqrt(),
            flops::flop_dense(n as u64, p.d_k as u64, p.heads as u64),
        ),
        Some(ca) => {
            if ca.len() != n {
                return Err(dim_err!("clusters cover {} tokens, layer has {n}", ca.len()));
            }
            let cost = flops::KMeansCost {
                k: ca.k() as u64,
                d: p.d_k as u64,
                iters: ca.iterations as u64,
            };
            let sizes: Vec<u64> = ca.sizes.iter().map(|&s| s as u64).collect();
            (
                Groups::from_assignment(ca),
                flags.scale(p.d_k),
                flops::flop_sparse(&sizes, p.d_k as u64, p.heads as u64, cost),
            )
        }
    };
    let att = attention_on_tape(tape, q, k, v, p.heads, scale, groups)?;
    let wo = tape.param(store, p.wo);
    let mut out = tape.matmul(att, wo)?;
    if residual {
        out = tape.add(out, tokens)?;
    }
    Ok(LayerOutput {
        out,
        clusters,
        attn_flops,
    })
}

/// Multi-head cross-attention: queries from `query_tokens`, keys and values
/// from `kv_tokens`. The residual, when enabled, adds `query_tokens`.
pub fn cross_attention_layer(
    tape: &mut Tape,
    store: &ParamStore,
    query_tokens: Var,
    kv_tokens: Var,
    p: &AttentionParams,
    residual: bool,
) -> Result<LayerOutput> {
    if tape.value(kv_tokens).rows() == 0 {
        return Err(input_err!("cross-attention needs at least one key/value token"));
    }
    let wq = tape.param(store, p.wq);
    let wk = tape.param(store, p.wk);
    let wv = tape.param(store, p.wv);
    let q = tape.matmul(query_tokens, wq)?;
    let k = tape.matmul(kv_tokens, wk)?;
    let v = tape.matmul(kv_tokens, wv)?;
    let (nq, nk) = (tape.value(q).rows() as u64, tape.value(k).rows() as u64);
    let scale = 1.0 / (p.d_k as f64).sqrt();
    let att = attention_on_tape(tape, q, k, v, p.heads, scale, Groups::Full)?;
    let wo = tape.param(store, p.wo);
    let mut out = tape.matmul(att, wo)?;
    if residual {
        out = tape.add(out, query_tokens)?;
    }
    Ok(LayerOutput {
        out,
        clusters: None,
        attn_flops: flops::flop_cross(nq, nk, p.d_k as u64, p.heads as u64),
    })
}

/// Cross-attention on plain tensors (no residual).
pub fn cross_attention(
    x_query_tokens: &Tensor,
    x_kv_tokens: &Tensor,
    store: &ParamStore,
    p: &AttentionParams,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xq = tape.constant(x_query_tokens.clone());
    let xkv = tape.constant(x_kv_tokens.clone());
    let out = cross_attention_layer(&mut tape, store, xq, xkv, p, false)?;
    Ok(tape.value(out.out).clone())
}

/// Self-attention layer with residual on plain tensors; sparse when `ca` is given.
pub fn attention_layer_forward(
    tokens: &Tensor,
    store: &ParamStore,
    p: &AttentionParams,
    ca: Option<&ClusterAssignment>,
    flags: SparseAttentionFlags,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(tokens.clone());
    let plan = ca.map_or(SparsePlan::Dense, |c| SparsePlan::Fixed(c.clone()));
    let out = self_attention_layer(&mut tape, store, x, p, &plan, flags, true)?;
    Ok(tape.value(out.out).clone())
}
