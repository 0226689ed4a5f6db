//! Two-round graph attention scorer over the variable-constraint bipartite
//! graph, with exact reverse-mode gradients.
//!
//! Round 1: each constraint attends over its variable neighbors (plus a
//! self term backed by a learned self-edge embedding). Round 2 mirrors the
//! roles: each variable attends over its updated constraint neighbors.
//! Attention scores are `w . leaky_relu([recv, send, edge])` with negative
//! slope 0.2, softmax-normalized per node with the self term included, and
//! head results are averaged. A final MLP plus sigmoid yields one score in
//! (0, 1) per variable.
//!
//! Weights are persisted as little-endian f32 tensors behind a JSON header;
//! in memory they are kept f32-representable while all arithmetic runs in
//! f64, so saved models round-trip bit-exactly and gradients check against
//! central finite differences.

use std::fs;
use std::io::{Read, Write as _};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BipartiteFeatures, CON_FEATS, EDGE_FEATS, VAR_FEATS};
use crate::rng;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatDims {
    pub var_feats: usize,
    pub con_feats: usize,
    pub edge_feats: usize,
    /// Embedding dimension d.
    pub d: usize,
    /// Attention heads H.
    pub heads: usize,
    /// Hidden width of the embedding and output MLPs.
    pub hidden: usize,
}

impl Default for GatDims {
    fn default() -> Self {
        GatDims {
            var_feats: VAR_FEATS,
            con_feats: CON_FEATS,
            edge_feats: EDGE_FEATS,
            d: 64,
            heads: 8,
            hidden: 64,
        }
    }
}

/// Two-layer MLP `out = W2 relu(W1 x + b1) + b2`, row-major weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// One attention round: per-head d x d transforms for the receiving node,
/// the sending node, and the edge, one shared 3d attention vector, and the
/// learned d-dim self-edge embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRound {
    pub theta_recv: Vec<f64>,
    pub theta_send: Vec<f64>,
    pub theta_edge: Vec<f64>,
    pub attn: Vec<f64>,
    pub self_edge: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatWeights {
    pub dims: GatDims,
    pub var_mlp: Mlp,
    pub con_mlp: Mlp,
    pub edge_mlp: Mlp,
    pub round1: AttentionRound,
    pub round2: AttentionRound,
    pub out_mlp: Mlp,
}

/// Per-variable scores in (0, 1).
pub type ScoreVector = Vec<f64>;

fn mlp_specs(name: &str, input: usize, hidden: usize, out: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{name}.w1"), vec![hidden, input]),
        (format!("{name}.b1"), vec![hidden]),
        (format!("{name}.w2"), vec![out, hidden]),
        (format!("{name}.b2"), vec![out]),
    ]
}

fn round_specs(name: &str, d: usize, heads: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        (format!("{name}.theta_recv"), vec![heads, d, d]),
        (format!("{name}.theta_send"), vec![heads, d, d]),
        (format!("{name}.theta_edge"), vec![heads, d, d]),
        (format!("{name}.attn"), vec![3 * d]),
        (format!("{name}.self_edge"), vec![d]),
    ]
}

impl GatWeights {
    /// Tensor names and shapes in on-disk order.
    pub fn tensor_specs(dims: &GatDims) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        specs.extend(mlp_specs("var_mlp", dims.var_feats, dims.hidden, dims.d));
        specs.extend(mlp_specs("con_mlp", dims.con_feats, dims.hidden, dims.d));
        specs.extend(mlp_specs("edge_mlp", dims.edge_feats, dims.hidden, dims.d));
        specs.extend(round_specs("round1", dims.d, dims.heads));
        specs.extend(round_specs("round2", dims.d, dims.heads));
        specs.extend(mlp_specs("out_mlp", dims.d, dims.hidden, 1));
        specs
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        vec![
            &self.var_mlp.w1,
            &self.var_mlp.b1,
            &self.var_mlp.w2,
            &self.var_mlp.b2,
            &self.con_mlp.w1,
            &self.con_mlp.b1,
            &self.con_mlp.w2,
            &self.con_mlp.b2,
            &self.edge_mlp.w1,
            &self.edge_mlp.b1,
            &self.edge_mlp.w2,
            &self.edge_mlp.b2,
            &self.round1.theta_recv,
            &self.round1.theta_send,
            &self.round1.theta_edge,
            &self.round1.attn,
            &self.round1.self_edge,
            &self.round2.theta_recv,
            &self.round2.theta_send,
            &self.round2.theta_edge,
            &self.round2.attn,
            &self.round2.self_edge,
            &self.out_mlp.w1,
            &self.out_mlp.b1,
            &self.out_mlp.w2,
            &self.out_mlp.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        vec![
            &mut self.var_mlp.w1,
            &mut self.var_mlp.b1,
            &mut self.var_mlp.w2,
            &mut self.var_mlp.b2,
            &mut self.con_mlp.w1,
            &mut self.con_mlp.b1,
            &mut self.con_mlp.w2,
            &mut self.con_mlp.b2,
            &mut self.edge_mlp.w1,
            &mut self.edge_mlp.b1,
            &mut self.edge_mlp.w2,
            &mut self.edge_mlp.b2,
            &mut self.round1.theta_recv,
            &mut self.round1.theta_send,
            &mut self.round1.theta_edge,
            &mut self.round1.attn,
            &mut self.round1.self_edge,
            &mut self.round2.theta_recv,
            &mut self.round2.theta_send,
            &mut self.round2.theta_edge,
            &mut self.round2.attn,
            &mut self.round2.self_edge,
            &mut self.out_mlp.w1,
            &mut self.out_mlp.b1,
            &mut self.out_mlp.w2,
            &mut self.out_mlp.b2,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn get_flat(&self, index: usize) -> f64 {
        let mut rest = index;
        for t in self.tensors() {
            if rest < t.len() {
                return t[rest];
            }
            rest -= t.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut rest = index;
        for t in self.tensors_mut() {
            if rest < t.len() {
                t[rest] = quantize(value);
                return;
            }
            rest -= t.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn zeros(dims: GatDims) -> Self {
        fn mlp(input: usize, hidden: usize, out: usize) -> Mlp {
            Mlp {
                w1: vec![0.0; hidden * input],
                b1: vec![0.0; hidden],
                w2: vec![0.0; out * hidden],
                b2: vec![0.0; out],
            }
        }
        fn round(d: usize, heads: usize) -> AttentionRound {
            AttentionRound {
                theta_recv: vec![0.0; heads * d * d],
                theta_send: vec![0.0; heads * d * d],
                theta_edge: vec![0.0; heads * d * d],
                attn: vec![0.0; 3 * d],
                self_edge: vec![0.0; d],
            }
        }
        GatWeights {
            dims,
            var_mlp: mlp(dims.var_feats, dims.hidden, dims.d),
            con_mlp: mlp(dims.con_feats, dims.hidden, dims.d),
            edge_mlp: mlp(dims.edge_feats, dims.hidden, dims.d),
            round1: round(dims.d, dims.heads),
            round2: round(dims.d, dims.heads),
            out_mlp: mlp(dims.d, dims.hidden, 1),
        }
    }

    /// Fan-in-scaled uniform initialization, quantized to f32 so that saved
    /// files reproduce the in-memory tensors exactly.
    pub fn init(seed: u64, dims: GatDims) -> Self {
        let mut weights = Self::zeros(dims);
        let mut rng = rng::seeded(seed);
        let specs = Self::tensor_specs(&dims);
        for ((name, shape), tensor) in specs.iter().zip(weights.tensors_mut()) {
            if name.ends_with(".b1") || name.ends_with(".b2") {
                continue; // biases start at zero
            }
            let fan_in = if shape.len() > 1 {
                shape[shape.len() - 1]
            } else {
                shape[0]
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in tensor.iter_mut() {
                *v = quantize(rng.random_range(-limit..limit));
            }
        }
        weights
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let specs = Self::tensor_specs(&self.dims);
        let header = WeightsHeader {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            dims: self.dims,
            tensors: specs
                .iter()
                .map(|(name, shape)| TensorSpec {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header).expect("header serialization");
        let mut file = fs::File::create(path)?;
        file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for tensor in self.tensors() {
            for &v in tensor {
                file.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = fs::File::open(path)?;
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::Format("weights file too short for header length".into()))?;
        let header_len = u32::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|_| Error::Format("weights file truncated in header".into()))?;
        let header: WeightsHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Format(format!("weights header: {e}")))?;
        if header.format != FORMAT_NAME {
            return Err(Error::Format(format!("unknown format {:?}", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let expected = Self::tensor_specs(&header.dims);
        if header.tensors.len() != expected.len()
            || header
                .tensors
                .iter()
                .zip(&expected)
                .any(|(got, (name, shape))| got.name != *name || got.shape != *shape)
        {
            return Err(Error::Format(
                "tensor manifest does not match the declared dims".into(),
            ));
        }
        let mut weights = Self::zeros(header.dims);
        for tensor in weights.tensors_mut() {
            let mut buf = vec![0u8; tensor.len() * 4];
            file.read_exact(&mut buf)
                .map_err(|_| Error::Format("weights file truncated in payload".into()))?;
            for (v, chunk) in tensor.iter_mut().zip(buf.chunks_exact(4)) {
                *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64;
            }
        }
        let mut trailing = [0u8; 1];
        if file.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(weights)
    }
}

const FORMAT_NAME: &str = "cllns-gat";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    format: String,
    version: u32,
    dims: GatDims,
    tensors: Vec<TensorSpec>,
}

/// Rounds through f32 so in-memory weights always match their saved form.
pub fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn matvec(mat: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(mat.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), rows);
    for (r, slot) in out.iter_mut().enumerate() {
        let row = &mat[r * cols..(r + 1) * cols];
        *slot = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += mat^T * g` (gradient of `mat * x` w.r.t. `x`).
fn matvec_t_acc(mat: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let row = &mat[r * cols..(r + 1) * cols];
        let gr = g[r];
        if gr != 0.0 {
            for (slot, &a) in out.iter_mut().zip(row) {
                *slot += gr * a;
            }
        }
    }
}

/// `grad += g (outer) x` for a `rows x cols` matrix.
fn outer_acc(grad: &mut [f64], rows: usize, cols: usize, g: &[f64], x: &[f64]) {
    debug_assert_eq!(grad.len(), rows * cols);
    for r in 0..rows {
        let gr = g[r];
        if gr != 0.0 {
            let row = &mut grad[r * cols..(r + 1) * cols];
            for (slot, &v) in row.iter_mut().zip(x) {
                *slot += gr * v;
            }
        }
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct MlpCache {
    /// Post-ReLU hidden activations, row-major `count x hidden`.
    hidden: Vec<f64>,
    /// Linear outputs, row-major `count x out`.
    out: Vec<f64>,
}

fn mlp_forward(mlp: &Mlp, input: &[f64], count: usize, in_dim: usize, hidden: usize, out_dim: usize) -> MlpCache {
    let mut cache = MlpCache {
        hidden: vec![0.0; count * hidden],
        out: vec![0.0; count * out_dim],
    };
    for idx in 0..count {
        let x = &input[idx * in_dim..(idx + 1) * in_dim];
        let h = &mut cache.hidden[idx * hidden..(idx + 1) * hidden];
        matvec(&mlp.w1, hidden, in_dim, x, h);
        for (slot, b) in h.iter_mut().zip(&mlp.b1) {
            *slot = (*slot + b).max(0.0);
        }
        let h = &cache.hidden[idx * hidden..(idx + 1) * hidden];
        let o = &mut cache.out[idx * out_dim..(idx + 1) * out_dim];
        matvec(&mlp.w2, out_dim, hidden, h, o);
        for (slot, b) in o.iter_mut().zip(&mlp.b2) {
            *slot += b;
        }
    }
    cache
}

/// Backpropagates `g_out` through an MLP, accumulating weight gradients and
/// returning nothing for the inputs (feature gradients are not needed).
#[allow(clippy::too_many_arguments)]
fn mlp_backward(
    mlp: &Mlp,
    grads: &mut Mlp,
    input: &[f64],
    cache: &MlpCache,
    g_out: &[f64],
    count: usize,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
) {
    let mut g_hidden = vec![0.0; hidden];
    for idx in 0..count {
        let x = &input[idx * in_dim..(idx + 1) * in_dim];
        let h = &cache.hidden[idx * hidden..(idx + 1) * hidden];
        let g = &g_out[idx * out_dim..(idx + 1) * out_dim];
        for (slot, &gv) in grads.b2.iter_mut().zip(g) {
            *slot += gv;
        }
        outer_acc(&mut grads.w2, out_dim, hidden, g, h);
        g_hidden.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&mlp.w2, out_dim, hidden, g, &mut g_hidden);
        for (gh, &hv) in g_hidden.iter_mut().zip(h) {
            if hv <= 0.0 {
                *gh = 0.0;
            }
        }
        for (slot, &gv) in grads.b1.iter_mut().zip(&g_hidden) {
            *slot += gv;
        }
        outer_acc(&mut grads.w1, hidden, in_dim, &g_hidden, x);
    }
}

/// Attention bookkeeping for one round: per head, per node, the softmax
/// weights over `{self} ∪ neighbors` in adjacency order.
struct RoundCache {
    /// `alpha[h][node]` = weights, self first.
    alpha: Vec<Vec<Vec<f64>>>,
    /// Round output, row-major `count x d`.
    out: Vec<f64>,
}

/// Everything forward computes that backward reuses.
pub struct ForwardCache {
    var_emb: MlpCache,
    con_emb: MlpCache,
    edge_emb: MlpCache,
    /// Constraint-side adjacency: per constraint, `(edge_index, var)`.
    con_adj: Vec<Vec<(usize, usize)>>,
    /// Variable-side adjacency: per variable, `(edge_index, con)`.
    var_adj: Vec<Vec<(usize, usize)>>,
    round1: RoundCache,
    round2: RoundCache,
    out_cache: MlpCache,
    scores: Vec<f64>,
}

impl ForwardCache {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

struct RoundContext<'a> {
    round: &'a AttentionRound,
    d: usize,
    heads: usize,
    /// Receiver embeddings, row-major `recv_count x d`.
    recv: &'a [f64],
    /// Sender embeddings, row-major `send_count x d`.
    send: &'a [f64],
    /// Edge embeddings, row-major `edge_count x d`.
    edge: &'a [f64],
    /// Per receiver: `(edge_index, sender)` in adjacency order.
    adj: &'a [Vec<(usize, usize)>],
    /// Whether the receiver's transformed embedding fills the first slot of
    /// the attention triple (round 2) or the sender's does (round 1).
    recv_slot_first: bool,
}

fn round_forward(ctx: &RoundContext) -> RoundCache {
    let d = ctx.d;
    let recv_count = ctx.adj.len();
    let mut cache = RoundCache {
        alpha: vec![Vec::new(); ctx.heads],
        out: vec![0.0; recv_count * d],
    };
    let send_count = ctx.send.len() / d;
    let edge_count = ctx.edge.len() / d;
    let inv_heads = 1.0 / ctx.heads as f64;

    let mut t_recv = vec![0.0; recv_count * d];
    let mut t_send = vec![0.0; send_count * d];
    let mut t_edge = vec![0.0; edge_count * d];
    let mut t_self = vec![0.0; d];
    let mut u = vec![0.0; 3 * d];

    for h in 0..ctx.heads {
        let theta_recv = &ctx.round.theta_recv[h * d * d..(h + 1) * d * d];
        let theta_send = &ctx.round.theta_send[h * d * d..(h + 1) * d * d];
        let theta_edge = &ctx.round.theta_edge[h * d * d..(h + 1) * d * d];
        for i in 0..recv_count {
            matvec(theta_recv, d, d, &ctx.recv[i * d..(i + 1) * d], &mut t_recv[i * d..(i + 1) * d]);
        }
        for j in 0..send_count {
            matvec(theta_send, d, d, &ctx.send[j * d..(j + 1) * d], &mut t_send[j * d..(j + 1) * d]);
        }
        for e in 0..edge_count {
            matvec(theta_edge, d, d, &ctx.edge[e * d..(e + 1) * d], &mut t_edge[e * d..(e + 1) * d]);
        }
        matvec(theta_edge, d, d, &ctx.round.self_edge, &mut t_self);

        let mut alphas_h = Vec::with_capacity(recv_count);
        for (i, neighbors) in ctx.adj.iter().enumerate() {
            let recv_t = &t_recv[i * d..(i + 1) * d];
            let mut scores = Vec::with_capacity(1 + neighbors.len());
            // Self entry: the receiver's own transform fills both node
            // slots, the learned self-edge transform fills the edge slot.
            fill_triple(&mut u, recv_t, recv_t, &t_self, ctx.recv_slot_first, true);
            scores.push(attn_score(&ctx.round.attn, &u));
            for &(e, s) in neighbors {
                let send_t = &t_send[s * d..(s + 1) * d];
                let edge_t = &t_edge[e * d..(e + 1) * d];
                fill_triple(&mut u, recv_t, send_t, edge_t, ctx.recv_slot_first, false);
                scores.push(attn_score(&ctx.round.attn, &u));
            }
            let alpha = softmax(&scores);
            let out = &mut cache.out[i * d..(i + 1) * d];
            for (slot, &rv) in out.iter_mut().zip(recv_t) {
                *slot += inv_heads * alpha[0] * rv;
            }
            for (q, &(_, s)) in neighbors.iter().enumerate() {
                let send_t = &t_send[s * d..(s + 1) * d];
                let w = inv_heads * alpha[q + 1];
                for (slot, &sv) in out.iter_mut().zip(send_t) {
                    *slot += w * sv;
                }
            }
            alphas_h.push(alpha);
        }
        cache.alpha[h] = alphas_h;
    }
    cache
}

/// Lays out the attention triple. Round 1 concatenates
/// `[recv, send, edge]`; round 2 mirrors the node roles, which puts the
/// sender first: `[send, recv, edge]`. For the self entry both node slots
/// hold the receiver transform.
fn fill_triple(u: &mut [f64], recv_t: &[f64], send_t: &[f64], edge_t: &[f64], recv_first: bool, _is_self: bool) {
    let d = recv_t.len();
    let (first, second) = if recv_first {
        (recv_t, send_t)
    } else {
        (send_t, recv_t)
    };
    u[..d].copy_from_slice(first);
    u[d..2 * d].copy_from_slice(second);
    u[2 * d..].copy_from_slice(edge_t);
}

fn attn_score(attn: &[f64], u: &[f64]) -> f64 {
    attn.iter().zip(u).map(|(w, &v)| w * leaky(v)).sum()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Runs the network on one featurized state.
pub fn forward(weights: &GatWeights, feats: &BipartiteFeatures) -> Result<(ScoreVector, ForwardCache)> {
    let dims = &weights.dims;
    if feats.var_feats.len() != feats.n * dims.var_feats
        || feats.con_feats.len() != feats.m * dims.con_feats
        || feats.edge_feats.len() != feats.edges.len() * dims.edge_feats
    {
        return Err(Error::InvalidArgument(
            "feature matrix shapes do not match the network dims".into(),
        ));
    }
    let (n, m, d) = (feats.n, feats.m, dims.d);

    let var_emb = mlp_forward(&weights.var_mlp, &feats.var_feats, n, dims.var_feats, dims.hidden, d);
    let con_emb = mlp_forward(&weights.con_mlp, &feats.con_feats, m, dims.con_feats, dims.hidden, d);
    let edge_emb = mlp_forward(
        &weights.edge_mlp,
        &feats.edge_feats,
        feats.edges.len(),
        dims.edge_feats,
        dims.hidden,
        d,
    );

    let mut con_adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); m];
    let mut var_adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(i, j)) in feats.edges.iter().enumerate() {
        con_adj[i].push((e, j));
        var_adj[j].push((e, i));
    }

    // Round 1: constraints attend over variable neighbors.
    let round1 = round_forward(&RoundContext {
        round: &weights.round1,
        d,
        heads: dims.heads,
        recv: &con_emb.out,
        send: &var_emb.out,
        edge: &edge_emb.out,
        adj: &con_adj,
        recv_slot_first: true,
    });
    // Round 2: variables attend over the updated constraint embeddings.
    let round2 = round_forward(&RoundContext {
        round: &weights.round2,
        d,
        heads: dims.heads,
        recv: &var_emb.out,
        send: &round1.out,
        edge: &edge_emb.out,
        adj: &var_adj,
        recv_slot_first: false,
    });

    let out_cache = mlp_forward(&weights.out_mlp, &round2.out, n, d, dims.hidden, 1);
    let scores: Vec<f64> = out_cache.out.iter().map(|&logit| sigmoid(logit)).collect();

    Ok((
        scores.clone(),
        ForwardCache {
            var_emb,
            con_emb,
            edge_emb,
            con_adj,
            var_adj,
            round1,
            round2,
            out_cache,
            scores,
        },
    ))
}

struct RoundGrads<'a> {
    round: &'a mut AttentionRound,
    /// Gradients flowing into the receiver / sender / edge embeddings.
    g_recv: Vec<f64>,
    g_send: Vec<f64>,
    g_edge: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn round_backward(
    ctx: &RoundContext,
    cache: &RoundCache,
    g_out: &[f64],
    grads: &mut RoundGrads,
) {
    let d = ctx.d;
    let recv_count = ctx.adj.len();
    let send_count = ctx.send.len() / d;
    let edge_count = ctx.edge.len() / d;
    let inv_heads = 1.0 / ctx.heads as f64;

    let mut t_recv = vec![0.0; recv_count * d];
    let mut t_send = vec![0.0; send_count * d];
    let mut t_edge = vec![0.0; edge_count * d];
    let mut t_self = vec![0.0; d];
    let mut u = vec![0.0; 3 * d];
    let mut du = vec![0.0; 3 * d];

    for h in 0..ctx.heads {
        let theta_recv = &ctx.round.theta_recv[h * d * d..(h + 1) * d * d];
        let theta_send = &ctx.round.theta_send[h * d * d..(h + 1) * d * d];
        let theta_edge = &ctx.round.theta_edge[h * d * d..(h + 1) * d * d];
        for i in 0..recv_count {
            matvec(theta_recv, d, d, &ctx.recv[i * d..(i + 1) * d], &mut t_recv[i * d..(i + 1) * d]);
        }
        for j in 0..send_count {
            matvec(theta_send, d, d, &ctx.send[j * d..(j + 1) * d], &mut t_send[j * d..(j + 1) * d]);
        }
        for e in 0..edge_count {
            matvec(theta_edge, d, d, &ctx.edge[e * d..(e + 1) * d], &mut t_edge[e * d..(e + 1) * d]);
        }
        matvec(theta_edge, d, d, &ctx.round.self_edge, &mut t_self);

        // Gradients w.r.t. the per-head transformed embeddings.
        let mut g_t_recv = vec![0.0; recv_count * d];
        let mut g_t_send = vec![0.0; send_count * d];
        let mut g_t_edge = vec![0.0; edge_count * d];
        let mut g_t_self = vec![0.0; d];

        for (i, neighbors) in ctx.adj.iter().enumerate() {
            let recv_t = &t_recv[i * d..(i + 1) * d];
            let alpha = &cache.alpha[h][i];
            let g_node: Vec<f64> = g_out[i * d..(i + 1) * d]
                .iter()
                .map(|g| g * inv_heads)
                .collect();

            // dL/dalpha_q = g . message_q ; messages pick up alpha * g.
            let mut d_alpha = Vec::with_capacity(alpha.len());
            d_alpha.push(g_node.iter().zip(recv_t).map(|(g, m)| g * m).sum::<f64>());
            for &(_, s) in neighbors {
                let send_t = &t_send[s * d..(s + 1) * d];
                d_alpha.push(g_node.iter().zip(send_t).map(|(g, m)| g * m).sum::<f64>());
            }
            {
                let g_recv_t = &mut g_t_recv[i * d..(i + 1) * d];
                for (slot, &g) in g_recv_t.iter_mut().zip(&g_node) {
                    *slot += alpha[0] * g;
                }
            }
            for (q, &(_, s)) in neighbors.iter().enumerate() {
                let g_send_t = &mut g_t_send[s * d..(s + 1) * d];
                for (slot, &g) in g_send_t.iter_mut().zip(&g_node) {
                    *slot += alpha[q + 1] * g;
                }
            }

            // Softmax backward.
            let dot: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
            let d_score: Vec<f64> = alpha
                .iter()
                .zip(&d_alpha)
                .map(|(a, g)| a * (g - dot))
                .collect();

            // Attention-score backward, entry by entry.
            for (q, &ds) in d_score.iter().enumerate() {
                if ds == 0.0 {
                    continue;
                }
                let (send_t, edge_t): (&[f64], &[f64]) = if q == 0 {
                    (recv_t, &t_self)
                } else {
                    let (e, s) = ctx.adj[i][q - 1];
                    (&t_send[s * d..(s + 1) * d], &t_edge[e * d..(e + 1) * d])
                };
                fill_triple(&mut u, recv_t, send_t, edge_t, ctx.recv_slot_first, q == 0);
                for ((slot, &w), &v) in du.iter_mut().zip(&ctx.round.attn).zip(u.iter()) {
                    *slot = ds * w * leaky_grad(v);
                }
                for (slot, &v) in grads.round.attn.iter_mut().zip(u.iter()) {
                    *slot += ds * leaky(v);
                }
                // Route the three slots back to their sources.
                let (first, second) = if ctx.recv_slot_first {
                    (Slot::Recv, Slot::Send)
                } else {
                    (Slot::Send, Slot::Recv)
                };
                for (slot_kind, du_part) in [(first, &du[..d]), (second, &du[d..2 * d])] {
                    match (slot_kind, q) {
                        (Slot::Recv, _) => {
                            let g = &mut g_t_recv[i * d..(i + 1) * d];
                            for (gs, &v) in g.iter_mut().zip(du_part) {
                                *gs += v;
                            }
                        }
                        (Slot::Send, 0) => {
                            // Self entry: the receiver fills the send slot.
                            let g = &mut g_t_recv[i * d..(i + 1) * d];
                            for (gs, &v) in g.iter_mut().zip(du_part) {
                                *gs += v;
                            }
                        }
                        (Slot::Send, _) => {
                            let (_, s) = ctx.adj[i][q - 1];
                            let g = &mut g_t_send[s * d..(s + 1) * d];
                            for (gs, &v) in g.iter_mut().zip(du_part) {
                                *gs += v;
                            }
                        }
                    }
                }
                if q == 0 {
                    for (gs, &v) in g_t_self.iter_mut().zip(&du[2 * d..]) {
                        *gs += v;
                    }
                } else {
                    let (e, _) = ctx.adj[i][q - 1];
                    let g = &mut g_t_edge[e * d..(e + 1) * d];
                    for (gs, &v) in g.iter_mut().zip(&du[2 * d..]) {
                        *gs += v;
                    }
                }
            }
        }

        // Pull transformed-embedding gradients back through the thetas.
        let g_theta_recv = &mut grads.round.theta_recv[h * d * d..(h + 1) * d * d];
        for i in 0..recv_count {
            let g = &g_t_recv[i * d..(i + 1) * d];
            outer_acc(g_theta_recv, d, d, g, &ctx.recv[i * d..(i + 1) * d]);
            matvec_t_acc(theta_recv, d, d, g, &mut grads.g_recv[i * d..(i + 1) * d]);
        }
        let g_theta_send = &mut grads.round.theta_send[h * d * d..(h + 1) * d * d];
        for j in 0..send_count {
            let g = &g_t_send[j * d..(j + 1) * d];
            outer_acc(g_theta_send, d, d, g, &ctx.send[j * d..(j + 1) * d]);
            matvec_t_acc(theta_send, d, d, g, &mut grads.g_send[j * d..(j + 1) * d]);
        }
        let g_theta_edge = &mut grads.round.theta_edge[h * d * d..(h + 1) * d * d];
        for e in 0..edge_count {
            let g = &g_t_edge[e * d..(e + 1) * d];
            outer_acc(g_theta_edge, d, d, g, &ctx.edge[e * d..(e + 1) * d]);
            matvec_t_acc(theta_edge, d, d, g, &mut grads.g_edge[e * d..(e + 1) * d]);
        }
        outer_acc(g_theta_edge, d, d, &g_t_self, &ctx.round.self_edge);
        matvec_t_acc(theta_edge, d, d, &g_t_self, &mut grads.round.self_edge);
    }
}

#[derive(Clone, Copy)]
enum Slot {
    Recv,
    Send,
}

/// Exact reverse-mode gradient of `sum_j upstream[j] * score[j]` with
/// respect to every weight tensor, reusing the forward cache.
pub fn backward(
    weights: &GatWeights,
    feats: &BipartiteFeatures,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<GatWeights> {
    let dims = &weights.dims;
    let (n, m, d) = (feats.n, feats.m, dims.d);
    if upstream.len() != n {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient length {} != n = {n}",
            upstream.len()
        )));
    }
    let mut grads = GatWeights::zeros(*dims);

    // Output MLP: dscore/dlogit = s(1-s).
    let g_logit: Vec<f64> = upstream
        .iter()
        .zip(&cache.scores)
        .map(|(u, s)| u * s * (1.0 - s))
        .collect();
    mlp_backward(
        &weights.out_mlp,
        &mut grads.out_mlp,
        &cache.round2.out,
        &cache.out_cache,
        &g_logit,
        n,
        d,
        dims.hidden,
        1,
    );
    // Gradient into the round-2 outputs (v').
    let mut g_vp = vec![0.0; n * d];
    {
        let mut g_hidden = vec![0.0; dims.hidden];
        for j in 0..n {
            let h = &cache.out_cache.hidden[j * dims.hidden..(j + 1) * dims.hidden];
            g_hidden.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&weights.out_mlp.w2, 1, dims.hidden, &g_logit[j..j + 1], &mut g_hidden);
            for (gh, &hv) in g_hidden.iter_mut().zip(h) {
                if hv <= 0.0 {
                    *gh = 0.0;
                }
            }
            matvec_t_acc(
                &weights.out_mlp.w1,
                dims.hidden,
                d,
                &g_hidden,
                &mut g_vp[j * d..(j + 1) * d],
            );
        }
    }

    // Round 2 backward (senders are the round-1 outputs).
    let ctx2 = RoundContext {
        round: &weights.round2,
        d,
        heads: dims.heads,
        recv: &cache.var_emb.out,
        send: &cache.round1.out,
        edge: &cache.edge_emb.out,
        adj: &cache.var_adj,
        recv_slot_first: false,
    };
    let mut rg2 = RoundGrads {
        round: &mut grads.round2,
        g_recv: vec![0.0; n * d],
        g_send: vec![0.0; m * d],
        g_edge: vec![0.0; feats.edges.len() * d],
    };
    round_backward(&ctx2, &cache.round2, &g_vp, &mut rg2);
    let g_var_from_round2 = rg2.g_recv;
    let g_cp = rg2.g_send;
    let g_edge_from_round2 = rg2.g_edge;

    // Round 1 backward.
    let ctx1 = RoundContext {
        round: &weights.round1,
        d,
        heads: dims.heads,
        recv: &cache.con_emb.out,
        send: &cache.var_emb.out,
        edge: &cache.edge_emb.out,
        adj: &cache.con_adj,
        recv_slot_first: true,
    };
    let mut rg1 = RoundGrads {
        round: &mut grads.round1,
        g_recv: vec![0.0; m * d],
        g_send: vec![0.0; n * d],
        g_edge: vec![0.0; feats.edges.len() * d],
    };
    round_backward(&ctx1, &cache.round1, &g_cp, &mut rg1);

    // Embedding MLPs.
    let mut g_var = g_var_from_round2;
    for (slot, v) in g_var.iter_mut().zip(&rg1.g_send) {
        *slot += v;
    }
    let mut g_edge = g_edge_from_round2;
    for (slot, v) in g_edge.iter_mut().zip(&rg1.g_edge) {
        *slot += v;
    }
    mlp_backward(
        &weights.var_mlp,
        &mut grads.var_mlp,
        &feats.var_feats,
        &cache.var_emb,
        &g_var,
        n,
        dims.var_feats,
        dims.hidden,
        d,
    );
    mlp_backward(
        &weights.con_mlp,
        &mut grads.con_mlp,
        &feats.con_feats,
        &cache.con_emb,
        &rg1.g_recv,
        m,
        dims.con_feats,
        dims.hidden,
        d,
    );
    mlp_backward(
        &weights.edge_mlp,
        &mut grads.edge_mlp,
        &feats.edge_feats,
        &cache.edge_emb,
        &g_edge,
        feats.edges.len(),
        dims.edge_feats,
        dims.hidden,
        d,
    );

    Ok(grads)
}
