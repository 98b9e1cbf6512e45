//! The crystal graph convolutional network.
//!
//! embedding → `n_conv` gated residual convolutions → mean pooling →
//! one shared softplus FC layer → one linear head per task. Gradients are
//! derived by hand and checked against finite differences in the tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgraph::CrystalGraph;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{accumulate_input_grad, accumulate_outer, affine, sigmoid, softplus, Tensor};

/// Per-sample gradients are materialized in windows of this many samples
/// before being summed in sample order.
const GRAD_WINDOW: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub d_init: usize,
    pub d_edge: usize,
    pub d_atom: usize,
    pub d_hidden: usize,
    pub n_conv: usize,
    pub tasks: Vec<String>,
    pub seed: u64,
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_conv < 1
            || self.d_atom < 1
            || self.d_hidden < 1
            || self.d_init < 1
            || self.d_edge < 1
        {
            return bad(format!("invalid architecture dimensions {self:?}"));
        }
        if self.tasks.is_empty() {
            return bad("no tasks".into());
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tasks {
            if t.is_empty() || !seen.insert(t) {
                return bad(format!(
                    "task names must be unique and non-empty: {:?}",
                    self.tasks
                ));
            }
        }
        Ok(())
    }

    /// Length of the concatenated `(v_i, v_j, u_ij)` conv input.
    pub fn conv_in(&self) -> usize {
        2 * self.d_atom + self.d_edge
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// Gate weights, `conv_in × d_atom`.
    pub wf: Tensor,
    /// Filter weights, `conv_in × d_atom`.
    pub ws: Tensor,
    pub bf: Tensor,
    pub bs: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `d_hidden × 1`
    pub w: Tensor,
    /// scalar
    pub b: Tensor,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub convs: Vec<ConvParams>,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
    pub heads: Vec<HeadParams>,
}

/// Canonical `(name, shape, is_weight)` list for an architecture.
pub fn tensor_layout(arch: &ArchConfig) -> Vec<(String, Vec<usize>, bool)> {
    let (a, h) = (arch.d_atom, arch.d_hidden);
    let mut out = vec![
        ("embed_W".to_string(), vec![arch.d_init, a], true),
        ("embed_b".to_string(), vec![a], false),
    ];
    for t in 0..arch.n_conv {
        out.push((format!("conv{t}_Wf"), vec![arch.conv_in(), a], true));
        out.push((format!("conv{t}_Ws"), vec![arch.conv_in(), a], true));
        out.push((format!("conv{t}_bf"), vec![a], false));
        out.push((format!("conv{t}_bs"), vec![a], false));
    }
    out.push(("fc_W".to_string(), vec![a, h], true));
    out.push(("fc_b".to_string(), vec![h], false));
    for task in &arch.tasks {
        out.push((format!("head_W_{task}"), vec![h, 1], true));
        out.push((format!("head_b_{task}"), vec![], false));
    }
    out
}

impl ModelParams {
    pub fn zeros(arch: &ArchConfig) -> Self {
        let named = tensor_layout(arch)
            .into_iter()
            .map(|(n, s, _)| (n, Tensor::zeros(&s)))
            .collect();
        Self::from_named(arch, named).expect("layout is self-consistent")
    }

    /// Tensors in canonical order (the order of [`tensor_layout`]).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embed_w, &self.embed_b];
        for c in &self.convs {
            v.extend([&c.wf, &c.ws, &c.bf, &c.bs]);
        }
        v.extend([&self.fc_w, &self.fc_b]);
        for h in &self.heads {
            v.extend([&h.w, &h.b]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embed_w, &mut self.embed_b];
        for c in &mut self.convs {
            v.extend([&mut c.wf, &mut c.ws, &mut c.bf, &mut c.bs]);
        }
        v.extend([&mut self.fc_w, &mut self.fc_b]);
        for h in &mut self.heads {
            v.extend([&mut h.w, &mut h.b]);
        }
        v
    }

    pub fn named<'a>(&'a self, arch: &ArchConfig) -> Vec<(String, &'a Tensor)> {
        tensor_layout(arch)
            .into_iter()
            .map(|(n, _, _)| n)
            .zip(self.tensors())
            .collect()
    }

    /// Rebuilds parameters from named tensors, requiring exactly the names and
    /// shapes of [`tensor_layout`] in any order.
    pub fn from_named(arch: &ArchConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = tensor_layout(arch);
        if named.len() != layout.len() {
            return Err(Error::Inconsistent(format!(
                "{} tensors present, architecture needs {}",
                named.len(),
                layout.len()
            )));
        }
        let mut map: std::collections::HashMap<String, Tensor> = named.into_iter().collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = map
                .remove(name)
                .ok_or_else(|| Error::Inconsistent(format!("missing tensor `{name}`")))?;
            if t.shape != shape {
                return Err(Error::Inconsistent(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            Ok(t)
        };
        let mut it = layout.iter();
        let mut next = || {
            let (n, s, _) = it.next().expect("layout length");
            take(n, s)
        };
        let embed_w = next()?;
        let embed_b = next()?;
        let mut convs = Vec::with_capacity(arch.n_conv);
        for _ in 0..arch.n_conv {
            convs.push(ConvParams {
                wf: next()?,
                ws: next()?,
                bf: next()?,
                bs: next()?,
            });
        }
        let fc_w = next()?;
        let fc_b = next()?;
        let mut heads = Vec::with_capacity(arch.n_tasks());
        for _ in 0..arch.n_tasks() {
            heads.push(HeadParams {
                w: next()?,
                b: next()?,
            });
        }
        Ok(ModelParams {
            embed_w,
            embed_b,
            convs,
            fc_w,
            fc_b,
            heads,
        })
    }

    pub fn check_shapes(&self, arch: &ArchConfig) -> Result<()> {
        let layout = tensor_layout(arch);
        let tensors = self.tensors();
        if layout.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "{} tensors for an architecture needing {}",
                tensors.len(),
                layout.len()
            )));
        }
        for ((name, shape, _), t) in layout.iter().zip(tensors) {
            if &t.shape != shape {
                return Err(Error::Shape(format!(
                    "`{name}` is {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// `self += alpha · other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &ModelParams) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in t.data.iter_mut().zip(&o.data) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Every element rounded through f32, the checkpoint storage precision.
    pub fn to_storage_precision(&self) -> ModelParams {
        let mut p = self.clone();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
        p
    }
}

/// Uniform on ±1/√fan_in for weights (fan_in = first dimension), zero biases,
/// drawn in canonical tensor order from one seeded stream.
pub fn init_model(arch: &ArchConfig) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = Rng::new(arch.seed);
    let mut p = ModelParams::zeros(arch);
    for ((_, shape, is_weight), t) in tensor_layout(arch).iter().zip(p.tensors_mut()) {
        if *is_weight {
            let bound = 1.0 / (shape[0] as f64).sqrt();
            t.data
                .iter_mut()
                .for_each(|x| *x = rng.uniform(-bound, bound));
        }
    }
    Ok(p)
}

/// Model output for one crystal: one value per task, in normalized target space.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub normalized: Vec<f64>,
}

impl Prediction {
    pub fn denormalize(&self, norm: &Normalizer) -> Vec<f64> {
        norm.denormalize(&self.normalized)
    }
}

/// Per-task z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Mean and population standard deviation per task; a zero spread
    /// falls back to 1.
    pub fn fit(targets: &[&[f64]], n_tasks: usize) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidInput(
                "cannot fit a normalizer on zero samples".into(),
            ));
        }
        let n = targets.len() as f64;
        let mut mean = vec![0.0; n_tasks];
        for t in targets {
            for (m, v) in mean.iter_mut().zip(t.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; n_tasks];
        for t in targets {
            for ((s, v), m) in std.iter_mut().zip(t.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        std.iter_mut().for_each(|s| {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12) {
                *s = 1.0;
            }
        });
        Ok(Normalizer { mean, std })
    }

    pub fn identity(n_tasks: usize) -> Self {
        Normalizer {
            mean: vec![0.0; n_tasks],
            std: vec![1.0; n_tasks],
        }
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(y, (m, s))| (y - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(y, (m, s))| y * s + m)
            .collect()
    }
}

struct ConvTrace {
    /// node states entering the layer, N × d_atom
    input: Tensor,
    /// gate / filter pre-activations, M × d_atom
    pre_f: Tensor,
    pre_s: Tensor,
}

struct Trace {
    convs: Vec<ConvTrace>,
    n_nodes: usize,
    pooled: Vec<f64>,
    h_pre: Vec<f64>,
    h: Vec<f64>,
    out: Vec<f64>,
}

fn conv_forward(
    v: &Tensor,
    g: &CrystalGraph,
    layer: &ConvParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d_atom = v.cols();
    let m = g.n_edges();
    let mut out = v.clone();
    let mut pre_f = Tensor::zeros(&[m, d_atom]);
    let mut pre_s = Tensor::zeros(&[m, d_atom]);
    let mut z = vec![0.0; 2 * d_atom + g.d_edge()];
    for (k, e) in g.edges.iter().enumerate() {
        z[..d_atom].copy_from_slice(v.row(e.src));
        z[d_atom..2 * d_atom].copy_from_slice(v.row(e.dst));
        z[2 * d_atom..].copy_from_slice(g.edge_feats.row(k));
        affine(&z, &layer.wf, &layer.bf.data, pre_f.row_mut(k));
        affine(&z, &layer.ws, &layer.bs.data, pre_s.row_mut(k));
        let dst = out.row_mut(e.src);
        for ((o, &af), &as_) in dst.iter_mut().zip(pre_f.row(k)).zip(pre_s.row(k)) {
            *o += sigmoid(af) * softplus(as_);
        }
    }
    if !out.is_finite() {
        return Err(Error::Numeric(
            "non-finite node state in convolution".into(),
        ));
    }
    Ok((out, pre_f, pre_s))
}

/// One gated residual convolution:
/// `v_i' = v_i + Σ_{i→j} σ(z·Wf + bf) ⊙ softplus(z·Ws + bs)`, `z = (v_i, v_j, u_ij)`.
pub fn conv_layer(v: &Tensor, g: &CrystalGraph, layer: &ConvParams) -> Result<Tensor> {
    conv_forward(v, g, layer).map(|(out, _, _)| out)
}

/// Mean over node rows.
pub fn pool(v: &Tensor) -> Vec<f64> {
    let n = v.rows();
    let mut out = vec![0.0; v.cols()];
    for i in 0..n {
        for (o, x) in out.iter_mut().zip(v.row(i)) {
            *o += x;
        }
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    out
}

fn check_inputs(g: &CrystalGraph, p: &ModelParams, arch: &ArchConfig) -> Result<()> {
    if g.d_init() != arch.d_init || g.d_edge() != arch.d_edge {
        return Err(Error::Shape(format!(
            "graph features ({}, {}) do not match architecture ({}, {})",
            g.d_init(),
            g.d_edge(),
            arch.d_init,
            arch.d_edge
        )));
    }
    if g.n_nodes == 0 {
        return Err(Error::Shape("graph has no nodes".into()));
    }
    p.check_shapes(arch)
}

fn forward_trace(g: &CrystalGraph, p: &ModelParams, arch: &ArchConfig) -> Result<Trace> {
    check_inputs(g, p, arch)?;
    let n = g.n_nodes;
    let mut v = Tensor::zeros(&[n, arch.d_atom]);
    for i in 0..n {
        affine(
            g.node_feats.row(i),
            &p.embed_w,
            &p.embed_b.data,
            v.row_mut(i),
        );
    }
    let mut convs = Vec::with_capacity(p.convs.len());
    for layer in &p.convs {
        let (out, pre_f, pre_s) = conv_forward(&v, g, layer)?;
        convs.push(ConvTrace {
            input: std::mem::replace(&mut v, out),
            pre_f,
            pre_s,
        });
    }
    let pooled = pool(&v);
    let mut h_pre = vec![0.0; arch.d_hidden];
    affine(&pooled, &p.fc_w, &p.fc_b.data, &mut h_pre);
    let h: Vec<f64> = h_pre.iter().map(|&x| softplus(x)).collect();
    let out: Vec<f64> = p
        .heads
        .iter()
        .map(|hd| hd.b.data[0] + h.iter().zip(&hd.w.data).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    if !out.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    Ok(Trace {
        convs,
        n_nodes: n,
        pooled,
        h_pre,
        h,
        out,
    })
}

pub fn forward(g: &CrystalGraph, p: &ModelParams, arch: &ArchConfig) -> Result<Prediction> {
    forward_trace(g, p, arch).map(|t| Prediction { normalized: t.out })
}

/// `Σ_p weight_p · mean_i (y_ip − ŷ_ip)²`.
pub fn loss(preds: &[Prediction], targets: &[Vec<f64>], weights: &[f64]) -> f64 {
    let n = preds.len() as f64;
    weights
        .iter()
        .enumerate()
        .map(|(t, w)| {
            let se: f64 = preds
                .iter()
                .zip(targets)
                .map(|(p, y)| (y[t] - p.normalized[t]).powi(2))
                .sum();
            w * se / n
        })
        .sum()
}

/// Loss of one sample and the exact gradient of that loss with respect to
/// every parameter.
pub fn backward(
    g: &CrystalGraph,
    p: &ModelParams,
    arch: &ArchConfig,
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, ModelParams)> {
    if targets.len() != arch.n_tasks() || weights.len() != arch.n_tasks() {
        return Err(Error::Shape(format!(
            "{} targets / {} weights for {} tasks",
            targets.len(),
            weights.len(),
            arch.n_tasks()
        )));
    }
    let tr = forward_trace(g, p, arch)?;
    let mut grads = ModelParams::zeros(arch);
    let mut sample_loss = 0.0;

    // heads
    let mut dh = vec![0.0; arch.d_hidden];
    for (t, head) in p.heads.iter().enumerate() {
        let r = tr.out[t] - targets[t];
        sample_loss += weights[t] * r * r;
        let dy = 2.0 * weights[t] * r;
        let gh = &mut grads.heads[t];
        gh.b.data[0] = dy;
        for ((gw, &hk), (&wk, d)) in
            gh.w.data
                .iter_mut()
                .zip(&tr.h)
                .zip(head.w.data.iter().zip(dh.iter_mut()))
        {
            *gw = dy * hk;
            *d += dy * wk;
        }
    }

    // shared FC
    let dh_pre: Vec<f64> = dh
        .iter()
        .zip(&tr.h_pre)
        .map(|(d, &x)| d * sigmoid(x))
        .collect();
    accumulate_outer(&tr.pooled, &dh_pre, &mut grads.fc_w);
    grads.fc_b.data.copy_from_slice(&dh_pre);
    let mut dpooled = vec![0.0; arch.d_atom];
    accumulate_input_grad(&p.fc_w, &dh_pre, &mut dpooled);

    // mean pooling
    let inv_n = 1.0 / tr.n_nodes as f64;
    let mut dv = Tensor::zeros(&[tr.n_nodes, arch.d_atom]);
    for i in 0..tr.n_nodes {
        for (d, x) in dv.row_mut(i).iter_mut().zip(&dpooled) {
            *d = x * inv_n;
        }
    }

    // convolutions, last to first
    let a = arch.d_atom;
    let mut z = vec![0.0; arch.conv_in()];
    let mut dz = vec![0.0; arch.conv_in()];
    let mut daf = vec![0.0; a];
    let mut das = vec![0.0; a];
    for (layer, (params, ctr)) in p.convs.iter().zip(&tr.convs).enumerate().rev() {
        // residual path carries dv through unchanged
        let dout = dv.clone();
        for (k, e) in g.edges.iter().enumerate() {
            let dm = dout.row(e.src);
            for c in 0..a {
                let sf = sigmoid(ctr.pre_f.row(k)[c]);
                let ss = ctr.pre_s.row(k)[c];
                daf[c] = dm[c] * softplus(ss) * sf * (1.0 - sf);
                das[c] = dm[c] * sf * sigmoid(ss);
            }
            z[..a].copy_from_slice(ctr.input.row(e.src));
            z[a..2 * a].copy_from_slice(ctr.input.row(e.dst));
            z[2 * a..].copy_from_slice(g.edge_feats.row(k));
            let gl = &mut grads.convs[layer];
            accumulate_outer(&z, &daf, &mut gl.wf);
            accumulate_outer(&z, &das, &mut gl.ws);
            for c in 0..a {
                gl.bf.data[c] += daf[c];
                gl.bs.data[c] += das[c];
            }
            dz.fill(0.0);
            accumulate_input_grad(&params.wf, &daf, &mut dz);
            accumulate_input_grad(&params.ws, &das, &mut dz);
            for (d, x) in dv.row_mut(e.src).iter_mut().zip(&dz[..a]) {
                *d += x;
            }
            for (d, x) in dv.row_mut(e.dst).iter_mut().zip(&dz[a..2 * a]) {
                *d += x;
            }
        }
    }

    // embedding
    for i in 0..tr.n_nodes {
        accumulate_outer(g.node_feats.row(i), dv.row(i), &mut grads.embed_w);
        for (b, d) in grads.embed_b.data.iter_mut().zip(dv.row(i)) {
            *b += d;
        }
    }

    for (name, t) in grads.named(arch) {
        if !t.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for `{name}`")));
        }
    }
    Ok((sample_loss, grads))
}

/// Mean loss and mean gradient over a batch of `(graph, normalized targets)`.
///
/// Per-sample work runs in parallel; the reduction is a sequential sum in
/// sample order, so the result does not depend on the thread count.
pub fn batch_gradient(
    batch: &[(&CrystalGraph, &[f64])],
    p: &ModelParams,
    arch: &ArchConfig,
    weights: &[f64],
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut total = ModelParams::zeros(arch);
    let mut total_loss = 0.0;
    for window in batch.chunks(GRAD_WINDOW) {
        let results: Vec<Result<(f64, ModelParams)>> = window
            .par_iter()
            .map(|(g, y)| backward(g, p, arch, y, weights))
            .collect();
        for r in results {
            let (l, gr) = r?;
            total_loss += l;
            total.axpy(1.0, &gr);
        }
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((total_loss * inv, total))
}
