//! Explicit single-owner tape for reverse-mode differentiation.
//!
//! Every primitive computes its value eagerly and appends one [`Op`] that
//! remembers its inputs, output and whatever activations backward needs.
//! `backward` walks the ops in exact reverse recording order.

use crate::error::{Error, Result};

use super::kernels::{self, axpy, dot, gemm_view, View};
use super::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; several times cheaper than libm's `tanh`.
#[inline]
fn tanh_exp(u: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * u).exp()) - 1.0
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch/sequence/head geometry of a stacked attention input `[batch·seq × heads·dh]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionLayout {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
}

impl AttentionLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }

    pub fn score_rows(&self) -> usize {
        self.batch * self.heads * self.seq
    }
}

/// How raw query-key products are scaled before use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreScale {
    /// Multiply every score by a constant (e.g. `1/sqrt(dh)` for softmax attention).
    Constant(f64),
    /// Divide row `i` by `i + 1`, the token count seen by a causal query.
    CausalCount,
}

/// Entries excluded from a row softmax.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    None,
    /// Row `r` may see columns `0..=r % period`.
    Causal {
        period: usize,
    },
    /// `true` marks an excluded entry; same length as the input.
    Explicit(Vec<bool>),
}

impl Mask {
    #[inline]
    fn masked(&self, row: usize, col: usize, cols: usize) -> bool {
        match self {
            Mask::None => false,
            Mask::Causal { period } => col > row % period,
            Mask::Explicit(m) => m[row * cols + col],
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

#[derive(Debug)]
enum Op {
    Matmul {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    MatmulNt {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
        out: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
        out: NodeId,
    },
    Scale {
        x: NodeId,
        c: f64,
        out: NodeId,
    },
    Sum {
        x: NodeId,
        out: NodeId,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
        out: NodeId,
    },
    SelectRows {
        x: NodeId,
        rows: Vec<usize>,
        out: NodeId,
    },
    ReplaceRows {
        x: NodeId,
        rows: Vec<usize>,
        out: NodeId,
    },
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        out: NodeId,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu {
        x: NodeId,
        out: NodeId,
    },
    Elu1 {
        x: NodeId,
        out: NodeId,
    },
    AttnScores {
        q: NodeId,
        k: NodeId,
        layout: AttentionLayout,
        scale: ScoreScale,
        out: NodeId,
    },
    Softmax {
        out: NodeId,
        x: NodeId,
    },
    AttnMix {
        p: NodeId,
        v: NodeId,
        layout: AttentionLayout,
        out: NodeId,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
        out: NodeId,
    },
    L2NormalizeRows {
        x: NodeId,
        norms: Vec<f64>,
        out: NodeId,
    },
    ContrastiveNll {
        sim: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
        positives: Vec<usize>,
        pairs: usize,
        out: NodeId,
    },
}

/// Ordered record of primitive operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            grad: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant input (no gradient).
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), false)
    }

    /// Records a differentiable input.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), true)
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<NodeId> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape("constant", &shape, &[value.len()]));
        }
        Ok(self.push(shape, value, false))
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.0).ok_or(Error::Index {
            what: "tape node",
            index: id.0,
            limit: self.nodes.len(),
        })
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Copies a node out as a [`Tensor`] tagged with its node id.
    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        let mut t = Tensor::new(n.shape.clone(), n.value.clone())
            .expect("node shape is consistent")
            .with_node(id);
        if let Some(g) = &n.grad {
            t.set_grad(g.clone()).expect("grad length matches");
        }
        t
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    /// Gradient of a node after [`Tape::backward`]; `None` for constants.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes.get(id.0).and_then(|n| n.grad.as_deref())
    }

    /// Copies the gradient of `id` into the tensor's grad slot.
    pub fn fill_grad(&self, id: NodeId, t: &mut Tensor) -> Result<()> {
        let g = self
            .grad(id)
            .ok_or_else(|| Error::Invalid(format!("node {} has no gradient", id.0)))?;
        t.set_grad(g.to_vec())
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        match self.node(id)?.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, s, &[0, 0])),
        }
    }

    // ------------------------------------------------------------------
    // forward primitives
    // ------------------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &[m, k], &[k2, n]));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(m, k, n, self.value(a), self.value(b), &mut out, false);
        let needs = self.needs(&[a, b]);
        let out = self.push(vec![m, n], out, needs);
        self.ops.push(Op::Matmul { a, b, out });
        Ok(out)
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", &[m, k], &[n, k2]));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm_nt(m, k, n, self.value(a), self.value(b), &mut out, false);
        let needs = self.needs(&[a, b]);
        let out = self.push(vec![m, n], out, needs);
        self.ops.push(Op::MatmulNt { a, b, out });
        Ok(out)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        let (sa, sb) = (&self.node(a)?.shape, &self.node(b)?.shape);
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(&[a, b]);
        let out = self.push(self.shape(a).to_vec(), v, needs);
        self.ops.push(Op::Add { a, b, out });
        Ok(out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let v: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(&[a, b]);
        let out = self.push(self.shape(a).to_vec(), v, needs);
        self.ops.push(Op::Mul { a, b, out });
        Ok(out)
    }

    /// Adds a `[d]` bias to every row of `[n×d]`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2(x, "add_bias")?;
        if self.node(bias)?.shape != [d] {
            return Err(Error::shape("add_bias", &[n, d], &self.nodes[bias.0].shape));
        }
        let mut v = self.value(x).to_vec();
        let b = self.value(bias);
        for row in v.chunks_exact_mut(d) {
            for (r, bi) in row.iter_mut().zip(b) {
                *r += bi;
            }
        }
        let needs = self.needs(&[x, bias]);
        let out = self.push(vec![n, d], v, needs);
        self.ops.push(Op::AddBias { x, bias, out });
        Ok(out)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.node(x)?;
        let v = self.value(x).iter().map(|v| v * c).collect();
        let needs = self.needs(&[x]);
        let out = self.push(self.shape(x).to_vec(), v, needs);
        self.ops.push(Op::Scale { x, c, out });
        Ok(out)
    }

    /// Sum of all entries, as a rank-0 scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.node(x)?;
        let s = self.value(x).iter().sum();
        let needs = self.needs(&[x]);
        let out = self.push(vec![], vec![s], needs);
        self.ops.push(Op::Sum { x, out });
        Ok(out)
    }

    /// Rows `ids` of a `[V×d]` table.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2(table, "gather")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "gather row",
                    index: id,
                    limit: v,
                });
            }
            out.extend_from_slice(&self.value(table)[id * d..(id + 1) * d]);
        }
        let needs = self.needs(&[table]);
        let out = self.push(vec![ids.len(), d], out, needs);
        self.ops.push(Op::Gather {
            table,
            ids: ids.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn select_rows(&mut self, x: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (n, d) = self.dims2(x, "select_rows")?;
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(Error::Index {
                    what: "select row",
                    index: r,
                    limit: n,
                });
            }
            out.extend_from_slice(&self.value(x)[r * d..(r + 1) * d]);
        }
        let needs = self.needs(&[x]);
        let out = self.push(vec![rows.len(), d], out, needs);
        self.ops.push(Op::SelectRows {
            x,
            rows: rows.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Overwrites rows with constant vectors; gradient does not flow through replaced rows.
    pub fn replace_rows(
        &mut self,
        x: NodeId,
        rows: &[usize],
        values: &[Vec<f64>],
    ) -> Result<NodeId> {
        let (n, d) = self.dims2(x, "replace_rows")?;
        if rows.len() != values.len() {
            return Err(Error::Invalid(
                "replace_rows: rows/values length differ".into(),
            ));
        }
        let mut v = self.value(x).to_vec();
        for (&r, val) in rows.iter().zip(values) {
            if r >= n {
                return Err(Error::Index {
                    what: "replace row",
                    index: r,
                    limit: n,
                });
            }
            if val.len() != d {
                return Err(Error::shape("replace_rows", &[d], &[val.len()]));
            }
            v[r * d..(r + 1) * d].copy_from_slice(val);
        }
        let needs = self.needs(&[x]);
        let out = self.push(vec![n, d], v, needs);
        self.ops.push(Op::ReplaceRows {
            x,
            rows: rows.to_vec(),
            out,
        });
        Ok(out)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2(x, "layer_norm")?;
        if self.node(gain)?.shape != [d] || self.node(bias)?.shape != [d] {
            return Err(Error::shape("layer_norm", &[d], &self.nodes[gain.0].shape));
        }
        let mut out = vec![0.0; n * d];
        let mut mean = vec![0.0; n];
        let mut rstd = vec![0.0; n];
        {
            let xv = self.value(x);
            let g = self.value(gain);
            let b = self.value(bias);
            for r in 0..n {
                let row = &xv[r * d..(r + 1) * d];
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + LN_EPS).sqrt();
                mean[r] = mu;
                rstd[r] = rs;
                let o = &mut out[r * d..(r + 1) * d];
                for c in 0..d {
                    o[c] = (row[c] - mu) * rs * g[c] + b[c];
                }
            }
        }
        let needs = self.needs(&[x, gain, bias]);
        let out = self.push(vec![n, d], out, needs);
        self.ops.push(Op::LayerNorm {
            x,
            gain,
            bias,
            out,
            mean,
            rstd,
        });
        Ok(out)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.node(x)?;
        let v = self
            .value(x)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + tanh_exp(GELU_C * (x + GELU_A * x * x * x))))
            .collect();
        let needs = self.needs(&[x]);
        let out = self.push(self.shape(x).to_vec(), v, needs);
        self.ops.push(Op::Gelu { x, out });
        Ok(out)
    }

    /// `elu(x) + 1`, a positive feature map for linear attention.
    pub fn elu1(&mut self, x: NodeId) -> Result<NodeId> {
        self.node(x)?;
        let v = self
            .value(x)
            .iter()
            .map(|&x| if x > 0.0 { x + 1.0 } else { x.exp() })
            .collect();
        let needs = self.needs(&[x]);
        let out = self.push(self.shape(x).to_vec(), v, needs);
        self.ops.push(Op::Elu1 { x, out });
        Ok(out)
    }

    fn check_layout(&self, a: NodeId, layout: AttentionLayout, op: &'static str) -> Result<usize> {
        let (rows, width) = self.dims2(a, op)?;
        if rows != layout.rows() || layout.heads == 0 || width % layout.heads != 0 {
            return Err(Error::shape(
                op,
                &[rows, width],
                &[layout.rows(), layout.heads],
            ));
        }
        Ok(width)
    }

    /// Causal per-head query-key scores, shape `[batch·heads·seq × seq]`.
    /// Entries above the diagonal are exactly zero.
    pub fn attn_scores(
        &mut self,
        q: NodeId,
        k: NodeId,
        layout: AttentionLayout,
        scale: ScoreScale,
    ) -> Result<NodeId> {
        let width = self.check_layout(q, layout, "attn_scores")?;
        self.same_shape(q, k, "attn_scores")?;
        let AttentionLayout { batch, seq, heads } = layout;
        let dh = width / heads;
        let mut out = vec![0.0; layout.score_rows() * seq];
        {
            let qv = self.value(q);
            let kv = self.value(k);
            for b in 0..batch {
                for h in 0..heads {
                    let blk = (b * heads + h) * seq * seq;
                    let col = b * seq * width + h * dh;
                    gemm_view(
                        seq,
                        dh,
                        seq,
                        qv,
                        View::row_major(col, width),
                        kv,
                        View::transposed(col, width),
                        &mut out,
                        View::row_major(blk, seq),
                        false,
                    );
                    for i in 0..seq {
                        let s = scale_for(scale, i);
                        let row = &mut out[blk + i * seq..][..seq];
                        row[..=i].iter_mut().for_each(|v| *v *= s);
                        row[i + 1..].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
        let needs = self.needs(&[q, k]);
        let out = self.push(vec![layout.score_rows(), seq], out, needs);
        self.ops.push(Op::AttnScores {
            q,
            k,
            layout,
            scale,
            out,
        });
        Ok(out)
    }

    /// Row softmax with max subtraction; masked entries are exactly zero.
    pub fn softmax_rows(&mut self, x: NodeId, mask: &Mask) -> Result<NodeId> {
        let (n, m) = self.dims2(x, "softmax_rows")?;
        if let Mask::Explicit(mk) = mask {
            if mk.len() != n * m {
                return Err(Error::shape("softmax_rows mask", &[n, m], &[mk.len()]));
            }
        }
        if let Mask::Causal { period } = mask {
            if *period == 0 {
                return Err(Error::Invalid("causal mask period must be positive".into()));
            }
        }
        let mut out = vec![0.0; n * m];
        {
            let xv = self.value(x);
            for r in 0..n {
                let row = &xv[r * m..(r + 1) * m];
                let mut mx = f64::NEG_INFINITY;
                let mut any = false;
                for c in 0..m {
                    if !mask.masked(r, c, m) {
                        any = true;
                        mx = mx.max(row[c]);
                    }
                }
                if !any {
                    return Err(Error::Invalid(format!("softmax row {r} is fully masked")));
                }
                let o = &mut out[r * m..(r + 1) * m];
                let mut z = 0.0;
                for c in 0..m {
                    if !mask.masked(r, c, m) {
                        let e = (row[c] - mx).exp();
                        o[c] = e;
                        z += e;
                    }
                }
                let inv = 1.0 / z;
                for v in o.iter_mut() {
                    *v *= inv;
                }
            }
        }
        let needs = self.needs(&[x]);
        let out = self.push(vec![n, m], out, needs);
        self.ops.push(Op::Softmax { out, x });
        Ok(out)
    }

    /// Mixes values with causal weights `p` (`[batch·heads·seq × seq]`).
    pub fn attn_mix(&mut self, p: NodeId, v: NodeId, layout: AttentionLayout) -> Result<NodeId> {
        let width = self.check_layout(v, layout, "attn_mix")?;
        let (pr, pc) = self.dims2(p, "attn_mix")?;
        if pr != layout.score_rows() || pc != layout.seq {
            return Err(Error::shape(
                "attn_mix",
                &[pr, pc],
                &[layout.score_rows(), layout.seq],
            ));
        }
        let AttentionLayout { batch, seq, heads } = layout;
        let dh = width / heads;
        let mut out = vec![0.0; layout.rows() * width];
        {
            let pv = self.value(p);
            let vv = self.value(v);
            let mut tri = vec![0.0; seq * seq];
            for b in 0..batch {
                for h in 0..heads {
                    lower_triangle(
                        &pv[(b * heads + h) * seq * seq..][..seq * seq],
                        seq,
                        &mut tri,
                    );
                    let col = b * seq * width + h * dh;
                    gemm_view(
                        seq,
                        seq,
                        dh,
                        &tri,
                        View::row_major(0, seq),
                        vv,
                        View::row_major(col, width),
                        &mut out,
                        View::row_major(col, width),
                        false,
                    );
                }
            }
        }
        let needs = self.needs(&[p, v]);
        let out = self.push(vec![layout.rows(), width], out, needs);
        self.ops.push(Op::AttnMix { p, v, layout, out });
        Ok(out)
    }

    /// Mean negative log-softmax probability of `targets`, one per row.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (n, v) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::shape("cross_entropy", &[n, v], &[targets.len()]));
        }
        if n == 0 {
            return Err(Error::Invalid("cross_entropy over zero rows".into()));
        }
        let mut probs = vec![0.0; n * v];
        let mut loss = 0.0;
        {
            let lv = self.value(logits);
            for r in 0..n {
                let t = targets[r];
                if t >= v {
                    return Err(Error::Index {
                        what: "cross_entropy target",
                        index: t,
                        limit: v,
                    });
                }
                let row = &lv[r * v..(r + 1) * v];
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                let lz = z.ln() + mx;
                loss += lz - row[t];
                for c in 0..v {
                    probs[r * v + c] = (row[c] - lz).exp();
                }
            }
        }
        let needs = self.needs(&[logits]);
        let out = self.push(vec![], vec![loss / n as f64], needs);
        self.ops.push(Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            out,
        });
        Ok(out)
    }

    pub fn l2_normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2(x, "l2_normalize_rows")?;
        let mut out = self.value(x).to_vec();
        let mut norms = vec![0.0; n];
        for (r, row) in out.chunks_exact_mut(d).enumerate() {
            let nr = dot(row, row).sqrt();
            if nr <= 0.0 || !nr.is_finite() {
                return Err(Error::NonFinite(format!("row {r} has norm {nr}")));
            }
            norms[r] = nr;
            row.iter_mut().for_each(|v| *v /= nr);
        }
        let needs = self.needs(&[x]);
        let out = self.push(vec![n, d], out, needs);
        self.ops.push(Op::L2NormalizeRows { x, norms, out });
        Ok(out)
    }

    /// Supervised contrastive negative log-likelihood over a similarity
    /// matrix `sim` (`[n×n]`, already temperature-scaled). Rows sharing a
    /// label are positives; each anchor's denominator excludes itself.
    /// Averaged over all ordered positive pairs.
    pub fn contrastive_nll(&mut self, sim: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (n, m) = self.dims2(sim, "contrastive_nll")?;
        if n != m || labels.len() != n {
            return Err(Error::shape("contrastive_nll", &[n, m], &[labels.len()]));
        }
        let positives: Vec<usize> = (0..n)
            .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count())
            .collect();
        let pairs: usize = positives.iter().sum();
        if pairs == 0 {
            return Err(Error::Invalid(
                "contrastive batch has no positive pairs".into(),
            ));
        }
        let mut probs = vec![0.0; n * n];
        let mut total = 0.0;
        {
            let s = self.value(sim);
            for i in 0..n {
                let row = &s[i * n..(i + 1) * n];
                let mx = (0..n)
                    .filter(|&k| k != i)
                    .map(|k| row[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n)
                    .filter(|&k| k != i)
                    .map(|k| (row[k] - mx).exp())
                    .sum();
                let lse = z.ln() + mx;
                for k in 0..n {
                    if k != i {
                        probs[i * n + k] = (row[k] - lse).exp();
                    }
                }
                for j in 0..n {
                    if j != i && labels[j] == labels[i] {
                        total += lse - row[j];
                    }
                }
            }
        }
        let needs = self.needs(&[sim]);
        let out = self.push(vec![], vec![total / pairs as f64], needs);
        self.ops.push(Op::ContrastiveNll {
            sim,
            labels: labels.to_vec(),
            probs,
            positives,
            pairs,
            out,
        });
        Ok(out)
    }

    // ------------------------------------------------------------------
    // backward
    // ------------------------------------------------------------------

    fn take_grad(&mut self, id: NodeId) -> Vec<f64> {
        let n = &mut self.nodes[id.0];
        n.grad.take().unwrap_or_else(|| vec![0.0; n.value.len()])
    }

    fn put_grad(&mut self, id: NodeId, g: Vec<f64>) {
        self.nodes[id.0].grad = Some(g);
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Reverse sweep from a scalar `loss`. Previous gradients are cleared;
    /// every differentiable node ends up with a gradient (zeros if unreached).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let n = self.node(loss)?;
        if n.value.len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                n.shape
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        let ops = std::mem::take(&mut self.ops);
        for op in ops.iter().rev() {
            self.backward_op(op);
        }
        self.ops = ops;
        for node in &mut self.nodes {
            if node.needs_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        Ok(())
    }

    fn backward_op(&mut self, op: &Op) {
        let out = op_output(op);
        let Some(gout) = self.nodes[out.0].grad.take() else {
            return;
        };
        match op {
            Op::Matmul { a, b, .. } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    let mut ga = self.take_grad(*a);
                    kernels::gemm_nt(m, n, k, &gout, self.value(*b), &mut ga, true);
                    self.put_grad(*a, ga);
                }
                if self.wants(*b) {
                    let mut gb = self.take_grad(*b);
                    kernels::gemm_tn(k, m, n, self.value(*a), &gout, &mut gb, true);
                    self.put_grad(*b, gb);
                }
            }
            Op::MatmulNt { a, b, .. } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[0];
                if self.wants(*a) {
                    let mut ga = self.take_grad(*a);
                    kernels::gemm_nn(m, n, k, &gout, self.value(*b), &mut ga, true);
                    self.put_grad(*a, ga);
                }
                if self.wants(*b) {
                    let mut gb = self.take_grad(*b);
                    kernels::gemm_tn(n, m, k, &gout, self.value(*a), &mut gb, true);
                    self.put_grad(*b, gb);
                }
            }
            Op::Add { a, b, .. } => {
                for id in [*a, *b] {
                    if self.wants(id) {
                        let mut g = self.take_grad(id);
                        axpy(1.0, &gout, &mut g);
                        self.put_grad(id, g);
                    }
                }
            }
            Op::Mul { a, b, .. } => {
                if self.wants(*a) {
                    let mut g = self.take_grad(*a);
                    for ((gi, go), bv) in g.iter_mut().zip(&gout).zip(self.value(*b)) {
                        *gi += go * bv;
                    }
                    self.put_grad(*a, g);
                }
                if self.wants(*b) {
                    let mut g = self.take_grad(*b);
                    for ((gi, go), av) in g.iter_mut().zip(&gout).zip(self.value(*a)) {
                        *gi += go * av;
                    }
                    self.put_grad(*b, g);
                }
            }
            Op::AddBias { x, bias, .. } => {
                if self.wants(*x) {
                    let mut g = self.take_grad(*x);
                    axpy(1.0, &gout, &mut g);
                    self.put_grad(*x, g);
                }
                if self.wants(*bias) {
                    let mut g = self.take_grad(*bias);
                    let d = g.len();
                    for row in gout.chunks_exact(d) {
                        axpy(1.0, row, &mut g);
                    }
                    self.put_grad(*bias, g);
                }
            }
            Op::Scale { x, c, .. } => {
                if self.wants(*x) {
                    let mut g = self.take_grad(*x);
                    axpy(*c, &gout, &mut g);
                    self.put_grad(*x, g);
                }
            }
            Op::Sum { x, .. } => {
                if self.wants(*x) {
                    let mut g = self.take_grad(*x);
                    g.iter_mut().for_each(|v| *v += gout[0]);
                    self.put_grad(*x, g);
                }
            }
            Op::Gather { table, ids, .. } => {
                if self.wants(*table) {
                    let d = self.shape(*table)[1];
                    let mut g = self.take_grad(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(1.0, &gout[r * d..(r + 1) * d], &mut g[id * d..(id + 1) * d]);
                    }
                    self.put_grad(*table, g);
                }
            }
            Op::SelectRows { x, rows, .. } => {
                if self.wants(*x) {
                    let d = self.shape(*x)[1];
                    let mut g = self.take_grad(*x);
                    for (r, &src) in rows.iter().enumerate() {
                        axpy(
                            1.0,
                            &gout[r * d..(r + 1) * d],
                            &mut g[src * d..(src + 1) * d],
                        );
                    }
                    self.put_grad(*x, g);
                }
            }
            Op::ReplaceRows { x, rows, .. } => {
                if self.wants(*x) {
                    let d = self.shape(*x)[1];
                    let mut pass = gout.clone();
                    for &r in rows {
                        pass[r * d..(r + 1) * d].iter_mut().for_each(|v| *v = 0.0);
                    }
                    let mut g = self.take_grad(*x);
                    axpy(1.0, &pass, &mut g);
                    self.put_grad(*x, g);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
                ..
            } => {
                let d = self.shape(*x)[1];
                let n = mean.len();
                let mut xhat = self.value(*x).to_vec();
                for r in 0..n {
                    for v in &mut xhat[r * d..(r + 1) * d] {
                        *v = (*v - mean[r]) * rstd[r];
                    }
                }
                if self.wants(*gain) {
                    let mut g = self.take_grad(*gain);
                    for r in 0..n {
                        for c in 0..d {
                            g[c] += gout[r * d + c] * xhat[r * d + c];
                        }
                    }
                    self.put_grad(*gain, g);
                }
                if self.wants(*bias) {
                    let mut g = self.take_grad(*bias);
                    for row in gout.chunks_exact(d) {
                        axpy(1.0, row, &mut g);
                    }
                    self.put_grad(*bias, g);
                }
                if self.wants(*x) {
                    let gamma = self.value(*gain).to_vec();
                    let mut g = self.take_grad(*x);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..n {
                        let go = &gout[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        for c in 0..d {
                            dxhat[c] = go[c] * gamma[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dot(&dxhat, xh) / d as f64;
                        let gr = &mut g[r * d..(r + 1) * d];
                        for c in 0..d {
                            gr[c] += rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                    self.put_grad(*x, g);
                }
            }
            Op::Gelu { x, .. } => {
                if self.wants(*x) {
                    let mut g = self.take_grad(*x);
                    for ((gi, go), &x) in g.iter_mut().zip(&gout).zip(self.value(*x)) {
                        let u = GELU_C * (x + GELU_A * x * x * x);
                        let t = tanh_exp(u);
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        *gi += go * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
                    }
                    self.put_grad(*x, g);
                }
            }
            Op::Elu1 { x, .. } => {
                if self.wants(*x) {
                    let mut g = self.take_grad(*x);
                    for ((gi, go), &x) in g.iter_mut().zip(&gout).zip(self.value(*x)) {
                        *gi += go * if x > 0.0 { 1.0 } else { x.exp() };
                    }
                    self.put_grad(*x, g);
                }
            }
            Op::AttnScores {
                q,
                k,
                layout,
                scale,
                ..
            } => {
                let AttentionLayout { batch, seq, heads } = *layout;
                let width = self.shape(*q)[1];
                let dh = width / heads;
                // scaled lower-triangular upstream gradient per (batch, head)
                let mut blocks = vec![0.0; gout.len()];
                for r in 0..batch * heads {
                    lower_triangle(
                        &gout[r * seq * seq..][..seq * seq],
                        seq,
                        &mut blocks[r * seq * seq..][..seq * seq],
                    );
                    for i in 0..seq {
                        let s = scale_for(*scale, i);
                        blocks[r * seq * seq + i * seq..][..=i]
                            .iter_mut()
                            .for_each(|v| *v *= s);
                    }
                }
                for is_q in [true, false] {
                    let (target, other) = if is_q { (*q, *k) } else { (*k, *q) };
                    if !self.wants(target) {
                        continue;
                    }
                    let mut g = self.take_grad(target);
                    let ov = self.value(other);
                    for b in 0..batch {
                        for h in 0..heads {
                            let blk = (b * heads + h) * seq * seq;
                            let col = b * seq * width + h * dh;
                            let gv = if is_q {
                                View::row_major(blk, seq)
                            } else {
                                View::transposed(blk, seq)
                            };
                            gemm_view(
                                seq,
                                seq,
                                dh,
                                &blocks,
                                gv,
                                ov,
                                View::row_major(col, width),
                                &mut g,
                                View::row_major(col, width),
                                true,
                            );
                        }
                    }
                    self.put_grad(target, g);
                }
            }
            Op::Softmax { x, out } => {
                if self.wants(*x) {
                    let m = self.shape(*x)[1];
                    let mut g = self.take_grad(*x);
                    let y = self.value(*out);
                    for r in 0..y.len() / m.max(1) {
                        let yr = &y[r * m..(r + 1) * m];
                        let gr = &gout[r * m..(r + 1) * m];
                        let s = dot(yr, gr);
                        let dst = &mut g[r * m..(r + 1) * m];
                        for c in 0..m {
                            dst[c] += yr[c] * (gr[c] - s);
                        }
                    }
                    self.put_grad(*x, g);
                }
            }
            Op::AttnMix { p, v, layout, .. } => {
                let AttentionLayout { batch, seq, heads } = *layout;
                let width = self.shape(*v)[1];
                let dh = width / heads;
                let mut tri = vec![0.0; seq * seq];
                if self.wants(*p) {
                    let mut g = self.take_grad(*p);
                    let vv = self.value(*v);
                    for b in 0..batch {
                        for h in 0..heads {
                            let col = b * seq * width + h * dh;
                            gemm_view(
                                seq,
                                dh,
                                seq,
                                &gout,
                                View::row_major(col, width),
                                vv,
                                View::transposed(col, width),
                                &mut tri,
                                View::row_major(0, seq),
                                false,
                            );
                            let blk = &mut g[(b * heads + h) * seq * seq..][..seq * seq];
                            for i in 0..seq {
                                axpy(
                                    1.0,
                                    &tri[i * seq..i * seq + i + 1],
                                    &mut blk[i * seq..i * seq + i + 1],
                                );
                            }
                        }
                    }
                    self.put_grad(*p, g);
                }
                if self.wants(*v) {
                    let mut g = self.take_grad(*v);
                    let pv = self.value(*p);
                    for b in 0..batch {
                        for h in 0..heads {
                            lower_triangle(
                                &pv[(b * heads + h) * seq * seq..][..seq * seq],
                                seq,
                                &mut tri,
                            );
                            let col = b * seq * width + h * dh;
                            gemm_view(
                                seq,
                                seq,
                                dh,
                                &tri,
                                View::transposed(0, seq),
                                &gout,
                                View::row_major(col, width),
                                &mut g,
                                View::row_major(col, width),
                                true,
                            );
                        }
                    }
                    self.put_grad(*v, g);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                ..
            } => {
                if self.wants(*logits) {
                    let n = targets.len();
                    let v = probs.len() / n;
                    let scale = gout[0] / n as f64;
                    let mut g = self.take_grad(*logits);
                    for r in 0..n {
                        for c in 0..v {
                            let ind = if c == targets[r] { 1.0 } else { 0.0 };
                            g[r * v + c] += scale * (probs[r * v + c] - ind);
                        }
                    }
                    self.put_grad(*logits, g);
                }
            }
            Op::L2NormalizeRows { x, norms, out } => {
                if self.wants(*x) {
                    let d = self.shape(*x)[1];
                    let mut g = self.take_grad(*x);
                    let y = self.value(*out);
                    for (r, &nr) in norms.iter().enumerate() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &gout[r * d..(r + 1) * d];
                        let s = dot(yr, gr);
                        let dst = &mut g[r * d..(r + 1) * d];
                        for c in 0..d {
                            dst[c] += (gr[c] - yr[c] * s) / nr;
                        }
                    }
                    self.put_grad(*x, g);
                }
            }
            Op::ContrastiveNll {
                sim,
                labels,
                probs,
                positives,
                pairs,
                ..
            } => {
                if self.wants(*sim) {
                    let n = labels.len();
                    let scale = gout[0] / *pairs as f64;
                    let mut g = self.take_grad(*sim);
                    for i in 0..n {
                        for k in 0..n {
                            if k == i {
                                continue;
                            }
                            let ind = if labels[k] == labels[i] { 1.0 } else { 0.0 };
                            g[i * n + k] += scale * (positives[i] as f64 * probs[i * n + k] - ind);
                        }
                    }
                    self.put_grad(*sim, g);
                }
            }
        }
        self.nodes[out.0].grad = Some(gout);
    }
}

/// Copies a square block keeping only entries on or below the diagonal.
fn lower_triangle(src: &[f64], n: usize, dst: &mut [f64]) {
    for i in 0..n {
        dst[i * n..i * n + i + 1].copy_from_slice(&src[i * n..i * n + i + 1]);
        dst[i * n + i + 1..(i + 1) * n]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
}

#[inline]
fn scale_for(scale: ScoreScale, i: usize) -> f64 {
    match scale {
        ScoreScale::Constant(c) => c,
        ScoreScale::CausalCount => 1.0 / (i + 1) as f64,
    }
}

fn op_output(op: &Op) -> NodeId {
    match op {
        Op::Matmul { out, .. }
        | Op::MatmulNt { out, .. }
        | Op::Add { out, .. }
        | Op::AddBias { out, .. }
        | Op::Mul { out, .. }
        | Op::Scale { out, .. }
        | Op::Sum { out, .. }
        | Op::Gather { out, .. }
        | Op::SelectRows { out, .. }
        | Op::ReplaceRows { out, .. }
        | Op::LayerNorm { out, .. }
        | Op::Gelu { out, .. }
        | Op::Elu1 { out, .. }
        | Op::AttnScores { out, .. }
        | Op::Softmax { out, .. }
        | Op::AttnMix { out, .. }
        | Op::CrossEntropy { out, .. }
        | Op::L2NormalizeRows { out, .. }
        | Op::ContrastiveNll { out, .. } => *out,
    }
}
