use rand_distr::{Distribution, Normal};

use crate::autodiff::{kernels::axpy, AttentionLayout, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng;

use super::attention::{attention_kinds, feature_maps};
use super::config::ModelConfig;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

const TOK: usize = 0;
const POS: usize = 1;
const LNF_G: usize = 2;
const LNF_B: usize = 3;
const UNEMBED: usize = 4;
const UNEMBED_B: usize = 5;
const GLOBALS: usize = 6;
const PER_LAYER: usize = 16;

#[derive(Clone, Copy)]
enum P {
    Ln1G,
    Ln1B,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2G,
    Ln2B,
    W1,
    B1,
    W2,
    B2,
}

const LAYER_NAMES: [&str; PER_LAYER] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
    "attn.wo", "attn.bo", "ln2.gain", "ln2.bias", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];

fn lp(layer: usize, p: P) -> usize {
    GLOBALS + layer * PER_LAYER + p as usize
}

/// Replaces the residual-stream state after `layer` at `position`.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub layer: usize,
    pub position: usize,
    pub vector: Vec<f64>,
}

/// Which positions' hidden states a trace keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Keep {
    Last,
    All,
    Positions(Vec<usize>),
}

/// One sequence to run through the model.
#[derive(Debug, Clone)]
pub struct TraceRequest<'a> {
    pub tokens: &'a [usize],
    pub injection: Option<&'a Injection>,
    pub keep: Keep,
}

impl<'a> TraceRequest<'a> {
    pub fn new(tokens: &'a [usize], keep: Keep) -> Self {
        Self {
            tokens,
            injection: None,
            keep,
        }
    }
}

/// Captured per-layer states of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Positions kept in `hidden`, in ascending order.
    pub positions: Vec<usize>,
    /// Layer `0..=L` residual states, each `[positions.len() × d]` (position-major).
    pub hidden: Vec<Tensor>,
    /// Attention weights `[layer][head]`, each `[p × p]`; empty unless requested.
    pub attn: Vec<Vec<Tensor>>,
    /// `[p × V]`.
    pub logits: Tensor,
}

impl ForwardTrace {
    pub fn hidden_at(&self, layer: usize, position: usize) -> Option<&[f64]> {
        let idx = self.positions.binary_search(&position).ok()?;
        self.hidden.get(layer).map(|h| h.row(idx))
    }

    pub fn last_logits(&self) -> &[f64] {
        let p = self.logits.shape()[0];
        self.logits.row(p - 1)
    }

    pub fn seq_len(&self) -> usize {
        self.logits.shape()[0]
    }
}

/// Node handles of a recorded batch forward.
pub(crate) struct Recorded {
    pub params: Vec<NodeId>,
    /// Per layer `0..=L`, `[batch·seq × d]`.
    pub hidden: Vec<NodeId>,
    /// Per layer, `[batch·heads·seq × seq]` mixing weights.
    pub attn: Vec<NodeId>,
    pub layout: AttentionLayout,
}

/// Pre-norm decoder-only transformer with learned positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: ModelConfig,
    params: Vec<Tensor>,
}

impl TransformerModel {
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let resid =
            Normal::new(0.0, INIT_STD / (2.0 * config.layers as f64).sqrt()).expect("valid std");
        let mut params = Vec::with_capacity(GLOBALS + PER_LAYER * config.layers);
        for (i, shape) in Self::shapes(&config).into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let name_kind = param_kind(i);
            let data = match name_kind {
                Kind::Gain => vec![1.0; n],
                Kind::Zero => vec![0.0; n],
                Kind::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Kind::Residual => (0..n).map(|_| resid.sample(&mut rng)).collect(),
            };
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, params })
    }

    fn shapes(c: &ModelConfig) -> Vec<Vec<usize>> {
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        let mut s = vec![
            vec![v, d],
            vec![c.max_len, d],
            vec![d],
            vec![d],
            vec![d, v],
            vec![v],
        ];
        for _ in 0..c.layers {
            s.extend([
                vec![d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, f],
                vec![f],
                vec![f, d],
                vec![d],
            ]);
        }
        s
    }

    /// Parameter names in storage order.
    pub fn param_names(config: &ModelConfig) -> Vec<String> {
        let mut names: Vec<String> = [
            "tok_emb",
            "pos_emb",
            "ln_f.gain",
            "ln_f.bias",
            "unembed.weight",
            "unembed.bias",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for l in 0..config.layers {
            names.extend(LAYER_NAMES.iter().map(|n| format!("layers.{l}.{n}")));
        }
        names
    }

    /// Rebuilds a model from named parameters (any order).
    pub fn from_named(config: ModelConfig, named: &[(String, Tensor)]) -> Result<Self> {
        config.validate()?;
        let shapes = Self::shapes(&config);
        let mut params = Vec::with_capacity(shapes.len());
        for (name, shape) in Self::param_names(&config).iter().zip(shapes) {
            let t = named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("load parameter", t.shape(), &shape));
            }
            params.push(Tensor::new(shape, t.data().to_vec())?);
        }
        Ok(Self { config, params })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        Self::param_names(&self.config)
            .into_iter()
            .zip(self.params.iter().cloned())
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Invalid("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_len {
            return Err(Error::Index {
                what: "sequence length",
                index: tokens.len(),
                limit: self.config.max_len,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: t,
                limit: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn check_injection(&self, inj: &Injection, len: usize) -> Result<()> {
        if inj.layer == 0 || inj.layer > self.config.layers {
            return Err(Error::Index {
                what: "injection layer",
                index: inj.layer,
                limit: self.config.layers + 1,
            });
        }
        if inj.position >= len {
            return Err(Error::Index {
                what: "injection position",
                index: inj.position,
                limit: len,
            });
        }
        if inj.vector.len() != self.config.d_model {
            return Err(Error::shape(
                "injection",
                &[self.config.d_model],
                &[inj.vector.len()],
            ));
        }
        Ok(())
    }

    /// Records a forward pass over equal-length sequences. `injections`
    /// pairs a batch index with the patch applied to that sequence.
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        seqs: &[&[usize]],
        injections: &[(usize, &Injection)],
        trainable: bool,
    ) -> Result<Recorded> {
        let c = &self.config;
        let batch = seqs.len();
        if batch == 0 {
            return Err(Error::Invalid("empty batch".into()));
        }
        let seq = seqs[0].len();
        for s in seqs {
            if s.len() != seq {
                return Err(Error::shape("batch lengths", &[seq], &[s.len()]));
            }
            self.check_tokens(s)?;
        }
        for (b, inj) in injections {
            if *b >= batch {
                return Err(Error::Index {
                    what: "injection batch index",
                    index: *b,
                    limit: batch,
                });
            }
            self.check_injection(inj, seq)?;
        }
        let kind = attention_kinds().get(&c.attention_kind)?;
        let phi = feature_maps().get(&c.feature_map)?;
        let layout = AttentionLayout {
            batch,
            seq,
            heads: c.n_heads,
        };

        let params: Vec<NodeId> = self
            .params
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t)
                } else {
                    tape.leaf(t)
                }
            })
            .collect();

        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let tok = tape.gather(params[TOK], &ids)?;
        let pos = tape.gather(params[POS], &positions)?;
        let mut x = tape.add(tok, pos)?;

        let patch = |tape: &mut Tape, x: NodeId, layer: usize| -> Result<NodeId> {
            let (rows, vals): (Vec<usize>, Vec<Vec<f64>>) = injections
                .iter()
                .filter(|(_, inj)| inj.layer == layer)
                .map(|(b, inj)| (b * seq + inj.position, inj.vector.clone()))
                .unzip();
            if rows.is_empty() {
                Ok(x)
            } else {
                tape.replace_rows(x, &rows, &vals)
            }
        };

        let mut hidden = vec![x];
        let mut attn = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = |w: P| params[lp(l, w)];
            let a = tape.layer_norm(x, p(P::Ln1G), p(P::Ln1B))?;
            let q = linear(tape, a, p(P::Wq), p(P::Bq))?;
            let k = linear(tape, a, p(P::Wk), p(P::Bk))?;
            let v = linear(tape, a, p(P::Wv), p(P::Bv))?;
            let w = kind.weights(tape, q, k, layout, c.head_dim(), phi)?;
            attn.push(w);
            let mixed = tape.attn_mix(w, v, layout)?;
            let o = linear(tape, mixed, p(P::Wo), p(P::Bo))?;
            x = tape.add(x, o)?;
            let m = tape.layer_norm(x, p(P::Ln2G), p(P::Ln2B))?;
            let m = linear(tape, m, p(P::W1), p(P::B1))?;
            let m = tape.gelu(m)?;
            let m = linear(tape, m, p(P::W2), p(P::B2))?;
            x = tape.add(x, m)?;
            x = patch(tape, x, l + 1)?;
            hidden.push(x);
        }
        Ok(Recorded {
            params,
            hidden,
            attn,
            layout,
        })
    }

    /// Records final norm + unembedding on selected rows of the last layer.
    pub(crate) fn record_logits(
        &self,
        tape: &mut Tape,
        rec: &Recorded,
        rows: &[usize],
    ) -> Result<NodeId> {
        let last = *rec.hidden.last().expect("at least the embedding layer");
        let h = tape.select_rows(last, rows)?;
        let n = tape.layer_norm(h, rec.params[LNF_G], rec.params[LNF_B])?;
        linear(tape, n, rec.params[UNEMBED], rec.params[UNEMBED_B])
    }

    /// Final norm then unembedding of one hidden vector.
    pub fn apply_classifier(&self, h: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        if h.len() != d {
            return Err(Error::shape("apply_classifier", &[d], &[h.len()]));
        }
        let mu = h.iter().sum::<f64>() / d as f64;
        let var = h.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        let (g, b) = (self.params[LNF_G].data(), self.params[LNF_B].data());
        let v = self.config.vocab_size;
        let w = self.params[UNEMBED].data();
        let mut out = self.params[UNEMBED_B].data().to_vec();
        for c in 0..d {
            let hn = (h[c] - mu) * rs * g[c] + b[c];
            axpy(hn, &w[c * v..(c + 1) * v], &mut out);
        }
        Ok(out)
    }

    /// Single-sequence forward. Without `capture`, only the last position's
    /// hidden states are kept and attention maps are skipped.
    pub fn forward(
        &self,
        tokens: &[usize],
        capture: bool,
        injection: Option<&Injection>,
    ) -> Result<ForwardTrace> {
        let req = TraceRequest {
            tokens,
            injection,
            keep: if capture { Keep::All } else { Keep::Last },
        };
        Ok(self.trace_batch(&[req], capture)?.pop().expect("one trace"))
    }

    /// Batched inference. Sequences are grouped by length and run in
    /// memory-bounded chunks; results come back in request order.
    pub fn trace_batch(
        &self,
        requests: &[TraceRequest],
        attention: bool,
    ) -> Result<Vec<ForwardTrace>> {
        let mut order: Vec<usize> = (0..requests.len()).collect();
        order.sort_by_key(|&i| requests[i].tokens.len());
        let mut out: Vec<Option<ForwardTrace>> = vec![None; requests.len()];
        let mut start = 0;
        while start < order.len() {
            let len = requests[order[start]].tokens.len();
            let chunk = self.chunk_size(len);
            let mut end = start;
            while end < order.len()
                && end - start < chunk
                && requests[order[end]].tokens.len() == len
            {
                end += 1;
            }
            let idx = &order[start..end];
            let traces = self.trace_chunk(requests, idx, attention)?;
            for (i, t) in idx.iter().zip(traces) {
                out[*i] = Some(t);
            }
            start = end;
        }
        Ok(out
            .into_iter()
            .map(|t| t.expect("every request traced"))
            .collect())
    }

    /// Sequences per chunk so that one recorded tape stays near 256 MiB.
    fn chunk_size(&self, len: usize) -> usize {
        let c = &self.config;
        let per_layer = 2 * c.n_heads * len * len + len * (3 * c.d_ff + 16 * c.d_model);
        let per_seq = c.layers * per_layer + len * c.d_model * 3;
        (32 * 1024 * 1024 / per_seq.max(1)).clamp(1, 256)
    }

    fn trace_chunk(
        &self,
        requests: &[TraceRequest],
        idx: &[usize],
        attention: bool,
    ) -> Result<Vec<ForwardTrace>> {
        let seqs: Vec<&[usize]> = idx.iter().map(|&i| requests[i].tokens).collect();
        let injections: Vec<(usize, &Injection)> = idx
            .iter()
            .enumerate()
            .filter_map(|(b, &i)| requests[i].injection.map(|inj| (b, inj)))
            .collect();
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, &seqs, &injections, false)?;
        let seq = rec.layout.seq;
        let (d, heads) = (self.config.d_model, self.config.n_heads);
        let mut traces = Vec::with_capacity(idx.len());
        for (b, &i) in idx.iter().enumerate() {
            let positions: Vec<usize> = match &requests[i].keep {
                Keep::Last => vec![seq - 1],
                Keep::All => (0..seq).collect(),
                Keep::Positions(ps) => {
                    let mut ps = ps.clone();
                    ps.sort_unstable();
                    ps.dedup();
                    if let Some(&bad) = ps.iter().find(|&&p| p >= seq) {
                        return Err(Error::Index {
                            what: "kept position",
                            index: bad,
                            limit: seq,
                        });
                    }
                    ps
                }
            };
            let hidden = rec
                .hidden
                .iter()
                .map(|&h| {
                    let v = tape.value(h);
                    let mut data = Vec::with_capacity(positions.len() * d);
                    for &p in &positions {
                        data.extend_from_slice(&v[(b * seq + p) * d..][..d]);
                    }
                    Tensor::matrix(positions.len(), d, data)
                })
                .collect::<Result<Vec<_>>>()?;
            let attn = if attention {
                rec.attn
                    .iter()
                    .map(|&a| {
                        let v = tape.value(a);
                        (0..heads)
                            .map(|h| {
                                let off = (b * heads + h) * seq * seq;
                                Tensor::matrix(seq, seq, v[off..off + seq * seq].to_vec())
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let last = tape.value(*rec.hidden.last().expect("layers"));
            let mut logits = Vec::with_capacity(seq * self.config.vocab_size);
            for p in 0..seq {
                logits.extend(self.apply_classifier(&last[(b * seq + p) * d..][..d])?);
            }
            traces.push(ForwardTrace {
                positions,
                hidden,
                attn,
                logits: Tensor::matrix(seq, self.config.vocab_size, logits)?,
            });
        }
        Ok(traces)
    }
}

fn linear(tape: &mut Tape, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

enum Kind {
    Gain,
    Zero,
    Normal,
    Residual,
}

fn param_kind(index: usize) -> Kind {
    match index {
        TOK | POS | UNEMBED => Kind::Normal,
        LNF_G => Kind::Gain,
        LNF_B | UNEMBED_B => Kind::Zero,
        i => match (i - GLOBALS) % PER_LAYER {
            x if x == P::Ln1G as usize || x == P::Ln2G as usize => Kind::Gain,
            x if x == P::Wo as usize || x == P::W2 as usize => Kind::Residual,
            x if x == P::Wq as usize
                || x == P::Wk as usize
                || x == P::Wv as usize
                || x == P::W1 as usize =>
            {
                Kind::Normal
            }
            _ => Kind::Zero,
        },
    }
}

/// Index of the most likely class; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
