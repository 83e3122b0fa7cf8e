//! Shared finite-difference cases for every tape primitive.

#![allow(dead_code)]

use icl_lens::autodiff::{grad_check, AttentionLayout, Mask, NodeId, ScoreScale, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-4;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// `sum(w ⊙ y)` with fixed random weights, so no gradient entry is trivially zero.
pub fn weighted_sum(tape: &mut Tape, y: NodeId, seed: u64) -> icl_lens::Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, tape.shape(y));
    let w = tape.leaf(&w);
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

/// Largest relative error of each primitive against central differences.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut check =
        |name: &'static str,
         shape: &[usize],
         seed: u64,
         f: &dyn Fn(&mut Tape, NodeId) -> icl_lens::Result<NodeId>| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = uniform(&mut rng, shape);
            out.push((name, grad_check(f, &x, EPS).unwrap()));
        };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let other = uniform(&mut rng, &[5, 3]);
    let other_nt = uniform(&mut rng, &[2, 5]);
    let same = uniform(&mut rng, &[4, 5]);
    let bias = uniform(&mut rng, &[5]);
    let table = uniform(&mut rng, &[6, 5]);

    check("matmul lhs", &[4, 5], 1, &|t, x| {
        let b = t.leaf(&other);
        let y = t.matmul(x, b)?;
        weighted_sum(t, y, 100)
    });
    check("matmul rhs", &[3, 4], 2, &|t, x| {
        let a = t.leaf(&other);
        let y = t.matmul(a, x)?;
        weighted_sum(t, y, 101)
    });
    check("matmul_nt lhs", &[4, 5], 3, &|t, x| {
        let b = t.leaf(&other_nt);
        let y = t.matmul_nt(x, b)?;
        weighted_sum(t, y, 102)
    });
    check("matmul_nt rhs", &[3, 5], 4, &|t, x| {
        let a = t.leaf(&same);
        let y = t.matmul_nt(a, x)?;
        weighted_sum(t, y, 103)
    });
    check("add", &[4, 5], 5, &|t, x| {
        let b = t.leaf(&same);
        let y = t.add(x, b)?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 104)
    });
    check("mul", &[4, 5], 6, &|t, x| {
        let b = t.leaf(&same);
        let y = t.mul(b, x)?;
        weighted_sum(t, y, 105)
    });
    check("add_bias x", &[4, 5], 7, &|t, x| {
        let b = t.leaf(&bias);
        let y = t.add_bias(x, b)?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 106)
    });
    check("add_bias bias", &[5], 8, &|t, x| {
        let a = t.leaf(&same);
        let y = t.add_bias(a, x)?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 107)
    });
    check("scale", &[4, 5], 9, &|t, x| {
        let y = t.scale(x, -1.7)?;
        let y = t.mul(y, x)?;
        weighted_sum(t, y, 108)
    });
    check("gather", &[6, 5], 10, &|t, x| {
        let y = t.gather(x, &[0, 3, 3, 5, 1])?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 109)
    });
    check("select_rows", &[4, 5], 11, &|t, x| {
        let y = t.select_rows(x, &[3, 0, 3])?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 110)
    });
    check("replace_rows", &[4, 5], 12, &|t, x| {
        let y = t.replace_rows(x, &[1], &[vec![0.5; 5]])?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 111)
    });
    check("layer_norm x", &[4, 5], 13, &|t, x| {
        let g = t.leaf(&bias);
        let b = t.leaf(&Tensor::vector(table.row(2).to_vec()));
        let y = t.layer_norm(x, g, b)?;
        weighted_sum(t, y, 112)
    });
    check("layer_norm gain", &[5], 14, &|t, g| {
        let x = t.leaf(&same);
        let b = t.leaf(&bias);
        let y = t.layer_norm(x, g, b)?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 113)
    });
    check("layer_norm bias", &[5], 15, &|t, b| {
        let x = t.leaf(&same);
        let g = t.leaf(&bias);
        let y = t.layer_norm(x, g, b)?;
        let y = t.mul(y, y)?;
        weighted_sum(t, y, 114)
    });
    check("gelu", &[4, 5], 16, &|t, x| {
        let y = t.scale(x, 3.0)?;
        let y = t.gelu(y)?;
        weighted_sum(t, y, 115)
    });
    check("elu1", &[4, 5], 17, &|t, x| {
        let y = t.elu1(x)?;
        weighted_sum(t, y, 116)
    });
    check("softmax none", &[4, 5], 18, &|t, x| {
        let y = t.softmax_rows(x, &Mask::None)?;
        weighted_sum(t, y, 117)
    });
    check("softmax causal", &[6, 3], 19, &|t, x| {
        let y = t.softmax_rows(x, &Mask::Causal { period: 3 })?;
        weighted_sum(t, y, 118)
    });
    let explicit: Vec<bool> = (0..20).map(|i| i % 3 == 1).collect();
    check("softmax explicit", &[4, 5], 20, &|t, x| {
        let y = t.softmax_rows(x, &Mask::Explicit(explicit.clone()))?;
        weighted_sum(t, y, 119)
    });
    check("cross_entropy", &[4, 7], 21, &|t, x| {
        let y = t.scale(x, 2.0)?;
        t.cross_entropy(y, &[6, 0, 3, 3])
    });
    check("l2_normalize_rows", &[4, 5], 22, &|t, x| {
        let y = t.l2_normalize_rows(x)?;
        weighted_sum(t, y, 120)
    });
    check("contrastive_nll", &[6, 6], 23, &|t, x| {
        let y = t.scale(x, 2.0)?;
        t.contrastive_nll(y, &[0, 1, 0, 2, 1, 0])
    });
    check("sum", &[3, 2], 24, &|t, x| {
        let y = t.mul(x, x)?;
        t.sum(y)
    });
    let layout = AttentionLayout {
        batch: 2,
        seq: 4,
        heads: 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let k_in = uniform(&mut rng, &[8, 6]);
    let q_in = uniform(&mut rng, &[8, 6]);
    let v_in = uniform(&mut rng, &[8, 6]);
    let p_in = {
        let mut t = Tape::new();
        let s = t.leaf(&uniform(&mut rng, &[16, 4]));
        let p = t.softmax_rows(s, &Mask::Causal { period: 4 }).unwrap();
        t.tensor(p)
    };
    for scale in [ScoreScale::Constant(0.7), ScoreScale::CausalCount] {
        check("attn_scores q", &[8, 6], 40, &|t, q| {
            let k = t.leaf(&k_in);
            let s = t.attn_scores(q, k, layout, scale)?;
            weighted_sum(t, s, 130)
        });
        check("attn_scores k", &[8, 6], 41, &|t, k| {
            let q = t.leaf(&q_in);
            let s = t.attn_scores(q, k, layout, scale)?;
            weighted_sum(t, s, 131)
        });
        check("attn_scores shared", &[8, 6], 42, &|t, x| {
            let s = t.attn_scores(x, x, layout, scale)?;
            weighted_sum(t, s, 132)
        });
    }
    check("attn_mix p", &[16, 4], 43, &|t, p| {
        let v = t.leaf(&v_in);
        let y = t.attn_mix(p, v, layout)?;
        weighted_sum(t, y, 133)
    });
    check("attn_mix v", &[8, 6], 44, &|t, v| {
        let p = t.leaf(&p_in);
        let y = t.attn_mix(p, v, layout)?;
        weighted_sum(t, y, 134)
    });
    check("attention block", &[8, 6], 45, &|t, x| {
        let s = t.attn_scores(x, x, layout, ScoreScale::Constant(0.5))?;
        let p = t.softmax_rows(s, &Mask::Causal { period: 4 })?;
        let y = t.attn_mix(p, x, layout)?;
        weighted_sum(t, y, 135)
    });
    out
}
