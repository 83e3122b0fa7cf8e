use icl_lens::model::{
    attention_terms, feature_maps, linear_attention_step, Injection, Keep, LinearAttentionParams,
    ModelConfig, TraceRequest, TransformerModel,
};
use icl_lens::Error;
use proptest::prelude::*;

fn config(seed: u64) -> ModelConfig {
    ModelConfig {
        layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        max_len: 24,
        seed,
        ..ModelConfig::default()
    }
}

fn model(seed: u64) -> TransformerModel {
    TransformerModel::init(config(seed)).unwrap()
}

const TOKENS: [usize; 8] = [5, 1, 6, 2, 7, 1, 8, 2];

#[test]
fn init_is_seeded() {
    assert_eq!(model(1).params(), model(1).params());
    assert_ne!(model(1).params(), model(2).params());
    assert_eq!(ModelConfig::default().head_dim(), 16);
    let bad = ModelConfig {
        n_heads: 3,
        ..config(0)
    };
    assert!(TransformerModel::init(bad).is_err());
}

#[test]
fn trace_shapes() {
    let m = model(3);
    let t = m.forward(&TOKENS, true, None).unwrap();
    assert_eq!(t.logits.shape(), &[8, m.config().vocab_size]);
    assert_eq!(t.hidden.len(), 3);
    assert!(t.hidden.iter().all(|h| h.shape() == [8, 16]));
    assert_eq!(t.attn.len(), 2);
    assert_eq!(t.attn[0].len(), 2);
    for a in t.attn.iter().flatten() {
        for i in 0..8 {
            let row = a.row(i);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row[i + 1..].iter().all(|&x| x == 0.0));
        }
    }
    assert!(m.forward(&[0; 25], false, None).is_err());
    assert!(m.forward(&[999], false, None).is_err());
}

#[test]
fn causal_prefix_is_unchanged() {
    let m = model(4);
    let a = m.forward(&TOKENS, true, None).unwrap();
    let mut changed = TOKENS;
    changed[5] = 9;
    let b = m.forward(&changed, true, None).unwrap();
    for l in 0..=2 {
        for p in 0..5 {
            assert_eq!(a.hidden_at(l, p), b.hidden_at(l, p), "layer {l} pos {p}");
        }
        assert_ne!(a.hidden_at(l, 5), b.hidden_at(l, 5));
    }
}

#[test]
fn noop_injection_is_bitwise_identity() {
    let m = model(5);
    let base = m.forward(&TOKENS, true, None).unwrap();
    for layer in 1..=2 {
        for position in [0, 3, 7] {
            let inj = Injection {
                layer,
                position,
                vector: base.hidden_at(layer, position).unwrap().to_vec(),
            };
            let again = m.forward(&TOKENS, false, Some(&inj)).unwrap();
            assert_eq!(again.last_logits(), base.last_logits());
        }
    }
    let bad = Injection {
        layer: 3,
        position: 0,
        vector: vec![0.0; 16],
    };
    assert!(m.forward(&TOKENS, false, Some(&bad)).is_err());
    let embedding = Injection { layer: 0, ..bad };
    assert!(m.forward(&TOKENS, false, Some(&embedding)).is_err());
}

#[test]
fn injection_changes_later_positions_only() {
    let m = model(6);
    let base = m.forward(&TOKENS, true, None).unwrap();
    let inj = Injection {
        layer: 1,
        position: 4,
        vector: vec![1.0; 16],
    };
    let t = m.forward(&TOKENS, true, Some(&inj)).unwrap();
    assert_eq!(t.hidden_at(1, 4).unwrap(), &[1.0; 16]);
    assert_eq!(t.hidden_at(2, 3), base.hidden_at(2, 3));
    assert_ne!(t.hidden_at(2, 5), base.hidden_at(2, 5));
}

#[test]
fn classifier_matches_forward_logits() {
    let m = model(7);
    let t = m.forward(&TOKENS, false, None).unwrap();
    let h = t.hidden_at(2, 7).unwrap();
    assert_eq!(m.apply_classifier(h).unwrap(), t.last_logits());
    // at init the final norm has unit gain and zero bias, and the unembedding bias is zero
    let z = m.apply_classifier(&[0.0; 16]).unwrap();
    assert!(z.iter().all(|&x| x == z[0]));
    assert!(matches!(
        m.apply_classifier(&[0.0; 3]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn batched_trace_matches_single() {
    let m = model(8);
    let seqs: Vec<Vec<usize>> = vec![
        TOKENS.to_vec(),
        TOKENS[..5].to_vec(),
        vec![10, 1, 11],
        TOKENS[2..].to_vec(),
    ];
    let reqs: Vec<TraceRequest> = seqs
        .iter()
        .map(|s| TraceRequest::new(s, Keep::All))
        .collect();
    let batch = m.trace_batch(&reqs, false).unwrap();
    for (s, t) in seqs.iter().zip(&batch) {
        let single = m.forward(s, true, None).unwrap();
        assert_eq!(t.logits, single.logits);
        assert_eq!(t.hidden, single.hidden);
    }
    let some = m
        .trace_batch(
            &[TraceRequest::new(&TOKENS, Keep::Positions(vec![1, 5]))],
            false,
        )
        .unwrap();
    assert_eq!(some[0].positions, vec![1, 5]);
    let full = m.forward(&TOKENS, true, None).unwrap();
    assert_eq!(some[0].hidden_at(2, 5), full.hidden_at(2, 5));
}

#[test]
fn linear_attention_model_runs() {
    let cfg = ModelConfig {
        attention_kind: "linear_normalized".into(),
        feature_map: "elu1".into(),
        ..config(9)
    };
    let m = TransformerModel::init(cfg).unwrap();
    let t = m.forward(&TOKENS, true, None).unwrap();
    assert!(t.logits.data().iter().all(|x| x.is_finite()));
    let bad = ModelConfig {
        attention_kind: "nope".into(),
        ..config(9)
    };
    assert!(matches!(
        TransformerModel::init(bad),
        Err(Error::UnknownName { .. })
    ));
}

/// `mean_i (q·k_i) v_i` over demos and the query itself, with identity maps.
fn scalar_oracle(demos: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let mut all: Vec<&[f64]> = demos.iter().map(|d| d.as_slice()).collect();
    all.push(q);
    let mut out = vec![0.0; q.len()];
    for h in &all {
        let z: f64 = q.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
        for (o, v) in out.iter_mut().zip(h.iter()) {
            *o += z * v;
        }
    }
    out.iter().map(|o| o / all.len() as f64).collect()
}

#[test]
fn linear_attention_examples() {
    let phi = feature_maps().get("identity").unwrap();
    let p2 = LinearAttentionParams::identity(2);
    let demos = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let out = linear_attention_step(&demos, &[1.0, 1.0], &p2, phi).unwrap();
    assert_eq!(out, scalar_oracle(&demos, &[1.0, 1.0]));
    assert_eq!(out, vec![1.0, 1.0]);

    // K = 0: the query's own term
    let q = [0.5, -2.0];
    let z: f64 = q.iter().map(|x| x * x).sum();
    assert_eq!(
        linear_attention_step(&[], &q, &p2, phi).unwrap(),
        vec![z * q[0], z * q[1]]
    );

    // identical tokens: count normalization cancels
    let same = vec![q.to_vec(); 5];
    let out = linear_attention_step(&same, &q, &p2, phi).unwrap();
    assert!(out.iter().zip(&q).all(|(o, x)| (o - z * x).abs() < 1e-12));

    let terms = attention_terms(&demos, &[1.0, 1.0], &p2, phi).unwrap();
    assert_eq!(terms.len(), 3);
    assert!(linear_attention_step(&[vec![1.0]], &q, &p2, phi).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_attention_matches_oracle(
        demos in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 0..8),
        q in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let phi = feature_maps().get("identity").unwrap();
        let got = linear_attention_step(&demos, &q, &LinearAttentionParams::identity(3), phi).unwrap();
        let want = scalar_oracle(&demos, &q);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
