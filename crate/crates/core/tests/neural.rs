//! Model contract tests: gradient checks against central finite differences,
//! an independent naive forward pass, causality, incremental decoding and
//! checkpoint round trips.

use drst::neural::{
    load_checkpoint, save_checkpoint, Context, LabeledSequence, Mode, Model, ModelConfig, Readout, WeightedSequence,
};
use drst::scalar::{softmax, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{finite_difference_check, jitter};

fn small(context: Context, readout: Readout, vocab: usize, width: usize, heads: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab,
        width,
        layers,
        heads,
        max_len: 12,
        context,
        readout,
        init_scale: 1.0,
    }
}

fn causal_batch(vocab: usize, seed: u64) -> Vec<WeightedSequence<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3)
        .map(|_| {
            let n = rng.gen_range(3..9);
            let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
            let mut weights: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.5)).collect();
            weights[0] = 0.0;
            WeightedSequence { tokens, weights }
        })
        .collect()
}

#[test]
fn generator_gradient_matches_finite_differences() {
    let cfg = small(Context::Causal, Readout::NextToken, 11, 8, 2, 2);
    let mut model = Model::<f64>::new(cfg, 1).unwrap();
    jitter(&mut model, 2, 0.2);
    let batch = causal_batch(11, 3);
    let (_, grad) = model.weighted_nll_gradient(&batch).unwrap();
    let loss = |m: &Model<f64>| m.weighted_nll_gradient(&batch).unwrap().0;
    finite_difference_check(&model, &grad, &loss, 4);
}

#[test]
fn language_model_gradient_matches_finite_differences() {
    let cfg = small(Context::Causal, Readout::NextToken, 9, 12, 3, 1);
    let mut model = Model::<f64>::new(cfg, 5).unwrap();
    jitter(&mut model, 6, 0.2);
    let batch: Vec<_> = causal_batch(9, 7)
        .into_iter()
        .map(|mut s| {
            s.weights = (0..s.tokens.len()).map(|t| if t == 0 { 0.0 } else { 1.0 }).collect();
            s
        })
        .collect();
    let (_, grad) = model.weighted_nll_gradient(&batch).unwrap();
    let loss = |m: &Model<f64>| m.weighted_nll_gradient(&batch).unwrap().0;
    finite_difference_check(&model, &grad, &loss, 8);
}

#[test]
fn classifier_gradient_matches_finite_differences() {
    let cfg = small(Context::Bidirectional, Readout::Classify { classes: 2 }, 10, 8, 4, 2);
    let mut model = Model::<f64>::new(cfg, 9).unwrap();
    jitter(&mut model, 10, 0.2);
    let batch = vec![
        LabeledSequence { tokens: vec![3, 4, 5, 9], label: 0, weight: 1.0 },
        LabeledSequence { tokens: vec![7, 1], label: 1, weight: 0.5 },
        LabeledSequence { tokens: vec![2, 2, 8, 6, 0], label: 1, weight: 1.0 },
    ];
    let (_, grad) = model.classification_gradient(&batch).unwrap();
    let loss = |m: &Model<f64>| m.classification_gradient(&batch).unwrap().0;
    finite_difference_check(&model, &grad, &loss, 11);
}

#[test]
fn zero_weights_give_zero_gradient_and_gradient_is_linear_in_weights() {
    let cfg = small(Context::Causal, Readout::NextToken, 7, 8, 2, 1);
    let model = Model::<f64>::new(cfg, 12).unwrap();
    let mut batch = causal_batch(7, 13);
    let (_, g1) = model.weighted_nll_gradient(&batch).unwrap();
    for s in &mut batch {
        for w in &mut s.weights {
            *w *= 2.5;
        }
    }
    let (_, g2) = model.weighted_nll_gradient(&batch).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.5 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
    for s in &mut batch {
        s.weights.iter_mut().for_each(|w| *w = 0.0);
    }
    let (loss, g0) = model.weighted_nll_gradient(&batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g0.iter().all(|&g| g == 0.0));
}

#[test]
fn softmax_of_logits_is_a_distribution_and_forward_is_pure() {
    let cfg = small(Context::Causal, Readout::NextToken, 13, 8, 2, 2);
    let model = Model::<f64>::new(cfg, 14).unwrap();
    let a = model.next_token_logits(&[1, 5, 7]).unwrap();
    let b = model.next_token_logits(&[1, 5, 7]).unwrap();
    assert_eq!(a, b);
    let p = softmax(&a);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(a.iter().all(|x| x.is_finite()));
}

#[test]
fn zeroed_output_head_gives_uniform_distribution() {
    let cfg = small(Context::Causal, Readout::NextToken, 17, 8, 2, 2);
    let mut model = Model::<f64>::new(cfg, 15).unwrap();
    model.segment_mut("head.w").unwrap().iter_mut().for_each(|w| *w = 0.0);
    let p = softmax(&model.next_token_logits(&[3, 9]).unwrap());
    for &pi in &p {
        assert!((pi - 1.0 / 17.0).abs() < 1e-12);
    }
}

#[test]
fn overlong_prefix_is_rejected() {
    let cfg = small(Context::Causal, Readout::NextToken, 5, 8, 2, 1);
    let model = Model::<f64>::new(cfg, 0).unwrap();
    assert!(model.next_token_logits(&[1; 13]).is_err());
    assert!(model.next_token_logits(&[1; 12]).is_ok());
}

#[test]
fn log_probs_sum_to_log_of_stepwise_product_and_respect_causality() {
    let cfg = small(Context::Causal, Readout::NextToken, 9, 8, 2, 2);
    let model = Model::<f64>::new(cfg, 16).unwrap();
    let seq = vec![0usize, 4, 2, 8, 1, 3];
    let lp = model.sequence_log_probs(&seq, &[true; 6]).unwrap();
    let mut product = 1.0;
    for t in 1..seq.len() {
        let p = softmax(&model.next_token_logits(&seq[..t]).unwrap());
        product *= p[seq[t]];
    }
    assert!((lp.total() - product.ln()).abs() < 1e-9);

    let mut permuted = seq.clone();
    permuted[4..].reverse();
    let lp2 = model.sequence_log_probs(&permuted, &[true; 6]).unwrap();
    for t in 0..4 {
        assert_eq!(lp.values[t], lp2.values[t]);
    }
    let masked = model.sequence_log_probs(&seq, &[true, true, false, true, false, true]).unwrap();
    let expect = lp.values[1] + lp.values[3] + lp.values[5];
    assert!((masked.total() - expect).abs() < 1e-12);
}

#[test]
fn causal_logits_ignore_future_positions() {
    let cfg = small(Context::Causal, Readout::NextToken, 9, 8, 2, 2);
    let model = Model::<f64>::new(cfg, 17).unwrap();
    let a = model.all_logits(&[1, 2, 3, 4, 5]).unwrap();
    let b = model.all_logits(&[1, 2, 3, 8, 0]).unwrap();
    assert_eq!(a[..3 * 9], b[..3 * 9]);
}

#[test]
fn incremental_decoding_matches_full_forward_bit_exact() {
    let cfg = small(Context::Causal, Readout::NextToken, 9, 8, 2, 2);
    let model = Model::<f64>::new(cfg, 18).unwrap();
    let seq = [4usize, 1, 7, 7, 2, 0];
    let full = model.all_logits(&seq).unwrap();
    let mut state = model.decoder().unwrap();
    for (t, &tok) in seq.iter().enumerate() {
        let step = model.decode_step(&mut state, tok).unwrap();
        assert_eq!(step, full[t * 9..(t + 1) * 9]);
    }
}

#[test]
fn classifier_outputs_distribution_and_simplex_attention_rows() {
    let cfg = small(Context::Bidirectional, Readout::Classify { classes: 2 }, 10, 8, 4, 2);
    let model = Model::<f64>::new(cfg, 19).unwrap();
    let out = model.classify(&[3, 4, 5]).unwrap();
    assert!((out.probs[0] + out.probs[1] - 1.0).abs() < 1e-6);
    assert_eq!(out.attention.layers, 2);
    assert_eq!(out.attention.heads, 4);
    for l in 0..2 {
        for h in 0..4 {
            for q in 0..4 {
                let row = out.attention.row(l, h, q);
                assert!(row.iter().all(|&a| a >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
    assert!(model.classify(&[]).is_err());
}

#[test]
fn parameter_count_is_a_function_of_config() {
    let cfg = ModelConfig::generator(80, 48);
    let a = Model::<f32>::new(cfg.clone(), 1).unwrap();
    let b = Model::<f64>::new(cfg.clone(), 2).unwrap();
    assert_eq!(a.param_count(), b.param_count());
    assert_eq!(a.param_count(), cfg.param_count());
    let bad = ModelConfig { heads: 3, ..cfg };
    assert!(Model::<f32>::new(bad, 0).is_err());
}

#[test]
fn frozen_handles_reject_mutation() {
    let cfg = small(Context::Causal, Readout::NextToken, 5, 8, 2, 1);
    let model = Model::<f64>::new(cfg, 0).unwrap();
    let mut frozen = model.snapshot();
    assert!(frozen.params_mut().is_err());
    let g = vec![0.0; frozen.param_count()];
    assert!(frozen.sgd_update(&g, 0.1, None).is_err());
}

#[test]
fn sgd_clipping_and_zero_learning_rate() {
    let cfg = small(Context::Causal, Readout::NextToken, 5, 8, 2, 1);
    let model = Model::<f64>::new(cfg, 0).unwrap();
    let n = model.param_count();

    let mut g = vec![0.0; n];
    g[0] = 0.3;
    g[1] = 0.4; // norm 0.5
    let mut m = model.clone();
    m.sgd_update(&g, 1.0, Some(1.0)).unwrap();
    let delta: Vec<f64> = model.params().iter().zip(m.params()).map(|(a, b)| a - b).collect();
    assert!((delta[0] - 0.3).abs() < 1e-12 && (delta[1] - 0.4).abs() < 1e-12);

    let mut g4 = vec![0.0; n];
    g4[2] = 4.0; // norm 4
    let mut m = model.clone();
    let pre = m.sgd_update(&g4, 1.0, Some(1.0)).unwrap();
    assert_eq!(pre, 4.0);
    let applied: f64 = model.params().iter().zip(m.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!((applied - 1.0).abs() < 1e-9);
    for i in (0..n).filter(|&i| i != 2) {
        assert_eq!(model.params()[i], m.params()[i]);
    }

    let mut m = model.clone();
    m.sgd_update(&g4, 0.0, Some(1.0)).unwrap();
    assert!(model.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let mut bad = g4.clone();
    bad[5] = f64::NAN;
    assert!(m.sgd_update(&bad, 0.1, None).is_err());
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Context::Bidirectional, Readout::Classify { classes: 2 }, 10, 8, 4, 2);
    let model = Model::<f32>::new(cfg, 20).unwrap();
    let p1 = dir.path().join("a.bin");
    let m1 = save_checkpoint(&model, &p1, "vh", 3, 20).unwrap();
    let (back, manifest) = load_checkpoint::<f32>(&p1, Mode::Frozen).unwrap();
    assert_eq!(manifest, m1);
    assert!(back.is_frozen());
    let p2 = dir.path().join("b.bin");
    save_checkpoint(&back, &p2, "vh", 3, 20).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert!(load_checkpoint::<f64>(&p1, Mode::Frozen).is_err());
}

// ---- independent naive forward pass -------------------------------------

fn seg<'a>(m: &'a Model<f64>, name: &str) -> &'a [f64] {
    m.segment(name).unwrap()
}

fn matvec(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out).map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[i * out + j]).sum::<f64>()).collect()
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g[i] + b[i]).collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Straight-line reference implementation of the causal model.
fn naive_next_token_probs(m: &Model<f64>, tokens: &[usize]) -> Vec<Vec<f64>> {
    let c = m.config();
    let d = c.width;
    let hd = d / c.heads;
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| (0..d).map(|i| seg(m, "tok_emb")[tok * d + i] + seg(m, "pos_emb")[t * d + i]).collect())
        .collect();
    for l in 0..c.layers {
        let p = |n: &str| seg(m, &format!("layer{l}.{n}")).to_vec();
        let ln: Vec<Vec<f64>> = xs.iter().map(|x| layer_norm(x, &p("ln1.gain"), &p("ln1.bias"))).collect();
        let q: Vec<_> = ln.iter().map(|x| matvec(x, &p("attn.wq"), &p("attn.bq"))).collect();
        let k: Vec<_> = ln.iter().map(|x| matvec(x, &p("attn.wk"), &p("attn.bk"))).collect();
        let v: Vec<_> = ln.iter().map(|x| matvec(x, &p("attn.wv"), &p("attn.bv"))).collect();
        for t in 0..xs.len() {
            let mut ctx = vec![0.0; d];
            for h in 0..c.heads {
                let r = h * hd..(h + 1) * hd;
                let scores: Vec<f64> = (0..=t)
                    .map(|s| q[t][r.clone()].iter().zip(&k[s][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let w = softmax(&scores);
                for s in 0..=t {
                    for i in r.clone() {
                        ctx[i] += w[s] * v[s][i];
                    }
                }
            }
            let o = matvec(&ctx, &p("attn.wo"), &p("attn.bo"));
            for i in 0..d {
                xs[t][i] += o[i];
            }
        }
        for x in xs.iter_mut() {
            let h: Vec<f64> = matvec(&layer_norm(x, &p("ln2.gain"), &p("ln2.bias")), &p("mlp.w1"), &p("mlp.b1"))
                .into_iter()
                .map(gelu)
                .collect();
            let o = matvec(&h, &p("mlp.w2"), &p("mlp.b2"));
            for i in 0..d {
                x[i] += o[i];
            }
        }
    }
    xs.iter()
        .map(|x| softmax(&matvec(&layer_norm(x, seg(m, "lnf.gain"), seg(m, "lnf.bias")), seg(m, "head.w"), seg(m, "head.b"))))
        .collect()
}

#[test]
fn two_token_vocab_single_layer_matches_manual_forward() {
    let cfg = small(Context::Causal, Readout::NextToken, 2, 4, 2, 1);
    let mut model = Model::<f64>::new(cfg, 21).unwrap();
    jitter(&mut model, 22, 1.0);
    let seq = [0usize, 1, 1, 0, 1];
    let expected = naive_next_token_probs(&model, &seq);
    let logits = model.all_logits(&seq).unwrap();
    for t in 0..seq.len() {
        let p = softmax(&logits[t * 2..(t + 1) * 2]);
        for j in 0..2 {
            assert!((p[j] - expected[t][j]).abs() < 1e-12);
        }
    }
    let lp = model.sequence_log_probs(&seq, &[true; 5]).unwrap();
    let manual: f64 = (1..seq.len()).map(|t| expected[t - 1][seq[t]].ln()).sum();
    assert!((lp.total() - manual).abs() < 1e-12);
}

#[test]
fn f32_and_f64_models_agree() {
    let cfg = ModelConfig::generator(30, 20);
    let m64 = Model::<f64>::new(cfg, 23).unwrap();
    let m32: Model<f32> = m64.cast();
    let a = m64.next_token_logits(&[1, 2, 3, 10, 29]).unwrap();
    let b = m32.next_token_logits(&[1, 2, 3, 10, 29]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y.f64()).abs() < 1e-4);
    }
}
