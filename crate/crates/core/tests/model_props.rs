mod common;

use common::{random_tensor, rng};
use polywsd::encoder::{EncoderConfig, EncoderParams};
use polywsd::fusion::{
    attention_head, fuse_word, replicate_gloss, score_pair, FusionConfig, FusionParams, HeadParams,
};
use polywsd::model::{gloss_representation, word_representation, ModelParams};
use polywsd::predict::argmax_first;
use polywsd::tensor::{finite_diff_check, Graph, ParamSet, Tensor};
use polywsd::{Error, RunConfig};
use proptest::prelude::*;

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 30,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        max_seq_len: 12,
    }
}

#[test]
fn swapping_context_words_moves_the_target() {
    let cfg = encoder_config();
    for seed in 0..10 {
        let p = EncoderParams::init(&cfg, &mut rng(seed)).unwrap();
        let a = p.encode(&cfg, &[5, 6, 7, 8, 9]).unwrap();
        let b = p.encode(&cfg, &[5, 6, 9, 8, 7]).unwrap();
        let ra = a.target_representation(1).unwrap();
        let rb = b.target_representation(1).unwrap();
        let max_diff = ra
            .data()
            .iter()
            .zip(rb.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-9, "seed {seed}: diff {max_diff}");
    }
}

#[test]
fn output_rows_track_input_length() {
    let cfg = encoder_config();
    let p = EncoderParams::init(&cfg, &mut rng(1)).unwrap();
    for n in 1..=cfg.max_words() {
        let ids: Vec<usize> = (0..n).map(|i| 4 + i % 20).collect();
        assert_eq!(p.encode(&cfg, &ids).unwrap().tokens.rows(), n + 2);
    }
    let too_long: Vec<usize> = vec![4; cfg.max_words() + 1];
    assert!(matches!(p.encode(&cfg, &too_long), Err(Error::Contract(_))));
}

#[test]
fn target_and_cls_are_plain_slices() {
    let cfg = encoder_config();
    let p = EncoderParams::init(&cfg, &mut rng(2)).unwrap();
    let out = p.encode(&cfg, &[4, 5, 6, 7, 8]).unwrap();
    for t in 0..5 {
        assert_eq!(out.target_representation(t).unwrap().data(), out.tokens.row(t + 1));
    }
    assert_eq!(out.cls_representation().data(), out.tokens.row(0));
    assert_ne!(out.cls_representation(), out.target_representation(2).unwrap());
    match out.target_representation(5) {
        Err(Error::Index { index, len }) => assert_eq!((index, len), (5, 5)),
        other => panic!("unexpected {other:?}"),
    }
    let one = p.encode(&cfg, &[9]).unwrap();
    let ten = p.encode(&cfg, &[9; 10]).unwrap();
    assert_eq!(one.cls_representation().shape(), &[8]);
    assert_eq!(ten.cls_representation().shape(), &[8]);
}

fn grads_all_zero(g: &Graph, vars: &[polywsd::tensor::Var]) -> bool {
    vars.iter().all(|v| g.grad(*v).unwrap().iter().all(|x| *x == 0.0))
}

#[test]
fn encoder_gradients_are_disjoint() {
    let run = RunConfig::gradcheck();
    let config = run.model_for_vocab(30);
    let params = ModelParams::init(&config, 4).unwrap();
    let names = params.named_tensors();
    let split = |prefix: &str| -> Vec<usize> {
        names
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| n.starts_with(prefix))
            .map(|(i, _)| i)
            .collect()
    };
    let context_idx = split("context.");
    let gloss_idx = split("gloss.");
    assert!(!context_idx.is_empty() && !gloss_idx.is_empty());

    // loss touching only the gloss side
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let s = gloss_representation(&mut g, &config, &vars, &[5, 6, 7]).unwrap();
    let loss = g.sum(s);
    g.backward(loss).unwrap();
    let all = vars.vars();
    let ctx: Vec<_> = context_idx.iter().map(|&i| all[i]).collect();
    let gls: Vec<_> = gloss_idx.iter().map(|&i| all[i]).collect();
    assert!(grads_all_zero(&g, &ctx));
    assert!(!grads_all_zero(&g, &gls));

    // and only the word side
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let w = word_representation(&mut g, &config, &vars, &[5, 6, 7], 1).unwrap();
    let loss = g.sum(w);
    g.backward(loss).unwrap();
    let all = vars.vars();
    let ctx: Vec<_> = context_idx.iter().map(|&i| all[i]).collect();
    let gls: Vec<_> = gloss_idx.iter().map(|&i| all[i]).collect();
    assert!(grads_all_zero(&g, &gls));
    assert!(!grads_all_zero(&g, &ctx));
}

proptest! {
    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..7, scale in 0.1f64..20.0) {
        let mut r = rng(seed);
        let head = HeadParams::init(&mut r, 6, 3, 3);
        let mut g = Graph::new();
        let q = g.constant(random_tensor(&mut r, &[2, 6], scale));
        let k = g.constant(random_tensor(&mut r, &[rows, 6], scale));
        let hv = head.bind(&mut g, false);
        let out = attention_head(&mut g, q, k, k, &hv).unwrap();
        let w = g.value(out.weights);
        prop_assert_eq!(w.shape(), &[2, rows]);
        for i in 0..2 {
            let s: f64 = w.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn score_is_linear_in_gloss(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let word = random_tensor(&mut r, &[3, 4], 2.0);
        let g1 = random_tensor(&mut r, &[3, 4], 2.0);
        let g2 = random_tensor(&mut r, &[3, 4], 2.0);
        let mix = Tensor::new(
            vec![3, 4],
            g1.data().iter().zip(g2.data()).map(|(x, y)| a * x + b * y).collect(),
        )
        .unwrap();
        let mut g = Graph::new();
        let w = g.constant(word);
        let score = |g: &mut Graph, t: Tensor| {
            let s = g.constant(t);
            let v = score_pair(g, w, s).unwrap();
            g.value(v).item().unwrap()
        };
        let lhs = score(&mut g, mix);
        let rhs = a * score(&mut g, g1) + b * score(&mut g, g2);
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn mean_and_sum_aggregation_pick_the_same_sense(seed in any::<u64>(), m in 1usize..5) {
        let mut r = rng(seed);
        let word = random_tensor(&mut r, &[m, 4], 1.0);
        let glosses: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, &[m, 4], 1.0)).collect();
        let mut g = Graph::new();
        let w = g.constant(word.clone());
        let mean: Vec<f64> = glosses
            .iter()
            .map(|t| {
                let s = g.constant(t.clone());
                let v = score_pair(&mut g, w, s).unwrap();
                g.value(v).item().unwrap()
            })
            .collect();
        let sum: Vec<f64> = glosses
            .iter()
            .map(|t| t.data().iter().zip(word.data()).map(|(x, y)| x * y).sum())
            .collect();
        prop_assert_eq!(argmax_first(&mean).unwrap(), argmax_first(&sum).unwrap());
    }
}

/// Single-query multi-head attention written out with loops.
fn single_query_oracle(target: &[f64], context: &Tensor, fusion: &FusionParams) -> Vec<f64> {
    let d = target.len();
    let vec_mat = |v: &[f64], m: &Tensor| -> Vec<f64> {
        let cols = m.cols();
        (0..cols)
            .map(|j| (0..v.len()).map(|i| v[i] * m.data()[i * cols + j]).sum())
            .collect()
    };
    let mut concat = Vec::new();
    for head in &fusion.heads {
        let q = vec_mat(target, &head.w_q);
        let d_k = q.len() as f64;
        let keys: Vec<Vec<f64>> = (0..context.rows()).map(|i| vec_mat(context.row(i), &head.w_k)).collect();
        let vals: Vec<Vec<f64>> = (0..context.rows()).map(|i| vec_mat(context.row(i), &head.w_v)).collect();
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| k.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / d_k.sqrt())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut out = vec![0.0; vals[0].len()];
        for (e, v) in exps.iter().zip(&vals) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += e / z * x;
            }
        }
        concat.extend(out);
    }
    let fused = vec_mat(&concat, &fusion.w_o);
    assert_eq!(fused.len(), d);
    fused
}

#[test]
fn single_code_fusion_matches_hand_oracle() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let cfg = FusionConfig {
            poly_m: 1,
            n_heads: 2,
            d_model: 6,
        };
        let fusion = FusionParams::init(&cfg, &mut r).unwrap();
        let target = random_tensor(&mut r, &[6], 1.0);
        let context = random_tensor(&mut r, &[5, 6], 1.0);
        let gloss = random_tensor(&mut r, &[6], 1.0);

        let mut g = Graph::new();
        let fv = fusion.bind(&mut g, false);
        let t = g.constant(target.clone());
        let c = g.constant(context.clone());
        let s = g.constant(gloss.clone());
        let word = fuse_word(&mut g, &cfg, &fv, t, c).unwrap();
        let gl = replicate_gloss(&mut g, s, 1).unwrap();
        let score = score_pair(&mut g, word, gl).unwrap();

        let expected = single_query_oracle(target.data(), &context, &fusion);
        for (a, b) in g.value(word).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        let dot: f64 = expected.iter().zip(gloss.data()).map(|(a, b)| a * b).sum();
        assert!((g.value(score).item().unwrap() - dot).abs() < 1e-9);
    }
}

#[derive(Clone)]
struct FusionInputs {
    fusion: FusionParams,
    target: Tensor,
    context: Tensor,
    gloss: Tensor,
}

impl ParamSet for FusionInputs {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for h in &self.fusion.heads {
            out.extend([&h.w_q, &h.w_k, &h.w_v]);
        }
        out.extend([&self.fusion.w_o, &self.target, &self.context, &self.gloss]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for h in &mut self.fusion.heads {
            out.extend([&mut h.w_q, &mut h.w_k, &mut h.w_v]);
        }
        out.push(&mut self.fusion.w_o);
        out.push(&mut self.target);
        out.push(&mut self.context);
        out.push(&mut self.gloss);
        out
    }
}

#[test]
fn fusion_head_passes_gradient_check() {
    let cfg = FusionConfig {
        poly_m: 3,
        n_heads: 2,
        d_model: 8,
    };
    let mut r = rng(77);
    let inputs = FusionInputs {
        fusion: FusionParams::init(&cfg, &mut r).unwrap(),
        target: random_tensor(&mut r, &[8], 1.0),
        context: random_tensor(&mut r, &[6, 8], 1.0),
        gloss: random_tensor(&mut r, &[8], 1.0),
    };
    let report = finite_diff_check(
        |g, p: &FusionInputs| {
            let fv = p.fusion.bind(g, true);
            let t = g.param(p.target.clone());
            let c = g.param(p.context.clone());
            let s = g.param(p.gloss.clone());
            let word = fuse_word(g, &cfg, &fv, t, c)?;
            let gl = replicate_gloss(g, s, cfg.poly_m)?;
            let score = score_pair(g, word, gl)?;
            let mut vars = Vec::new();
            for h in &fv.heads {
                vars.extend([h.w_q, h.w_k, h.w_v]);
            }
            vars.extend([fv.w_o, t, c, s]);
            Ok((score, vars))
        },
        &inputs,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gloss_side_rows_identical_and_shaped_like_word_side() {
    let run = RunConfig::gradcheck();
    let config = run.model_for_vocab(30);
    let params = ModelParams::init(&config, 3).unwrap();
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let w = word_representation(&mut g, &config, &vars, &[4, 5, 6, 7], 2).unwrap();
    let s = gloss_representation(&mut g, &config, &vars, &[8, 9]).unwrap();
    assert_eq!(g.shape(w), g.shape(s));
    let rows = g.value(s);
    for i in 1..rows.rows() {
        assert_eq!(rows.row(i), rows.row(0));
    }
}
