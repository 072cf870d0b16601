use std::collections::BTreeSet;
use std::fmt::Debug;
use std::path::{Path, PathBuf};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tdnr::cli::dispatch_with;
use tdnr::data::{
    generate_synthetic_corpus, parse_behaviors, parse_news_table, sample_training_instances,
    tokenize, words, AbstractView, NewsArticle, PaddedTokens, ResolvedImpression, SynthConfig,
    Vocabulary, PAD_ID,
};
use tdnr::diffcore::{finite_difference_check, Graph, Tensor, Var};
use tdnr::encoders::{
    additive_attention, encode_candidate_news, encode_field_tokens, encode_user_fields,
    encode_user_masked, field_token_lists, mfke_field_sequence, Field, ModelDims, ModelParams,
};
use tdnr::eval::{auc, mrr, ndcg_at_k};
use tdnr::objectives::{self, tape};
use tdnr::training::{init_params, resume, train, Checkpoint, Dataset, TrainConfig, Variant};
use tdnr::Result;

pub const CASES: u32 = 100;
pub const MASTER_SEED: [u8; 32] = [
    0x74, 0x64, 0x6e, 0x72, 0x2d, 0x70, 0x72, 0x6f, 0x70, 0x65, 0x72, 0x74, 0x79, 0x2d, 0x73, 0x75,
    0x69, 0x74, 0x65, 0x2d, 0x30, 0x31, 0x32, 0x33, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x61, 0x62,
];

pub type Suite = fn() -> std::result::Result<(), String>;

/// Every property suite, grouped by module.
pub const SUITES: &[(&str, Suite)] = &[
    ("diffcore: op gradients", diffcore_op_gradients),
    ("diffcore: masked softmax rows", diffcore_softmax_rows),
    (
        "diffcore: matmul associativity",
        diffcore_matmul_associativity,
    ),
    (
        "diffcore: normalization idempotent",
        diffcore_normalize_idempotent,
    ),
    ("diffcore: finite outputs", diffcore_finite_outputs),
    ("data: synthetic round trip", data_synth_round_trip),
    ("data: sample labels and counts", data_sampling),
    ("data: tokenization idempotent", data_tokenize_idempotent),
    ("encoders: additive attention", encoders_additive_attention),
    (
        "encoders: self-attention equivariance",
        encoders_mhsa_equivariance,
    ),
    (
        "encoders: candidate in convex hull",
        encoders_candidate_hull,
    ),
    ("encoders: padding news ignored", encoders_padding_news),
    ("encoders: user gradient", encoders_user_gradient),
    ("objectives: shift invariance", objectives_shift_invariance),
    ("objectives: focal monotone", objectives_focal_monotone),
    (
        "objectives: contrastive permutation",
        objectives_contrastive_permutation,
    ),
    ("objectives: temperature ordering", objectives_temperature),
    ("objectives: loss gradients", objectives_gradients),
    ("training: bit determinism", training_determinism),
    (
        "training: checkpoint continuation",
        training_checkpoint_continuation,
    ),
    (
        "training: projections only with contrast",
        training_projection_probe,
    ),
    ("eval: brute-force oracles", eval_oracles),
    ("eval: monotone transforms", eval_monotone),
    ("eval: auc antisymmetry", eval_auc_antisymmetry),
    ("eval: candidate order", eval_permutation),
    (
        "cli: seed, config, resolved config, write scope",
        cli_flags_and_scope,
    ),
];

pub fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::from_seed(RngAlgorithm::ChaCha, &MASTER_SEED),
    )
}

fn check<S>(
    strategy: S,
    test: impl Fn(S::Value) -> std::result::Result<(), TestCaseError>,
) -> std::result::Result<(), String>
where
    S: Strategy,
    S::Value: Debug,
{
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

fn fail(e: tdnr::Error) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

fn mask(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), n).prop_map(|mut m| {
        if !m.iter().any(|&b| b) {
            m[0] = true;
        }
        m
    })
}

// ---------------------------------------------------------------- diffcore

type Op = fn(&mut Graph<f64>, Var) -> Result<Var>;

/// Differentiable operations applied to a `3 × 4` input.
pub const OPS: &[(&str, Op)] = &[
    ("matmul", |g, x| {
        let r = g.reshape(x, &[4, 3])?;
        g.matmul(x, r)
    }),
    ("matmul_nt", |g, x| g.matmul_nt(x, x)),
    ("add", |g, x| {
        let t = g.tanh(x)?;
        g.add(x, t)
    }),
    ("sub", |g, x| {
        let s = g.mul(x, x)?;
        g.sub(x, s)
    }),
    ("mul", |g, x| g.mul(x, x)),
    ("add_row", |g, x| {
        let r = g.gather_rows(x, &[1])?;
        g.add_row(x, r)
    }),
    ("mul_col", |g, x| {
        let c = g.slice_cols(x, 0, 1)?;
        g.mul_col(x, c)
    }),
    ("scale", |g, x| g.scale(x, -1.5)),
    ("add_scalar", |g, x| g.add_scalar(x, 0.25)),
    ("tanh", |g, x| g.tanh(x)),
    ("exp", |g, x| g.exp(x)),
    ("log", |g, x| {
        let s = g.mul(x, x)?;
        let s = g.add_scalar(s, 0.5)?;
        g.log(s)
    }),
    ("powf", |g, x| {
        let s = g.mul(x, x)?;
        let s = g.add_scalar(s, 0.5)?;
        g.powf(s, 1.7)
    }),
    ("sum", |g, x| g.sum(x)),
    ("mean", |g, x| g.mean(x)),
    ("softmax_masked", |g, x| {
        g.softmax_masked(x, &[true, false, true, true])
    }),
    ("log_softmax_rows", |g, x| g.log_softmax_rows(x)),
    ("concat_last", |g, x| {
        let t = g.tanh(x)?;
        g.concat_last(&[x, t])
    }),
    ("concat_rows", |g, x| {
        let e = g.exp(x)?;
        g.concat_rows(&[x, e])
    }),
    ("slice_cols", |g, x| g.slice_cols(x, 1, 2)),
    ("gather_rows", |g, x| g.gather_rows(x, &[2, 0, 2])),
    ("pick_cols", |g, x| g.pick_cols(x, &[3, 0, 1])),
    ("l2_normalize_rows", |g, x| g.l2_normalize_rows(x)),
    ("mean_pool_rows", |g, x| {
        g.mean_pool_rows(x, &[true, false, true])
    }),
    ("mask_rows", |g, x| g.mask_rows(x, &[false, true, true])),
    ("embed_mean", |g, x| g.embed_mean(x, &[1, 2, 0, 2, 1, 1], 3)),
    ("reshape", |g, x| g.reshape(x, &[2, 6])),
];

/// `Σ w ⊙ op(x)` with fixed weights bounded away from zero.
fn weighted(g: &mut Graph<f64>, x: Var, op: Op) -> Result<Var> {
    let y = op(g, x)?;
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let mag = 0.5 + (i * 7 % 5) as f64 * 0.25;
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let w = g.constant(Tensor::new(shape, w)?);
    let p = g.mul(y, w)?;
    g.sum(p)
}

pub fn diffcore_op_gradients() -> std::result::Result<(), String> {
    check(matrix(3, 4, -1.0, 1.0), |x| {
        prop_assume!(x
            .values()
            .chunks(4)
            .all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-2));
        for &(name, op) in OPS {
            let eps = if name == "l2_normalize_rows" {
                1e-5
            } else {
                1e-3
            };
            let err = finite_difference_check(|g, v| weighted(g, v, op), &x, eps).map_err(fail)?;
            prop_assert!(err <= 1e-3, "{name}: relative error {err}");
        }
        Ok(())
    })
}

pub fn diffcore_softmax_rows() -> std::result::Result<(), String> {
    let s = (1usize..5, 1usize..7).prop_flat_map(|(m, n)| (matrix(m, n, -20.0, 20.0), mask(n)));
    check(s, |(x, keep)| {
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let y = g.softmax_masked(v, &keep).map_err(fail)?;
        let n = keep.len();
        for row in g.value(y).values().chunks(n) {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-6);
            for (v, &k) in row.iter().zip(&keep) {
                prop_assert!(*v >= 0.0);
                if !k {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
        Ok(())
    })
}

pub fn diffcore_matmul_associativity() -> std::result::Result<(), String> {
    let dims = (1usize..5, 1usize..5, 1usize..5, 1usize..5);
    let s = dims.prop_flat_map(|(a, b, c, d)| {
        let m = |r, k| {
            prop::collection::vec(-1.0f32..1.0, r * k)
                .prop_map(move |v| Tensor::new(vec![r, k], v).unwrap())
        };
        (m(a, b), m(b, c), m(c, d))
    });
    check(s, |(a, b, c)| {
        let mut g = Graph::<f32>::new();
        let (a, b, c) = (g.input(a), g.input(b), g.input(c));
        let ab = g.matmul(a, b).map_err(fail)?;
        let left = g.matmul(ab, c).map_err(fail)?;
        let bc = g.matmul(b, c).map_err(fail)?;
        let right = g.matmul(a, bc).map_err(fail)?;
        let (l, r) = (g.value(left).values(), g.value(right).values());
        let diff: f64 = l
            .iter()
            .zip(r)
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = l.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-4 * norm.max(1.0), "{diff} vs {norm}");
        Ok(())
    })
}

pub fn diffcore_normalize_idempotent() -> std::result::Result<(), String> {
    let s = (1usize..4, 1usize..9).prop_flat_map(|(m, n)| {
        prop::collection::vec(-10.0f32..10.0, m * n)
            .prop_map(move |v| Tensor::new(vec![m, n], v).unwrap())
    });
    check(s, |x| {
        let n = x.shape()[1];
        prop_assume!(x
            .values()
            .chunks(n)
            .all(|r| r.iter().map(|v| v * v).sum::<f32>() > 1e-4));
        let mut g = Graph::<f32>::new();
        let v = g.input(x);
        let once = g.l2_normalize_rows(v).map_err(fail)?;
        let twice = g.l2_normalize_rows(once).map_err(fail)?;
        for (a, b) in g.value(once).values().iter().zip(g.value(twice).values()) {
            prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        Ok(())
    })
}

pub fn diffcore_finite_outputs() -> std::result::Result<(), String> {
    check(matrix(3, 4, -60.0, 60.0), |x| {
        for &(name, op) in OPS {
            let mut g = Graph::new();
            let v = g.input(x.clone());
            if let Ok(loss) = weighted(&mut g, v, op) {
                prop_assert!(
                    g.value(loss).is_finite(),
                    "{name} produced a non-finite value"
                );
                if let Ok(grads) = g.backward(loss) {
                    let dx = grads.get_or_zeros(v, x.numel());
                    prop_assert!(dx.iter().all(|d| d.is_finite()), "{name} gradient");
                }
            }
        }
        Ok(())
    })
}

// -------------------------------------------------------------------- data

fn small_synth() -> impl Strategy<Value = SynthConfig> {
    (
        1usize..6,
        8usize..40,
        2usize..5,
        0.0f64..=1.0,
        any::<u64>(),
        0usize..4,
    )
        .prop_map(
            |(n_users, n_news, n_topics, rho, seed, summary)| SynthConfig {
                n_users,
                n_news,
                n_topics,
                clickbait_rate: rho,
                seed,
                summary_words: summary,
                ..SynthConfig::default()
            },
        )
}

pub fn data_synth_round_trip() -> std::result::Result<(), String> {
    check(small_synth(), |c| {
        let corpus = generate_synthetic_corpus(&c).map_err(fail)?;
        let news = parse_news_table(corpus.news_tsv().as_bytes(), true).map_err(fail)?;
        let logs =
            parse_behaviors(corpus.behaviors_tsv().as_bytes(), c.history_len).map_err(fail)?;
        prop_assert_eq!(news, corpus.news);
        prop_assert_eq!(logs, corpus.behaviors);
        Ok(())
    })
}

pub fn data_sampling() -> std::result::Result<(), String> {
    let s = (
        prop::collection::vec(any::<bool>(), 1..12),
        1usize..6,
        any::<u64>(),
    );
    check(s, |(labels, k, seed)| {
        let imp = ResolvedImpression {
            index: 3,
            impression_id: "I".into(),
            user_id: "U".into(),
            history: vec![100, 101],
            candidates: labels.iter().enumerate().map(|(i, &l)| (i, l)).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = sample_training_instances(&imp, k, &mut rng);
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        prop_assert_eq!(samples.len(), if neg == 0 { 0 } else { pos });
        for s in &samples {
            prop_assert!(labels[s.positive]);
            prop_assert_eq!(s.negatives.len(), k);
            prop_assert!(s.negatives.iter().all(|&n| !labels[n]));
            if neg >= k {
                let distinct: BTreeSet<_> = s.negatives.iter().collect();
                prop_assert_eq!(distinct.len(), k);
            }
        }
        Ok(())
    })
}

pub fn data_tokenize_idempotent() -> std::result::Result<(), String> {
    check(prop::collection::vec("[a-z0-9]{1,8}", 0..12), |ws| {
        let text = ws.join(" ");
        let once: Vec<String> = words(&text).collect();
        prop_assert_eq!(&once, &ws);
        let again: Vec<String> = words(&once.join(" ")).collect();
        prop_assert_eq!(&again, &once);
        let vocab = Vocabulary::from_tokens(ws.iter().cloned());
        let ids = tokenize(&text, 64, &vocab);
        let rejoined: Vec<&str> = ids.iter().map(|&i| vocab.token(i).unwrap()).collect();
        prop_assert_eq!(tokenize(&rejoined.join(" "), 64, &vocab), ids);
        Ok(())
    })
}

// ---------------------------------------------------------------- encoders

fn model(seed: u64, with_abs: bool) -> ModelParams<f64> {
    init_params(
        ModelDims {
            vocab_size: 12,
            d: 4,
            heads: 2,
            attn_hidden: 4,
            with_abs,
        },
        seed,
    )
    .unwrap()
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

fn permute_rows(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let d = x.shape()[1];
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| x.row(p).to_vec()).collect();
    Tensor::new(vec![perm.len(), d], rows.concat()).unwrap()
}

pub fn encoders_additive_attention() -> std::result::Result<(), String> {
    let s = (1usize..7, any::<u64>())
        .prop_flat_map(|(n, seed)| (matrix(n, 4, -2.0, 2.0), mask(n), permutation(n), Just(seed)));
    check(s, |(x, keep, perm, seed)| {
        let m = model(seed, true);
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let (w, pooled) =
            additive_attention(&mut g, &m, &m.candidate_merge, v, &keep).map_err(fail)?;
        let w = g.value(w).values().to_vec();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        let pooled = g.value(pooled).values().to_vec();

        let pv = g.input(permute_rows(&x, &perm));
        let pkeep: Vec<bool> = perm.iter().map(|&p| keep[p]).collect();
        let (pw, ppooled) =
            additive_attention(&mut g, &m, &m.candidate_merge, pv, &pkeep).map_err(fail)?;
        for (i, &p) in perm.iter().enumerate() {
            prop_assert!((g.value(pw).values()[i] - w[p]).abs() <= 1e-12);
        }
        for (a, b) in g.value(ppooled).values().iter().zip(&pooled) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        Ok(())
    })
}

pub fn encoders_mhsa_equivariance() -> std::result::Result<(), String> {
    let s = (1usize..6, any::<u64>())
        .prop_flat_map(|(n, seed)| (matrix(n, 4, -2.0, 2.0), mask(n), permutation(n), Just(seed)));
    check(s, |(x, keep, perm, seed)| {
        let m = model(seed, true);
        let block = m.mhsa_for(Field::Title).map_err(fail)?.clone();
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let out = mfke_field_sequence(&mut g, &m, &block, v, &keep).map_err(fail)?;
        let pv = g.input(permute_rows(&x, &perm));
        let pkeep: Vec<bool> = perm.iter().map(|&p| keep[p]).collect();
        let pout = mfke_field_sequence(&mut g, &m, &block, pv, &pkeep).map_err(fail)?;
        let (o, po) = (g.value(out).clone(), g.value(pout).clone());
        for (i, &p) in perm.iter().enumerate().filter(|(_, &p)| keep[p]) {
            for (a, b) in po.row(i).iter().zip(o.row(p)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
        Ok(())
    })
}

fn token_list() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..12, 0..5)
}

fn article() -> impl Strategy<Value = NewsArticle> {
    (token_list(), token_list(), token_list()).prop_map(|(c, t, a)| NewsArticle {
        news_id: "N".into(),
        category: "c".into(),
        subcategory: "s".into(),
        cats_tokens: c,
        title_tokens: t,
        abstract_tokens: a.clone(),
        gen_title_tokens: a,
    })
}

pub fn encoders_candidate_hull() -> std::result::Result<(), String> {
    check((article(), any::<u64>()), |(art, seed)| {
        let m = model(seed, true);
        let mut g = Graph::new();
        let lists = field_token_lists(&art, AbstractView::GeneratedTitle, true).map_err(fail)?;
        let mut fields = Vec::new();
        for l in &lists {
            fields.push(encode_field_tokens(&mut g, &m, l).map_err(fail)?);
        }
        let stacked = g.concat_rows(&fields).map_err(fail)?;
        let (w, _) = additive_attention(&mut g, &m, &m.candidate_merge, stacked, &[true; 3])
            .map_err(fail)?;
        let w = g.value(w).values().to_vec();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let out =
            encode_candidate_news(&mut g, &m, &art, AbstractView::GeneratedTitle).map_err(fail)?;
        let out = g.value(out).values().to_vec();
        for (j, &o) in out.iter().enumerate() {
            let combo: f64 = fields
                .iter()
                .zip(&w)
                .map(|(&f, wi)| wi * g.value(f).values()[j])
                .sum();
            prop_assert!((o - combo).abs() <= 1e-12);
        }
        Ok(())
    })
}

pub fn encoders_padding_news() -> std::result::Result<(), String> {
    let s = (
        prop::collection::vec(article(), 0..4),
        any::<u64>(),
        any::<bool>(),
        any::<bool>(),
    );
    check(s, |(history, seed, mfke, raw)| {
        let m = model(seed, true);
        let view = if raw {
            AbstractView::RawAbstract
        } else {
            AbstractView::GeneratedTitle
        };
        let pad = NewsArticle {
            news_id: "PAD".into(),
            category: String::new(),
            subcategory: String::new(),
            cats_tokens: vec![],
            title_tokens: vec![],
            abstract_tokens: vec![],
            gen_title_tokens: vec![],
        };
        let refs: Vec<&NewsArticle> = history.iter().collect();
        let mut g = Graph::new();
        let base = encode_user_masked(&mut g, &m, &refs, &vec![true; refs.len()], view, mfke)
            .map_err(fail)?;
        let mut longer = refs.clone();
        longer.push(&pad);
        let mut keep = vec![true; refs.len()];
        keep.push(false);
        let with_pad = encode_user_masked(&mut g, &m, &longer, &keep, view, mfke).map_err(fail)?;
        for (a, b) in g
            .value(base)
            .values()
            .iter()
            .zip(g.value(with_pad).values())
        {
            prop_assert!((a - b).abs() <= 1e-6);
        }
        Ok(())
    })
}

pub fn encoders_user_gradient() -> std::result::Result<(), String> {
    check((article(), article(), any::<u64>()), |(a, b, seed)| {
        let m = model(seed, true);
        let table = m.set.get(m.embedding).clone();
        let err = finite_difference_check(
            |g, emb| {
                let lists = [&a, &b]
                    .iter()
                    .map(|x| field_token_lists(x, AbstractView::GeneratedTitle, true))
                    .collect::<Result<Vec<_>>>()?;
                let mut seqs = Vec::new();
                for f in 0..3 {
                    let padded = PaddedTokens::from_rows(lists.iter().map(|l| l[f]), PAD_ID);
                    seqs.push(g.embed_mean(emb, &padded.ids, padded.width)?);
                }
                let u = encode_user_fields(g, &m, &seqs, &[true, true], true)?;
                let sq = g.mul(u, u)?;
                g.sum(sq)
            },
            &table,
            1e-5,
        )
        .map_err(fail)?;
        prop_assert!(err <= 1e-3, "relative error {err}");
        Ok(())
    })
}

// -------------------------------------------------------------- objectives

pub fn objectives_shift_invariance() -> std::result::Result<(), String> {
    let s = (
        -10.0f64..10.0,
        prop::collection::vec(-10.0f64..10.0, 1..8),
        -100.0f64..100.0,
    );
    check(s, |(pos, negs, c)| {
        let p = objectives::positive_probability(pos, &negs).map_err(fail)?;
        let shifted: Vec<f64> = negs.iter().map(|n| n + c).collect();
        let q = objectives::positive_probability(pos + c, &shifted).map_err(fail)?;
        prop_assert!((p - q).abs() <= 1e-6);
        Ok(())
    })
}

pub fn objectives_focal_monotone() -> std::result::Result<(), String> {
    check((0.01f64..=1.0, 0.0f64..5.0), |(alpha, gamma)| {
        let mut prev = f64::INFINITY;
        for i in 1..=100 {
            let l = objectives::focal_loss(i as f64 / 100.0, alpha, gamma).map_err(fail)?;
            prop_assert!(l < prev || (l == 0.0 && prev == 0.0), "p={} {l} {prev}", i);
            prev = l;
        }
        Ok(())
    })
}

fn unit_rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n).prop_filter_map(
        "degenerate row",
        |rows| {
            rows.into_iter()
                .map(|r| {
                    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (norm > 1e-3).then(|| r.iter().map(|v| v / norm).collect())
                })
                .collect()
        },
    )
}

pub fn objectives_contrastive_permutation() -> std::result::Result<(), String> {
    let s = (2usize..7, 2usize..6).prop_flat_map(|(n, d)| {
        (
            unit_rows(n, d),
            unit_rows(n, d),
            permutation(n),
            0.05f64..2.0,
        )
    });
    check(s, |(t, a, perm, tau)| {
        let base = objectives::contrastive_loss(&t, &a, tau).map_err(fail)?;
        let pt: Vec<_> = perm.iter().map(|&p| t[p].clone()).collect();
        let pa: Vec<_> = perm.iter().map(|&p| a[p].clone()).collect();
        let permuted = objectives::contrastive_loss(&pt, &pa, tau).map_err(fail)?;
        prop_assert!((base - permuted).abs() <= 1e-9 * base.abs().max(1.0));
        Ok(())
    })
}

pub fn objectives_temperature() -> std::result::Result<(), String> {
    let s = (2usize..7, 0usize..3).prop_flat_map(|(n, extra)| {
        (
            permutation(n + extra),
            prop::collection::vec(any::<bool>(), n),
        )
    });
    check(s, |(axes, signs)| {
        let d = axes.len();
        let rows: Vec<Vec<f64>> = signs
            .iter()
            .enumerate()
            .map(|(i, &neg)| {
                let mut r = vec![0.0; d];
                r[axes[i]] = if neg { -1.0 } else { 1.0 };
                r
            })
            .collect();
        let losses: Vec<f64> = [1.0, 0.5, 0.1]
            .iter()
            .map(|&tau| objectives::contrastive_loss(&rows, &rows, tau))
            .collect::<Result<_>>()
            .map_err(fail)?;
        prop_assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
        Ok(())
    })
}

pub fn objectives_gradients() -> std::result::Result<(), String> {
    let s = (1usize..4, 2usize..6, 2usize..6).prop_flat_map(|(s, k, n)| {
        (
            matrix(s, k, -3.0, 3.0),
            matrix(2 * n, 3, -1.0, 1.0),
            0.1f64..1.0,
        )
    });
    check(s, |(scores, pairs, tau)| {
        let err = finite_difference_check(
            |g, x| tape::recommendation_loss(g, x, 0.25, 2.0),
            &scores,
            1e-5,
        )
        .map_err(fail)?;
        prop_assert!(err <= 1e-3, "focal chain {err}");
        let n = pairs.shape()[0] / 2;
        prop_assume!(pairs
            .values()
            .chunks(3)
            .all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-2));
        let err = finite_difference_check(
            |g, x| {
                let t: Vec<usize> = (0..n).collect();
                let a: Vec<usize> = (n..2 * n).collect();
                let t = g.gather_rows(x, &t)?;
                let a = g.gather_rows(x, &a)?;
                let t = g.l2_normalize_rows(t)?;
                let a = g.l2_normalize_rows(a)?;
                tape::contrastive_loss(g, t, a, tau)
            },
            &pairs,
            1e-6,
        )
        .map_err(fail)?;
        prop_assert!(err <= 1e-3, "contrastive {err}");
        Ok(())
    })
}

// ---------------------------------------------------------------- training

fn tiny_training(seed: u64, variant: Variant, lambda: f64) -> (TrainConfig, Dataset) {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_users: 3,
        n_news: 16,
        seed,
        history_len: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut config = TrainConfig {
        d: 4,
        heads: 2,
        attn_hidden: 4,
        batch_size: 4,
        lr: 1e-2,
        epochs: 1,
        seed,
        variant,
        ..TrainConfig::default()
    };
    config.loss.lambda = lambda;
    let data = Dataset::build(&corpus.news, &corpus.behaviors, &config).unwrap();
    (config, data)
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::sample::select(Variant::ALL.to_vec())
}

pub fn training_determinism() -> std::result::Result<(), String> {
    check((any::<u64>(), variant()), |(seed, v)| {
        let (config, data) = tiny_training(seed, v, 0.1);
        let a = train(&config, &data).map_err(fail)?;
        let b = train(&config, &data).map_err(fail)?;
        prop_assert_eq!(&a.params, &b.params);
        prop_assert_eq!(&a.log, &b.log);
        prop_assert_eq!(&a.state, &b.state);
        Ok(())
    })
}

pub fn training_checkpoint_continuation() -> std::result::Result<(), String> {
    check((any::<u64>(), variant()), |(seed, v)| {
        let (mut config, data) = tiny_training(seed, v, 0.1);
        config.epochs = 3;
        let whole = train(&config, &data).map_err(fail)?;
        config.epochs = 1;
        let first = train(&config, &data).map_err(fail)?;
        let ck = Checkpoint {
            config: config.clone(),
            vocab: data.vocab.clone(),
            params: first.params,
            state: first.state,
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).map_err(fail)?;
        let rest = resume(&back.config, &data, back.params, back.state, 2).map_err(fail)?;
        for (a, b) in whole.log[1..].iter().zip(&rest.log) {
            prop_assert!((a.l_total - b.l_total).abs() <= 1e-6);
            prop_assert_eq!(a.epoch, b.epoch);
        }
        prop_assert_eq!(whole.params, rest.params);
        Ok(())
    })
}

pub fn training_projection_probe() -> std::result::Result<(), String> {
    check(
        (
            any::<u64>(),
            variant(),
            prop::sample::select(vec![0.0, 0.1]),
        ),
        |(seed, v, lambda)| {
            let (config, data) = tiny_training(seed, v, lambda);
            let out = train(&config, &data).map_err(fail)?;
            if config.effective_lambda() == 0.0 {
                prop_assert_eq!(out.projections, 0);
            } else {
                prop_assert!(out.projections > 0);
            }
            Ok(())
        },
    )
}

// -------------------------------------------------------------------- eval

/// Rank of every candidate under descending score, ties by position.
fn oracle_ranks(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| {
            1 + (0..scores.len())
                .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                .count()
        })
        .collect()
}

pub fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

pub fn oracle_mrr(scores: &[f64], labels: &[bool]) -> f64 {
    let ranks = oracle_ranks(scores);
    let pos: Vec<f64> = (0..labels.len())
        .filter(|&i| labels[i])
        .map(|i| 1.0 / ranks[i] as f64)
        .collect();
    pos.iter().sum::<f64>() / pos.len() as f64
}

pub fn oracle_ndcg(scores: &[f64], labels: &[bool], k: usize) -> f64 {
    let ranks = oracle_ranks(scores);
    let mut dcg = 0.0;
    for i in 0..labels.len() {
        if labels[i] && ranks[i] <= k {
            dcg += 1.0 / ((ranks[i] + 1) as f64).log2();
        }
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let ideal: f64 = (1..=pos.min(k))
        .map(|r| 1.0 / ((r + 1) as f64).log2())
        .sum();
    dcg / ideal
}

/// Scores (with deliberate ties) and labels holding both classes.
pub fn impression() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=20)
        .prop_flat_map(|n| {
            let score = prop_oneof![(0u8..4).prop_map(|q| q as f64 / 4.0), -5.0f64..5.0];
            (
                prop::collection::vec(score, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("needs both labels", |(_, l)| {
            l.iter().any(|&b| b) && l.iter().any(|&b| !b)
        })
}

fn tie_free() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=20)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("needs both labels and distinct scores", |(s, l)| {
            let distinct: BTreeSet<u64> = s.iter().map(|v| v.to_bits()).collect();
            distinct.len() == s.len() && l.iter().any(|&b| b) && l.iter().any(|&b| !b)
        })
}

fn metrics(s: &[f64], l: &[bool]) -> [f64; 4] {
    [
        auc(s, l).unwrap(),
        mrr(s, l).unwrap(),
        ndcg_at_k(s, l, 5).unwrap(),
        ndcg_at_k(s, l, 10).unwrap(),
    ]
}

pub fn oracle_gap(s: &[f64], l: &[bool]) -> f64 {
    let m = metrics(s, l);
    let o = [
        oracle_auc(s, l),
        oracle_mrr(s, l),
        oracle_ndcg(s, l, 5),
        oracle_ndcg(s, l, 10),
    ];
    m.iter()
        .zip(&o)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn eval_oracles() -> std::result::Result<(), String> {
    check(impression(), |(s, l)| {
        let gap = oracle_gap(&s, &l);
        prop_assert!(gap <= 1e-12, "{gap}");
        Ok(())
    })
}

pub fn eval_monotone() -> std::result::Result<(), String> {
    check(tie_free(), |(s, l)| {
        let base = metrics(&s, &l);
        let affine: Vec<f64> = s.iter().map(|x| 2.0 * x + 1.0).collect();
        let squashed: Vec<f64> = s.iter().map(|x| x.tanh()).collect();
        prop_assert_eq!(metrics(&affine, &l), base);
        prop_assert_eq!(metrics(&squashed, &l), base);
        Ok(())
    })
}

pub fn eval_auc_antisymmetry() -> std::result::Result<(), String> {
    check(tie_free(), |(s, l)| {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let total = auc(&s, &l).unwrap() + auc(&neg, &l).unwrap();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        Ok(())
    })
}

pub fn eval_permutation() -> std::result::Result<(), String> {
    let s = tie_free().prop_flat_map(|(s, l)| {
        let n = s.len();
        (Just(s), Just(l), permutation(n))
    });
    check(s, |(s, l, perm)| {
        let ps: Vec<f64> = perm.iter().map(|&p| s[p]).collect();
        let pl: Vec<bool> = perm.iter().map(|&p| l[p]).collect();
        let (a, b) = (metrics(&s, &l), metrics(&ps, &pl));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        Ok(())
    })
}

// --------------------------------------------------------------------- cli

fn listing(dir: &Path) -> BTreeSet<PathBuf> {
    let mut out = BTreeSet::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p.clone());
            }
            out.insert(p);
        }
    }
    out
}

/// Runs the CLI in-process and returns `(code, stdout, stderr)`.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = dispatch_with(
        std::iter::once("tdnr").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

const SUBCOMMANDS: [&str; 6] = ["synth", "prepare", "train", "eval", "ablate", "rank"];

pub fn cli_flags_and_scope() -> std::result::Result<(), String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| root.path().join(name).to_str().unwrap().to_string();
    let (corpus, config, synth_config, ck) =
        (p("corpus"), p("train.cfg"), p("synth.cfg"), p("model.ck"));
    std::fs::write(
        &config,
        "d=4\nheads=2\nattn-hidden=4\nepochs=1\nbatch-size=8\n",
    )
    .unwrap();
    std::fs::write(&synth_config, "n-users=3\nn-news=16\nhistory-len=3\n").unwrap();
    let (code, _, err) = cli(&["synth", "--out", &corpus, "--config", &synth_config]);
    if code != 0 {
        return Err(err);
    }
    let news = format!("{corpus}/news.tsv");
    let behaviors = format!("{corpus}/behaviors.tsv");
    let io = ["--news", news.as_str(), "--behaviors", behaviors.as_str()];
    let mut train_args = vec![
        "train",
        "--config",
        config.as_str(),
        "--checkpoint",
        ck.as_str(),
    ];
    train_args.extend(io);
    let (code, _, err) = cli(&train_args);
    if code != 0 {
        return Err(err);
    }
    let first_impression = std::fs::read_to_string(&behaviors).unwrap();
    let impression = first_impression.split('\t').next().unwrap().to_string();

    let s = (prop::sample::select(SUBCOMMANDS.to_vec()), 0u64..1_000_000);
    check(s, |(sub, seed)| {
        let case = tempfile::tempdir_in(root.path()).unwrap();
        let out = case.path().join("out");
        let out_s = out.to_str().unwrap();
        let seed_s = seed.to_string();
        let case_ck = case.path().join("case.ck");
        let case_ck_s = case_ck.to_str().unwrap();
        let before = listing(root.path());
        let mut args: Vec<&str> = vec![sub];
        let (config_file, expected): (&str, Vec<PathBuf>) = match sub {
            "synth" => (
                synth_config.as_str(),
                vec![
                    out.clone(),
                    out.join("news.tsv"),
                    out.join("behaviors.tsv"),
                    out.join("provenance.txt"),
                ],
            ),
            "train" => (config.as_str(), vec![out.clone(), case_ck.clone()]),
            _ => (config.as_str(), vec![out.clone()]),
        };
        args.extend([
            "--seed",
            seed_s.as_str(),
            "--config",
            config_file,
            "--out",
            out_s,
        ]);
        if sub != "synth" {
            args.extend(io);
        }
        match sub {
            "train" => args.extend(["--checkpoint", case_ck_s]),
            "eval" => args.extend(["--checkpoint", ck.as_str()]),
            "rank" => args.extend([
                "--checkpoint",
                ck.as_str(),
                "--impression",
                impression.as_str(),
            ]),
            _ => {}
        }
        let (code, stdout, stderr) = cli(&args);
        prop_assert_eq!(code, 0, "{} failed: {}", sub, stderr);
        let header: Vec<&str> = stdout.lines().take_while(|l| l.starts_with("# ")).collect();
        prop_assert!(
            header.contains(&format!("# seed={seed}").as_str()),
            "{sub}: {stdout}"
        );
        let marker = if sub == "synth" {
            "# n-users=3"
        } else {
            "# d=4"
        };
        prop_assert!(header.contains(&marker), "{sub} ignored --config");
        let after = listing(root.path());
        let created: Vec<PathBuf> = after.difference(&before).cloned().collect();
        let mut want = expected.clone();
        want.sort();
        prop_assert_eq!(created, want);
        Ok(())
    })
}
