mod common;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use slu::ndnum::{Precision, Tensor};
use slu::nn::{Mode, Network, Target};
use slu::textnlu::{
    corrupt_words, count_params_text, text_classify, tokenize, CellType, ErrorMix, TextError, TextModel,
    TextModelConfig, Vocab, PAD, UNK,
};
use slu::train::{evaluate, train_model, AdamConfig, Dataset, TrainConfig};

fn words(s: &str) -> Vec<String> {
    tokenize(s)
}

fn small_cfg(vocab: usize, k: usize) -> TextModelConfig {
    TextModelConfig {
        vocab_size: vocab,
        embedding_dim: 6,
        hidden: 5,
        n_layers: 2,
        n_classes: k,
        cell: CellType::Gru,
        target: Target::Intent,
    }
}

#[test]
fn vocab_ordering_and_file_format() {
    let v = Vocab::build(["Turn on the light", "turn off the LIGHT", "the end"], 1).unwrap();
    assert_eq!(v.get("the"), Some(2));
    assert_eq!(v.get("light"), Some(3));
    assert_eq!(v.get("turn"), Some(4));
    assert_eq!(v.tokens()[3..], ["end", "off", "on"].map(String::from));
    assert_eq!(v.len(), 8);
    assert_eq!(v.encode(&words("turn up the light")), vec![4, UNK, 2, 3]);
    assert_eq!((PAD, UNK), (0, 1));

    let pruned = Vocab::build(["Turn on the light", "turn off the LIGHT", "the end"], 2).unwrap();
    assert_eq!(pruned.tokens(), ["the", "light", "turn"].map(String::from));
    assert_eq!(pruned.encode(&words("on")), vec![UNK]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    v.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("the"));
    assert_eq!(Vocab::load(&path).unwrap(), v);
    assert!(matches!(Vocab::from_text("a\na\n"), Err(TextError::VocabFormat { line: 2, .. })));
    assert!(matches!(Vocab::build(["", "  "], 1), Err(TextError::EmptyCorpus)));
}

#[test]
fn zero_weights_give_uniform_posterior() {
    let v = Vocab::build(["a b c d e"], 1).unwrap();
    let m = TextModel::<f64>::new(small_cfg(v.len(), 7), 1).unwrap().zeroed();
    let p = text_classify(&words("a c zz e"), &v, &m).unwrap();
    for &x in p.data() {
        assert!((x - 1.0 / 7.0).abs() < 1e-12);
    }
    assert!(matches!(text_classify(&[], &v, &m), Err(TextError::EmptyInput)));
}

#[test]
fn lstm_is_reserved() {
    let cfg = TextModelConfig {
        cell: "lstm".parse().unwrap(),
        ..small_cfg(10, 3)
    };
    assert!(matches!(TextModel::<f32>::new(cfg, 1), Err(TextError::UnsupportedCell(_))));
    assert!("rnn".parse::<CellType>().is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let m = TextModel::<f64>::new(small_cfg(9, 4), 2).unwrap();
    let a = vec![2, 5, 1, 8];
    let b = vec![3, 3, 7];
    for (name, err) in network_param_gradcheck(&m, &[&a, &b], &[1, 3], Mode::Train, 1e-5) {
        assert!(err < 1e-4, "{name}: {err}");
    }
}

#[test]
fn parameter_count_matches_checkpoint() {
    for cfg in [small_cfg(9, 4), TextModelConfig::new(500, 35, Target::Intent)] {
        let m = TextModel::<f32>::new(cfg, 3).unwrap();
        let ck = m.to_checkpoint();
        let total: usize = m.named_params().iter().map(|(n, _)| ck.get(n).unwrap().tensor.len()).sum();
        assert_eq!(count_params_text(&cfg), total);
        assert_eq!(m.count_params(), total);
    }
}

#[test]
fn checkpoint_round_trip() {
    let m = TextModel::<f32>::new(small_cfg(12, 3), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("text.ckpt");
    m.save(&path).unwrap();
    let back = TextModel::<f32>::load(&path).unwrap();
    assert_eq!(back, m);
    let ids = vec![4, 2, 9];
    assert_eq!(back.posteriors(&[&ids]).unwrap(), m.posteriors(&[&ids]).unwrap());
}

fn sentence_corpus(n: usize, vocab: &[String], seed: u64) -> Vec<Vec<String>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let len = r.gen_range(5..15);
            (0..len).map(|_| vocab.choose(&mut r).unwrap().clone()).collect()
        })
        .collect()
}

#[test]
fn emulated_word_error_rate() {
    let vocab: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
    let corpus = sentence_corpus(10_000, &vocab, 11);
    let n_ref: usize = corpus.iter().map(Vec::len).sum();
    for target in [0.05, 0.25, 0.5] {
        let errs: usize = corpus
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let hyp = corrupt_words(s, target, &vocab, ErrorMix::default(), i as u64).unwrap();
                edit_distance(s, &hyp)
            })
            .sum();
        let wer = errs as f64 / n_ref as f64;
        assert!((wer - target).abs() <= 0.02, "target {target}: measured {wer}");
    }
}

#[test]
fn word_corruption_edges() {
    let vocab: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let s = sentence_corpus(1, &vocab, 12).remove(0);
    assert_eq!(corrupt_words(&s, 0.0, &vocab, ErrorMix::default(), 1).unwrap(), s);
    let subs_only = ErrorMix {
        sub: 1.0,
        del: 0.0,
        ins: 0.0,
    };
    let all = corrupt_words(&s, 1.0, &vocab, subs_only, 2).unwrap();
    assert_eq!(all.len(), s.len());
    assert!(all.iter().zip(&s).all(|(a, b)| a != b));
    assert!(matches!(
        corrupt_words(&s, 1.5, &vocab, ErrorMix::default(), 1),
        Err(TextError::InvalidRate(_))
    ));
    assert_eq!(
        corrupt_words(&s, 0.3, &vocab, ErrorMix::default(), 9).unwrap(),
        corrupt_words(&s, 0.3, &vocab, ErrorMix::default(), 9).unwrap()
    );
}

#[test]
fn unknown_words_share_one_embedding() {
    let v = Vocab::build(["play some music", "stop the music"], 1).unwrap();
    let m = TextModel::<f64>::new(small_cfg(v.len(), 3), 5).unwrap();
    let a = text_classify(&words("play qwerty music"), &v, &m).unwrap();
    let b = text_classify(&words("play zzzzzz music"), &v, &m).unwrap();
    assert_eq!(a, b);
}

fn order_dataset(n: usize, seed: u64) -> Dataset<Vec<usize>> {
    // label 1 iff token 2 precedes token 3
    let mut r = rng(seed);
    let mut ds = Dataset {
        ids: vec![],
        inputs: vec![],
        labels: vec![],
        durations: vec![],
        lengths: vec![],
    };
    for i in 0..n {
        let len = r.gen_range(3..7);
        let mut ids: Vec<usize> = (0..len).map(|_| r.gen_range(4..8)).collect();
        let (p, q) = (r.gen_range(0..len), r.gen_range(0..len));
        let (p, q) = if p == q { (0, len - 1) } else { (p.min(q), p.max(q)) };
        let label = i % 2;
        ids[p] = if label == 1 { 2 } else { 3 };
        ids[q] = if label == 1 { 3 } else { 2 };
        ds.ids.push(format!("u{i}"));
        ds.lengths.push(len);
        ds.inputs.push(ids);
        ds.labels.push(label);
        ds.durations.push(0.0);
    }
    ds
}

#[test]
fn word_order_matters() {
    let train = order_dataset(60, 13);
    let valid = order_dataset(20, 14);
    let cfg = TrainConfig {
        batch_size: 10,
        max_epochs: 40,
        patience: 40,
        seed: 3,
        precision: Precision::F64,
        bucketing: false,
        adam: AdamConfig {
            lr: 0.02,
            ..AdamConfig::default()
        },
        grad_clip: None,
    };
    let net = TextModel::<f64>::new(small_cfg(8, 2), 6).unwrap();
    let out = train_model(net, &train, &valid, &cfg, None).unwrap();
    assert!(out.best_valid_accuracy >= 0.9, "{}", out.best_valid_accuracy);
    let m = out.best;
    assert!(evaluate(&m, &valid).unwrap().accuracy >= 0.9);
    let fwd: Vec<usize> = vec![5, 2, 6, 3];
    let rev: Vec<usize> = vec![5, 3, 6, 2];
    let pa = m.posteriors(&[&fwd]).unwrap();
    let pb = m.posteriors(&[&rev]).unwrap();
    assert!(pa.get2(0, 1) > 0.5 && pb.get2(0, 1) < 0.5, "{pa:?} {pb:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posteriors_are_distributions(ids in prop::collection::vec(0usize..9, 1..12), seed in 0u64..50) {
        let m = TextModel::<f32>::new(small_cfg(9, 4), seed).unwrap();
        let p: Tensor<f32> = m.posteriors(&[&ids]).unwrap();
        let s: f32 = p.data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-5);
        prop_assert!(p.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn corruption_uses_vocabulary_words(seed in 0u64..1000, wer in 0.0f64..1.0) {
        let vocab: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let s = sentence_corpus(1, &vocab, seed).remove(0);
        let hyp = corrupt_words(&s, wer, &vocab, ErrorMix::default(), seed).unwrap();
        prop_assert!(hyp.iter().all(|w| vocab.contains(w)));
        prop_assert!(hyp.len() <= 2 * s.len());
    }
}
