use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstp_core::exec::Execution;
use vstp_core::synth::{generate_sample, render_feature_grid, SynthConfig};
use vstp_core::{build_vocab, Task, TokenId, VocabSpec};
use vstp_model::decode::{greedy_decode, infer_document};
use vstp_model::loss::{weighted_nll_loss, TrainingTarget};
use vstp_model::model::{DecoderCache, DecoderKind};
use vstp_model::tensor::Mat;
use vstp_model::train::{prepare, train, TrainConfig};
use vstp_model::{load_checkpoint, save_checkpoint, Model, ModelConfig};

fn tiny(task: Task) -> Model {
    let config = ModelConfig { d: 16, layers: 1, heads: 2, encoder_layers: 1, seed: 11, ..ModelConfig::default() };
    let spec = VocabSpec::new(task).with_entities(SynthConfig::default().entity_classes);
    Model::new(config, build_vocab(&spec).unwrap()).unwrap()
}

#[test]
fn greedy_decoding_is_deterministic_and_flags_truncation() {
    let m = tiny(Task::Spotting);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = generate_sample(&mut rng, &SynthConfig::default(), Task::Spotting, "a").unwrap();
    let v = m.encode(&render_feature_grid(&s, 32)).unwrap();
    let a = greedy_decode(&m, DecoderKind::Content, &[10, 20], &v, 12).unwrap();
    let b = greedy_decode(&m, DecoderKind::Content, &[10, 20], &v, 12).unwrap();
    assert_eq!(a, b);
    assert_eq!(&a.ids[..2], &[10, 20]);
    assert!(a.ids.len() <= 12);
    assert_eq!(a.truncated, a.ids.last() != Some(&m.vocab.eos()));
    let short = greedy_decode(&m, DecoderKind::Content, &[10, 20], &v, 3).unwrap();
    assert_eq!(short.ids.len(), 3);
    assert_eq!(short.truncated, short.ids[2] != m.vocab.eos());
    assert!(greedy_decode(&m, DecoderKind::Content, &[10, 20], &v, 2).is_err());
}

#[test]
fn inference_is_identical_across_execution_modes_and_checkpoints() {
    for task in Task::ALL {
        let mut m = tiny(task);
        let synth = SynthConfig { instances: (2, 3), ..SynthConfig::default().with_seed(3) };
        let corpus = vstp_core::synth::generate_corpus(&synth, task, 4).unwrap();
        let data = prepare(&m, &corpus).unwrap();
        let cfg = TrainConfig { steps: 4, batch_size: 2, warmup: 1, ..TrainConfig::default() };
        train(&mut m, &data, &cfg, Execution::Sequential).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&m, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap();

        let grid = render_feature_grid(&corpus[0], 32);
        let seq = infer_document(&m, &grid, None, Execution::Sequential).unwrap();
        let par = infer_document(&m, &grid, None, Execution::Parallel).unwrap();
        let back = infer_document(&restored, &grid, None, Execution::Parallel).unwrap();
        assert_eq!(seq, par, "{task}");
        assert_eq!(seq, back, "{task}");
        let pred = seq.to_sample("p", 1024, 1024, &m).unwrap();
        assert_eq!(pred.task, task);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masked_positions_never_move_the_loss(seed in any::<u64>(), k in 0usize..4, pads in 0usize..3) {
        let vocab = build_vocab(&VocabSpec::new(Task::Table)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = vocab.len();
        let mut ids: Vec<TokenId> = (0..6).map(|_| rng.gen_range(0..n as TokenId)).filter(|&t| t != vocab.pad()).collect();
        ids.extend(std::iter::repeat_n(vocab.pad(), pads));
        let t = TrainingTarget::from_ids(&ids, k, &vocab);
        let logits = Mat::from_vec(ids.len(), n, (0..ids.len() * n).map(|_| rng.gen_range(-4.0..4.0)).collect());
        let base = weighted_nll_loss(&logits, &t).unwrap();
        prop_assert!(base >= 0.0);
        let mut moved = logits.clone();
        for r in 0..ids.len() {
            if r < k || ids[r] == vocab.pad() {
                moved.row_mut(r).iter_mut().for_each(|x| *x = rng.gen_range(-40.0..40.0));
            }
        }
        prop_assert_eq!(weighted_nll_loss(&moved, &t).unwrap(), base);
    }

    #[test]
    fn cached_decoding_matches_full_recompute(seed in any::<u64>(), len in 1usize..12) {
        let m = tiny(Task::Spotting);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = generate_sample(&mut rng, &SynthConfig::default(), Task::Spotting, "a").unwrap();
        let v = m.encode(&render_feature_grid(&s, 32)).unwrap();
        let ctx = m.decoder_context(DecoderKind::Structured, &v);
        let seq: Vec<TokenId> = (0..len).map(|_| rng.gen_range(0..m.vocab.len() as TokenId)).collect();
        let full = m.logits(&ctx, &seq).unwrap();
        let mut cache = DecoderCache::new(&m);
        for (r, &t) in seq.iter().enumerate() {
            let step = m.decode_step(&ctx, &mut cache, t).unwrap();
            for (a, b) in step.iter().zip(full.row(r)) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
