use produb::acoustic::AcousticModel;
use produb::adapting::ProsodyModel;
use produb::config::{ModelConfig, TrainConfig};
use produb::corpus::{generate_dub_corpus, generate_speech_corpus, ingest_manifest, CorpusOptions};
use produb::training::{
    adapt, check_frozen, load_adapt_items, load_pretrain_items, pretrain, prosody_stats, write_training_log, AdaptItem,
    PretrainItem,
};
use produb::Error;

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_head: 2,
        decoder_layers: 1,
        ptbe_layers: 1,
        ..ModelConfig::default()
    }
}

fn opts(n: usize) -> CorpusOptions {
    CorpusOptions {
        min_phonemes: 4,
        max_phonemes: 6,
        ..CorpusOptions::new(2, n, 11)
    }
}

fn speech(n: usize) -> Vec<PretrainItem<f64>> {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_speech_corpus(dir.path(), &opts(n)).unwrap();
    load_pretrain_items(&ingest_manifest(&m).unwrap()).unwrap()
}

fn clips(n: usize) -> Vec<AdaptItem<f64>> {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dub_corpus(dir.path(), &opts(n)).unwrap();
    load_adapt_items(&ingest_manifest(&m).unwrap()).unwrap()
}

fn pretrain_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        model: small(),
        ..TrainConfig::pretrain()
    }
}

fn adapt_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        model: small(),
        ..TrainConfig::adapt()
    }
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let items = speech(3);
    let mut model = AcousticModel::<f64>::new(&small(), 5).unwrap();
    let before = model.params_hash();
    let out = pretrain(&items, &pretrain_config(0), &mut model).unwrap();
    assert_eq!(model.params_hash(), before);
    assert_eq!(out.steps, 0);
    assert!(out.log.is_empty());
    assert_eq!(out.initial_loss, out.final_loss);
}

#[test]
fn pretraining_is_deterministic_and_logs_consistent_totals() {
    let items = speech(4);
    let run = || {
        let mut model = AcousticModel::<f64>::new(&small(), 5).unwrap();
        let out = pretrain(&items, &pretrain_config(2), &mut model).unwrap();
        (out, model.params_hash())
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert!((a.final_loss - b.final_loss).abs() <= 1e-6);
    assert_eq!(a.log, b.log);
    assert_eq!(a.steps, 4);
    assert!(a.final_loss < a.initial_loss);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.tsv");
    write_training_log(&path, &a.log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "step\tloss\tL_p\tL_n\tL_d\tL_Sp");
    assert_eq!(lines.count(), 4);
}

#[test]
fn empty_corpus_is_rejected() {
    let mut model = AcousticModel::<f64>::new(&small(), 5).unwrap();
    assert!(matches!(
        pretrain(&[], &pretrain_config(1), &mut model),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn adapting_keeps_acoustics_frozen_and_totals_decompose() {
    let items = clips(4);
    let acoustic = AcousticModel::<f64>::new(&small(), 1).unwrap();
    let before = acoustic.params_hash();
    let mut prosodic = ProsodyModel::<f64>::new(&small(), prosody_stats(&items).unwrap(), 2).unwrap();
    let cfg = adapt_config(2);
    let out = adapt(&items, &cfg, &acoustic, &mut prosodic).unwrap();
    assert_eq!(acoustic.params_hash(), before);
    assert_eq!(out.acoustic_hash, before);
    assert_eq!(out.steps, 4);
    for s in &out.log {
        assert!((s.loss - s.components.weighted_total(&cfg.loss_weights)).abs() <= 1e-7);
    }
    // the diffusion term only appears in the second half
    assert_eq!(out.log[0].components.style, 0.0);
    assert!(out.log[3].components.style > 0.0);
}

#[test]
fn zero_diffusion_weight_leaves_the_denoiser_alone() {
    let items = clips(4);
    let acoustic = AcousticModel::<f64>::new(&small(), 1).unwrap();
    let stats = prosody_stats(&items).unwrap();
    let denoiser_values = |m: &ProsodyModel<f64>| -> Vec<Vec<f64>> {
        m.params
            .iter()
            .filter(|(_, name, _)| ProsodyModel::<f64>::is_diffusion_param(name))
            .map(|(_, _, v)| v.as_slice().to_vec())
            .collect()
    };
    let mut cfg = adapt_config(2);
    cfg.loss_weights.style = 0.0;
    let mut model = ProsodyModel::<f64>::new(&small(), stats, 2).unwrap();
    let initial = denoiser_values(&model);
    assert!(!initial.is_empty());
    adapt(&items, &cfg, &acoustic, &mut model).unwrap();
    assert_eq!(denoiser_values(&model), initial);

    let mut model = ProsodyModel::<f64>::new(&small(), stats, 2).unwrap();
    adapt(&items, &adapt_config(2), &acoustic, &mut model).unwrap();
    assert_ne!(denoiser_values(&model), initial);
}

#[test]
fn changed_acoustics_are_a_freeze_violation() {
    let mut acoustic = AcousticModel::<f64>::new(&small(), 1).unwrap();
    let hash = acoustic.params_hash();
    check_frozen(&acoustic, &hash, 0).unwrap();
    let id = acoustic.params.ids().next().unwrap();
    acoustic.params.get_mut(id).as_mut_slice()[0] += 1e-3;
    match check_frozen(&acoustic, &hash, 3) {
        Err(Error::FreezeViolation { epoch, before, after }) => {
            assert_eq!(epoch, 3);
            assert_eq!(before, hash);
            assert_ne!(after, hash);
        }
        other => panic!("expected freeze violation, got {other:?}"),
    }
}

#[test]
fn non_dub_records_cannot_be_adapted_on() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_speech_corpus(dir.path(), &opts(2)).unwrap();
    assert!(matches!(
        load_adapt_items::<f64>(&ingest_manifest(&m).unwrap()),
        Err(Error::InvalidArgument(_))
    ));
}
