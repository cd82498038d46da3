use produb::acoustic::AcousticModel;
use produb::adapting::ProsodyModel;
use produb::config::{ModelConfig, TrainConfig};
use produb::corpus::{generate_dub_corpus, generate_speech_corpus, ingest_manifest, CorpusOptions};
use produb::evaluation::{evaluate_corpus, score_utterance, secs, EvalOptions, EvalSetting, ProsodySource};
use produb::signal::{load_waveform, mel_spectrogram, Waveform, FLOOR_DB};
use produb::training::{load_pretrain_items, pretrain};
use produb::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_head: 2,
        decoder_layers: 1,
        ptbe_layers: 1,
        ..ModelConfig::default()
    }
}

fn opts(speakers: usize, utts: usize) -> CorpusOptions {
    CorpusOptions {
        min_phonemes: 4,
        max_phonemes: 6,
        ..CorpusOptions::new(speakers, utts, 21)
    }
}

#[test]
fn ground_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let records = ingest_manifest(generate_dub_corpus(dir.path(), &opts(2, 3)).unwrap()).unwrap();
    let encoder = AcousticModel::<f64>::new(&small(), 3).unwrap();
    for r in &records {
        let mel = mel_spectrogram(&load_waveform::<f64>(&r.wav).unwrap()).unwrap();
        let m = score_utterance(&r.utt_id, &mel, &mel, &r.durations, &r.durations, &encoder).unwrap();
        assert_eq!(m.mcd_dtw, 0.0);
        assert_eq!(m.mcd_dtw_sl, 0.0);
        assert_eq!(m.duration_error, 0.0);
        assert!((m.secs - 1.0).abs() < 1e-9);
    }
}

#[test]
fn secs_is_symmetric_and_ignores_level() {
    let dir = tempfile::tempdir().unwrap();
    let records = ingest_manifest(generate_speech_corpus(dir.path(), &opts(2, 2)).unwrap()).unwrap();
    let encoder = AcousticModel::<f64>::new(&small(), 3).unwrap();
    // a noise bed keeps every mel cell above the silence floor at both levels
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noisy = |w: Waveform<f64>, rng: &mut ChaCha8Rng| {
        let samples = w.samples.iter().map(|&v| v + rng.gen_range(-0.02..0.02)).collect();
        Waveform::new(samples, w.sample_rate)
    };
    let a = noisy(load_waveform::<f64>(&records[0].wav).unwrap(), &mut rng);
    let b = noisy(load_waveform::<f64>(&records[1].wav).unwrap(), &mut rng);
    assert!(mel_spectrogram(&a.scaled(0.5)).unwrap().frames.min_value() > FLOOR_DB);
    let ab = secs(&a, &b, &encoder).unwrap();
    assert!((ab - secs(&b, &a, &encoder).unwrap()).abs() <= 1e-7);
    assert!((-1.0..=1.0).contains(&ab));
    let quieter = a.scaled(0.5);
    let q = secs(&quieter, &b, &encoder).unwrap();
    assert!((q - ab).abs() <= 1e-6, "{q} vs {ab}");
}

#[test]
fn dub2_needs_a_second_utterance_per_speaker() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dub_corpus(dir.path(), &opts(2, 2)).unwrap();
    let acoustic = AcousticModel::<f32>::new(&small(), 0).unwrap();
    let prosodic = ProsodyModel::<f32>::new(&small(), Default::default(), 0).unwrap();
    let err = evaluate_corpus(
        &manifest,
        &acoustic,
        &prosodic,
        EvalSetting::Dub2,
        &EvalOptions::default(),
    )
    .unwrap_err();
    match err {
        Error::Manifest { utt_id, field, .. } => {
            assert_eq!(utt_id, "clip0000");
            assert_eq!(field, "speaker_id");
        }
        other => panic!("expected a manifest error, got {other:?}"),
    }
    // the zero-shot setting needs an explicit reference
    let err = evaluate_corpus(
        &manifest,
        &acoustic,
        &prosodic,
        EvalSetting::ZeroShot,
        &EvalOptions::default(),
    );
    assert!(matches!(err, Err(Error::Manifest { ref field, .. }) if field == "reference"));
}

#[test]
fn reports_are_reproducible_under_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dub_corpus(dir.path(), &opts(2, 4)).unwrap();
    let acoustic = AcousticModel::<f32>::new(&small(), 0).unwrap();
    let prosodic = ProsodyModel::<f32>::new(&small(), Default::default(), 0).unwrap();
    for setting in [EvalSetting::Dub1, EvalSetting::Dub2] {
        let run = |seed, prosody| {
            evaluate_corpus(&manifest, &acoustic, &prosodic, setting, &EvalOptions { seed, prosody }).unwrap()
        };
        let a = run(5, ProsodySource::Model);
        assert_eq!(a.items.len(), 4);
        assert_eq!(a.to_tsv(), run(5, ProsodySource::Model).to_tsv());
        assert_eq!(
            run(5, ProsodySource::Shuffled).to_tsv(),
            run(5, ProsodySource::Shuffled).to_tsv()
        );
        for m in &a.items {
            assert!(m.mcd_dtw_sl >= m.mcd_dtw && m.mcd_dtw >= 0.0);
        }
    }
}

#[test]
fn same_speaker_pairs_score_higher_than_cross_speaker_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let train = generate_speech_corpus(&dir.path().join("train"), &CorpusOptions::new(4, 16, 0)).unwrap();
    let items = load_pretrain_items::<f32>(&ingest_manifest(train).unwrap()).unwrap();
    let config = TrainConfig {
        epochs: 10,
        model: ModelConfig { d_model: 32, ..small() },
        ..TrainConfig::pretrain()
    };
    let mut encoder = AcousticModel::<f32>::new(&config.model, 0).unwrap();
    pretrain(&items, &config, &mut encoder).unwrap();

    // held-out utterances of the same speaker templates
    let test = generate_speech_corpus(&dir.path().join("test"), &CorpusOptions::new(4, 16, 99)).unwrap();
    let records = ingest_manifest(test).unwrap();
    let wavs: Vec<_> = records.iter().map(|r| load_waveform::<f32>(&r.wav).unwrap()).collect();
    let (mut same, mut cross) = (Vec::new(), Vec::new());
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let v = secs(&wavs[i], &wavs[j], &encoder).unwrap();
            if records[i].speaker_id == records[j].speaker_id {
                same.push(v);
            } else {
                cross.push(v);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&same) > mean(&cross),
        "same {} cross {}",
        mean(&same),
        mean(&cross)
    );
}
