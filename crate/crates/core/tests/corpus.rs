use produb::alignment::durations_to_alignment;
use produb::corpus::{
    generate_dub_corpus, generate_speech_corpus, ingest_manifest, read_visual, write_manifest, CorpusOptions,
    RecordKind,
};
use produb::signal::{extract_prosody, load_waveform, mel_spectrogram};
use produb::Error;

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn speech_corpus_contract() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_speech_corpus(dir.path(), &CorpusOptions::new(4, 32, 0)).unwrap();
    let records = ingest_manifest(&manifest).unwrap();
    assert_eq!(records.len(), 32);
    for r in &records {
        assert_eq!(r.kind, RecordKind::Speech);
        let w = load_waveform::<f64>(&r.wav).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        assert_eq!(r.durations.total(), m.n_frames());
        assert_eq!(durations_to_alignment(&r.durations).unwrap().n_frames(), m.n_frames());
    }
}

#[test]
fn extractor_recovers_generator_pitch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_speech_corpus(dir.path(), &CorpusOptions::new(4, 8, 3)).unwrap();
    let mut checked = 0;
    let mut worst = 0.0f64;
    for r in ingest_manifest(&manifest).unwrap() {
        let w = load_waveform::<f64>(&r.wav).unwrap();
        let m = mel_spectrogram(&w).unwrap();
        let p = extract_prosody(&m, &w);
        for (t, (&est, &truth)) in p.pitch.iter().zip(&r.prosody.pitch).enumerate() {
            // the analysis window hangs over the ends of the utterance
            if t < 2 || t + 2 >= p.pitch.len() || est == 0.0 {
                continue;
            }
            worst = worst.max((est - truth as f64).abs());
            checked += 1;
        }
    }
    assert!(checked > 300);
    assert!(worst <= 3.0, "worst pitch error {worst} Hz");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = CorpusOptions::new(2, 6, 42);
    generate_dub_corpus(a.path(), &opts).unwrap();
    generate_dub_corpus(b.path(), &opts).unwrap();
    for rel in ["manifest.jsonl", "wavs/clip0003.wav", "visual/clip0005.pdvis"] {
        assert_eq!(
            std::fs::read(a.path().join(rel)).unwrap(),
            std::fs::read(b.path().join(rel)).unwrap(),
            "{rel}"
        );
    }
}

#[test]
fn dub_corpus_emotion_drives_pitch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dub_corpus(dir.path(), &CorpusOptions::new(4, 32, 1)).unwrap();
    let records = ingest_manifest(&manifest).unwrap();
    let mut amp = Vec::new();
    let mut mean_pitch = Vec::new();
    for r in &records {
        let v = read_visual::<f32>(r.visual.as_ref().unwrap()).unwrap();
        assert_eq!(v.n_frames() as f64, (r.n_frames() as f64 / 3.2).round());
        let label = r.emotion_label.unwrap();
        assert!((-1..=1).contains(&label));
        amp.push(r.emotion_amplitude.unwrap() as f64);
        mean_pitch.push(r.prosody.pitch.iter().map(|&p| p as f64).sum::<f64>() / r.n_frames() as f64);
    }
    let rho = pearson(&amp, &mean_pitch);
    assert!(rho > 0.5, "correlation {rho}");
    // least-squares R² of a one-variable linear fit is the squared correlation
    assert!(rho * rho > 0.25);
}

#[test]
fn manifest_validation_names_the_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dub_corpus(dir.path(), &CorpusOptions::new(2, 3, 5)).unwrap();
    let mut records = ingest_manifest(&manifest).unwrap();

    let mut broken = records.clone();
    broken[1].durations.0[0] += 1;
    write_manifest(&manifest, &broken).unwrap();
    match ingest_manifest(&manifest) {
        Err(Error::Manifest {
            utt_id, field, line, ..
        }) => {
            assert_eq!(utt_id, records[1].utt_id);
            assert_eq!(field, "durations");
            assert_eq!(line, 2);
        }
        other => panic!("expected manifest error, got {other:?}"),
    }

    std::fs::remove_file(records[2].visual.as_ref().unwrap()).unwrap();
    write_manifest(&manifest, &records).unwrap();
    match ingest_manifest(&manifest) {
        Err(Error::Manifest { utt_id, field, .. }) => {
            assert_eq!(utt_id, records[2].utt_id);
            assert_eq!(field, "visual");
        }
        other => panic!("expected manifest error, got {other:?}"),
    }

    records.truncate(2);
    write_manifest(&manifest, &records).unwrap();
    assert_eq!(ingest_manifest(&manifest).unwrap(), records);
}

#[test]
fn malformed_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.jsonl");
    std::fs::write(&p, "{\"utt_id\": \"x\"}\n").unwrap();
    assert!(matches!(ingest_manifest(&p), Err(Error::Manifest { line: 1, .. })));
}
