use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use produb::corpus::{ingest_manifest, read_visual, write_visual, VisualFeatureBundle};
use produb::signal::load_waveform;
use produb::Matrix;

const SMALL_MODEL: &[&str] = &[
    "--d-model",
    "8",
    "--n-head",
    "2",
    "--decoder-layers",
    "1",
    "--ptbe-layers",
    "1",
    "--enhancement-ratio",
    "0",
];

fn produb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_produb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = produb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn gen(out: &Path, speakers: &str, utts: &str) {
    ok(&[
        "gen-corpus",
        "--out",
        s(out),
        "--speakers",
        speakers,
        "--utts",
        utts,
        "--min-phonemes",
        "4",
        "--max-phonemes",
        "5",
        "--seed",
        "0",
    ]);
}

#[test]
fn gen_corpus_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    gen(&a, "2", "3");
    gen(&b, "2", "3");
    let (fa, fb) = (files(&a), files(&b));
    assert!(fa.len() > 6);
    assert_eq!(fa, fb);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = produb(&["gen-corpus", "--out", "x", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = produb(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_a_single_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = produb(&["pretrain", "--manifest", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    let fields: Vec<&str> = err.trim_end().split('\t').collect();
    assert_eq!(fields[..2], ["error", "io"]);
    assert!(fields[2].starts_with("pretrain: "));
}

fn log_steps(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("train_log.tsv"))
        .unwrap()
        .lines()
        .count()
        - 1
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    gen(&dir.path().join("c"), "2", "4");
    let manifest = dir.path().join("c/speech/manifest.jsonl");
    let config = dir.path().join("train.toml");
    std::fs::write(
        &config,
        "epochs = 2\nbatch_size = 4\n\n[model]\nd_model = 8\nn_head = 2\n",
    )
    .unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "pretrain",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out),
            "--config",
            s(&config),
        ];
        args.extend_from_slice(&[
            "--decoder-layers",
            "1",
            "--ptbe-layers",
            "1",
            "--enhancement-ratio",
            "0",
        ]);
        args.extend_from_slice(extra);
        ok(&args);
        out
    };
    assert_eq!(log_steps(&run("file", &[])), 2);
    assert_eq!(log_steps(&run("flag", &["--epochs", "1"])), 1);
    assert_eq!(log_steps(&run("batch", &["--batch-size", "2"])), 4);
}

#[test]
fn train_dub_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    gen(&root.join("c"), "2", "4");
    let speech = root.join("c/speech/manifest.jsonl");
    let dub = root.join("c/dub/manifest.jsonl");

    let stage_one_dir = root.join("p");
    let mut args = vec![
        "pretrain",
        "--manifest",
        s(&speech),
        "--out",
        s(&stage_one_dir),
        "--epochs",
        "2",
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    let stage_one = root.join("p/acoustic.ckpt");
    assert!(stage_one.exists());
    assert_eq!(log_steps(&root.join("p")), 2);

    // a Stage I checkpoint cannot dub
    let records = ingest_manifest(&dub).unwrap();
    let clip: VisualFeatureBundle<f32> = read_visual(records[0].visual.as_ref().unwrap()).unwrap();
    let second = VisualFeatureBundle::new(
        Matrix::from_fn(25, clip.dim(), |t, j| clip.emotion[(t % clip.n_frames(), j)]),
        clip.atmosphere.clone(),
        Matrix::from_fn(25, clip.dim(), |t, j| clip.lip[(t % clip.n_frames(), j)]),
    )
    .unwrap();
    let clip_path = root.join("second.pdvis");
    write_visual(&clip_path, &second).unwrap();
    let script = root.join("script.txt");
    std::fs::write(&script, records[0].phonemes.to_text()).unwrap();
    let wav = root.join("out/dubbed.wav");
    let dub_args = |ckpt: &Path| {
        vec![
            "dub".to_string(),
            "--clip".into(),
            s(&clip_path).into(),
            "--ref".into(),
            s(&records[1].wav).into(),
            "--script".into(),
            s(&script).into(),
            "--ckpt".into(),
            s(ckpt).into(),
            "--out".into(),
            s(&wav).into(),
            "--vocoder-iterations".into(),
            "4".into(),
        ]
    };
    let args = dub_args(&stage_one);
    let out = produb(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error\tinvalid_argument\tdub: "));

    ok(&[
        "adapt",
        "--manifest",
        s(&dub),
        "--ckpt",
        s(&stage_one),
        "--out",
        s(&root.join("a")),
        "--epochs",
        "2",
    ]);
    let ckpt = root.join("a/dub.ckpt");
    let args = dub_args(&ckpt);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let w = load_waveform::<f32>(&wav).unwrap();
    assert!(w.len().abs_diff(24_000) <= 300, "{} samples", w.len());
    let log = std::fs::read_to_string(wav.with_extension("log")).unwrap();
    assert!(log.contains(&format!("samples\t{}\n", w.len())));
    assert!(log.contains("visual_frames\t25\n"));

    // deterministic under the same seed
    let first = std::fs::read(&wav).unwrap();
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(std::fs::read(&wav).unwrap(), first);

    let report_dir = root.join("eval");
    let summary = ok(&[
        "eval", "--manifest", s(&dub), "--setting", "dub1", "--ckpt", s(&ckpt), "--out", s(&report_dir),
        "--vocoder-iterations", "2", "--external", "sh", "--external-arg=-c", "--external-arg",
        "printf 'utt_id\\tcount\\n'; while IFS=\"$(printf '\\t')\" read -r id path; do test -f \"$path\" && printf '%s\\t1\\n' \"$id\"; done < \"$0\"",
    ]);
    assert!(summary.contains("dub1"));
    let report = std::fs::read_to_string(report_dir.join("report.tsv")).unwrap();
    assert_eq!(report.lines().count(), records.len() + 2);
    let external = std::fs::read_to_string(report_dir.join("external_scores.tsv")).unwrap();
    assert_eq!(external.lines().count(), records.len() + 1);
    assert!(external.lines().skip(1).all(|l| l.ends_with("\t1")));

    // with one utterance per speaker there is no same-speaker reference
    let lonely = root.join("lonely");
    gen(&lonely, "2", "2");
    let out = produb(&[
        "eval",
        "--manifest",
        s(&lonely.join("dub/manifest.jsonl")),
        "--setting",
        "dub2",
        "--ckpt",
        s(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error\tmanifest\t"), "{err}");
    assert!(err.contains("speaker_id"));
}
