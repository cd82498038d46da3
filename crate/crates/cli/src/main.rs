//! `produb` command-line tool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use produb::acoustic::AcousticModel;
use produb::adapting::{synthesize_dub, ProsodyModel};
use produb::alignment::{PhonemeSequence, PHONEME_INVENTORY};
use produb::augment::{apply_policy, EnhancementPolicy};
use produb::config::{Parameterization, Stage, TrainConfig};
use produb::corpus::{
    generate_dub_corpus, generate_speech_corpus, ingest_manifest, read_visual, write_manifest, CorpusOptions,
};
use produb::evaluation::{
    evaluate_corpus, select_references, EvalOptions, EvalSetting, ExternalEvaluator, ProsodySource,
};
use produb::optim::Adam;
use produb::signal::{load_waveform, save_waveform, DEFAULT_ITERATIONS, SAMPLE_RATE};
use produb::training::{
    adapt, load_adapt_items, load_checkpoint, load_pretrain_items, pretrain, prosody_stats, save_checkpoint,
    write_training_log, Checkpoint, RngState,
};
use produb::{Acoustic, DubCheckpoint, Error, Prosodic, Real, Result};

#[derive(Parser, Debug)]
#[command(name = "produb", version, about = "Prosody-adapting movie dubbing")]
struct Cli {
    /// TOML file with training and model keys; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic speech and/or dubbing corpus.
    GenCorpus(GenCorpusArgs),
    /// Replace a fraction of a corpus with pitch-shifted or stretched copies.
    Augment(AugmentArgs),
    /// Stage I: train the acoustic system.
    Pretrain(PretrainArgs),
    /// Stage II: train the prosody-adapting system with frozen acoustics.
    Adapt(AdaptArgs),
    /// Dub one clip.
    Dub(DubArgs),
    /// Score a dubbing corpus.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CorpusKind {
    Speech,
    Dub,
    Both,
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    kind: CorpusKind,
    #[arg(long, default_value_t = 4)]
    speakers: usize,
    #[arg(long, default_value_t = 32)]
    utts: usize,
    #[arg(long)]
    min_phonemes: Option<usize>,
    #[arg(long)]
    max_phonemes: Option<usize>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    movies: Option<usize>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.03)]
    ratio: f64,
}

/// Flags mirroring the training config keys.
#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    enhancement_ratio: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_head: Option<usize>,
    #[arg(long)]
    decoder_layers: Option<usize>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    ptbe_layers: Option<usize>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    diffusion_steps: Option<usize>,
    #[arg(long)]
    diffusion_beta_start: Option<f64>,
    #[arg(long)]
    diffusion_beta_end: Option<f64>,
    #[arg(long)]
    diffusion_hidden: Option<usize>,
    #[arg(long, value_parser = parse_parameterization)]
    diffusion_parameterization: Option<Parameterization>,
    #[arg(long)]
    weight_pitch: Option<f64>,
    #[arg(long)]
    weight_energy: Option<f64>,
    #[arg(long)]
    weight_duration: Option<f64>,
    #[arg(long)]
    weight_style: Option<f64>,
}

fn parse_parameterization(s: &str) -> std::result::Result<Parameterization, String> {
    match s {
        "clean" => Ok(Parameterization::Clean),
        "noise" => Ok(Parameterization::Noise),
        _ => Err(format!("expected clean or noise, got {s:?}")),
    }
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for the checkpoint and training log.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Stage I checkpoint holding the acoustic system.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args, Debug)]
struct DubArgs {
    /// Visual feature file of the silent clip.
    #[arg(long)]
    clip: PathBuf,
    /// Reference audio of the target voice.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// File holding the script as phoneme ids.
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    vocoder_iterations: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProsodyArg {
    Model,
    Shuffled,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_setting)]
    setting: EvalSetting,
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory for the report (and generated audio for an external evaluator).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "model")]
    prosody: ProsodyArg,
    /// External scorer, run as `PROGRAM ARGS.. MANIFEST`.
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long = "external-arg", allow_hyphen_values = true)]
    external_args: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
    vocoder_iterations: usize,
}

fn parse_setting(s: &str) -> std::result::Result<EvalSetting, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    io(path, std::fs::create_dir_all(path))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    io(path, std::fs::canonicalize(path))
}

/// Training config layered as defaults < config file < flags.
fn train_config(stage: Stage, file: Option<&Path>, seed: Option<u64>, flags: &TrainFlags) -> Result<TrainConfig> {
    let base = match stage {
        Stage::Pretrain => TrainConfig::pretrain(),
        Stage::Adapt => TrainConfig::adapt(),
    };
    let mut config = match file {
        None => base,
        Some(path) => {
            let text = io(path, std::fs::read_to_string(path))?;
            let overlay: toml::Table =
                toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Format(e.to_string()))?;
            merge(&mut merged, overlay);
            toml::Value::Table(merged)
                .try_into()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        }
    };
    config.stage = stage;
    if let Some(s) = seed {
        config.seed = s;
    }
    let f = flags;
    let m = &mut config.model;
    let w = &mut config.loss_weights;
    set(&mut config.epochs, f.epochs);
    set(&mut config.lr, f.lr);
    set(&mut config.batch_size, f.batch_size);
    set(&mut config.enhancement_ratio, f.enhancement_ratio);
    set(&mut m.d_model, f.d_model);
    set(&mut m.n_head, f.n_head);
    set(&mut m.decoder_layers, f.decoder_layers);
    set(&mut m.kernel_size, f.kernel_size);
    set(&mut m.ptbe_layers, f.ptbe_layers);
    set(&mut m.visual_dim, f.visual_dim);
    set(&mut m.diffusion.steps, f.diffusion_steps);
    set(&mut m.diffusion.beta_start, f.diffusion_beta_start);
    set(&mut m.diffusion.beta_end, f.diffusion_beta_end);
    set(&mut m.diffusion.hidden, f.diffusion_hidden);
    set(&mut m.diffusion.parameterization, f.diffusion_parameterization);
    set(&mut w.pitch, f.weight_pitch);
    set(&mut w.energy, f.weight_energy);
    set(&mut w.duration, f.weight_duration);
    set(&mut w.style, f.weight_style);
    config.validate()?;
    Ok(config)
}

fn set<V>(slot: &mut V, v: Option<V>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn gen_corpus(args: &GenCorpusArgs, seed: u64) -> Result<()> {
    let mut opts = CorpusOptions::new(args.speakers, args.utts, seed);
    set(&mut opts.min_phonemes, args.min_phonemes);
    set(&mut opts.max_phonemes, args.max_phonemes);
    set(&mut opts.visual_dim, args.visual_dim);
    set(&mut opts.n_movies, args.movies);
    create_dir(&args.out)?;
    if matches!(args.kind, CorpusKind::Speech | CorpusKind::Both) {
        let m = generate_speech_corpus(&args.out.join("speech"), &opts)?;
        println!("{}", m.display());
    }
    if matches!(args.kind, CorpusKind::Dub | CorpusKind::Both) {
        let m = generate_dub_corpus(&args.out.join("dub"), &opts)?;
        println!("{}", m.display());
    }
    Ok(())
}

fn augment(args: &AugmentArgs, seed: u64) -> Result<()> {
    let records = ingest_manifest(absolute(&args.manifest)?)?;
    create_dir(&args.out)?;
    let out = absolute(&args.out)?;
    let policy = EnhancementPolicy {
        ratio: args.ratio,
        seed,
        ..EnhancementPolicy::default()
    };
    let records = apply_policy(&records, &policy, &out)?;
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    println!("{}", manifest.display());
    Ok(())
}

/// Outcome fields stored with a checkpoint; absent after a failed run.
struct Progress {
    steps: usize,
    rng: RngState,
    optimizer: Adam<Real>,
}

/// Placeholder RNG position for a rolled-back model.
fn unknown_rng(config: &TrainConfig) -> RngState {
    RngState {
        seed: config.seed,
        stream: 0,
        word_pos: "0".into(),
    }
}

fn save_model(
    path: &Path,
    config: &TrainConfig,
    acoustic: &Acoustic,
    prosodic: Option<&Prosodic>,
    progress: Option<Progress>,
    rng: RngState,
) -> Result<()> {
    let (epoch, step, rng, optimizer) = match progress {
        Some(p) => (config.epochs, p.steps, p.rng, Some(p.optimizer)),
        None => (0, 0, rng, None),
    };
    let ckpt = Checkpoint {
        stage: config.stage,
        config: config.clone(),
        epoch,
        step,
        rng,
        acoustic: acoustic.params.clone(),
        prosodic: prosodic.map(|p| p.params.clone()),
        stats: prosodic.map(|p| p.stats),
        optimizer,
        acoustic_hash: acoustic.params_hash(),
    };
    save_checkpoint(&ckpt, path)
}

/// Saves the rolled-back model next to `path` when training diverged.
fn keep_last_good(err: Error, path: &Path, save: impl FnOnce(&Path) -> Result<()>) -> Error {
    if matches!(err, Error::TrainingFailure { .. }) {
        let mut name = path.as_os_str().to_owned();
        name.push(".last_good");
        if let Err(e) = save(Path::new(&name)) {
            eprintln!("could not save last good parameters: {e}");
        }
    }
    err
}

fn run_pretrain(args: &PretrainArgs, file: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let config = train_config(Stage::Pretrain, file, seed, &args.train)?;
    let mut records = ingest_manifest(absolute(&args.manifest)?)?;
    create_dir(&args.out)?;
    if config.enhancement_ratio > 0.0 {
        let policy = EnhancementPolicy {
            ratio: config.enhancement_ratio,
            seed: config.seed,
            ..EnhancementPolicy::default()
        };
        records = apply_policy(&records, &policy, &args.out.join("augmented"))?;
    }
    let items = load_pretrain_items::<Real>(&records).map_err(|e| e.in_stage("feature extraction"))?;
    let mut model = AcousticModel::new(&config.model, config.seed)?;
    let ckpt = args.out.join("acoustic.ckpt");
    let out = match pretrain(&items, &config, &mut model) {
        Ok(o) => o,
        Err(e) => {
            return Err(keep_last_good(e, &ckpt, |p| {
                save_model(p, &config, &model, None, None, unknown_rng(&config))
            }));
        }
    };
    write_training_log(args.out.join("train_log.tsv"), &out.log)?;
    let progress = Progress {
        steps: out.steps,
        rng: out.rng.clone(),
        optimizer: out.optimizer,
    };
    save_model(&ckpt, &config, &model, None, Some(progress), unknown_rng(&config))?;
    println!(
        "reconstruction loss {:.4} -> {:.4} over {} steps",
        out.initial_loss, out.final_loss, out.steps
    );
    println!("{}", ckpt.display());
    Ok(())
}

fn load_acoustic(ckpt: &DubCheckpoint) -> Result<Acoustic> {
    AcousticModel::from_params(&ckpt.config.model, &ckpt.acoustic)
}

fn load_models(path: &Path) -> Result<(Acoustic, Prosodic)> {
    let ckpt: DubCheckpoint = load_checkpoint(path)?;
    let acoustic = load_acoustic(&ckpt)?;
    let (Some(params), Some(stats)) = (&ckpt.prosodic, ckpt.stats) else {
        return Err(Error::InvalidArgument(format!(
            "{} holds no prosody-adapting parameters; run adapt first",
            path.display()
        )));
    };
    let prosodic = ProsodyModel::from_params(&ckpt.config.model, stats, params)?;
    Ok((acoustic, prosodic))
}

fn run_adapt(args: &AdaptArgs, file: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut config = train_config(Stage::Adapt, file, seed, &args.train)?;
    let stage_one: DubCheckpoint = load_checkpoint(&args.ckpt).map_err(|e| e.in_stage("load checkpoint"))?;
    // the architecture is fixed by the acoustic checkpoint
    config.model = stage_one.config.model.clone();
    let acoustic = load_acoustic(&stage_one)?;
    let records = ingest_manifest(absolute(&args.manifest)?)?;
    let items = load_adapt_items::<Real>(&records).map_err(|e| e.in_stage("feature extraction"))?;
    let stats = prosody_stats(&items)?;
    let mut model = ProsodyModel::new(&config.model, stats, config.seed)?;
    create_dir(&args.out)?;
    let ckpt = args.out.join("dub.ckpt");
    let out = match adapt(&items, &config, &acoustic, &mut model) {
        Ok(o) => o,
        Err(e) => {
            return Err(keep_last_good(e, &ckpt, |p| {
                save_model(p, &config, &acoustic, Some(&model), None, unknown_rng(&config))
            }));
        }
    };
    write_training_log(args.out.join("train_log.tsv"), &out.log)?;
    let progress = Progress {
        steps: out.steps,
        rng: out.rng.clone(),
        optimizer: out.optimizer,
    };
    save_model(
        &ckpt,
        &config,
        &acoustic,
        Some(&model),
        Some(progress),
        unknown_rng(&config),
    )?;
    let (a, b) = (out.initial, out.final_);
    println!(
        "L_p {:.4} -> {:.4}  L_n {:.4} -> {:.4}  L_d {:.4} -> {:.4}  L_Sp {:.4} -> {:.4}",
        a.pitch, b.pitch, a.energy, b.energy, a.duration, b.duration, a.style, b.style
    );
    println!("{}", ckpt.display());
    Ok(())
}

fn run_dub(args: &DubArgs, seed: u64) -> Result<()> {
    let (acoustic, prosodic) = load_models(&args.ckpt).map_err(|e| e.in_stage("load checkpoint"))?;
    let text = io(&args.script, std::fs::read_to_string(&args.script))?;
    let script = PhonemeSequence::parse(&text, PHONEME_INVENTORY).map_err(|e| e.in_stage("script"))?;
    let visual = read_visual::<Real>(&args.clip).map_err(|e| e.in_stage("visual features"))?;
    let reference = load_waveform::<Real>(&args.reference).map_err(|e| e.in_stage("reference audio"))?;
    let (wav, out) = synthesize_dub(
        &script,
        &reference,
        &visual,
        &acoustic,
        &prosodic,
        seed,
        args.vocoder_iterations,
    )?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_waveform(&args.out, &wav)?;
    let log_path = args.out.with_extension("log");
    let pitch_hz: Vec<String> = out.pitch.iter().map(|v| format!("{:.2}", v.exp())).collect();
    let log = format!(
        "script\t{}\nclip\t{}\nreference\t{}\ncheckpoint\t{}\nseed\t{seed}\nvisual_frames\t{}\nmel_frames\t{}\nsamples\t{}\nseconds\t{:.4}\ndurations\t{}\npitch_hz\t{}\n",
        script.to_text(),
        args.clip.display(),
        args.reference.display(),
        args.ckpt.display(),
        visual.n_frames(),
        out.mel.n_frames(),
        wav.len(),
        wav.len() as f64 / SAMPLE_RATE as f64,
        out.durations.to_text(),
        pitch_hz.join(","),
    );
    io(&log_path, std::fs::write(&log_path, log))?;
    println!("{}", args.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs, seed: u64) -> Result<()> {
    let (acoustic, prosodic) = load_models(&args.ckpt).map_err(|e| e.in_stage("load checkpoint"))?;
    let manifest = absolute(&args.manifest)?;
    let prosody = match args.prosody {
        ProsodyArg::Model => ProsodySource::Model,
        ProsodyArg::Shuffled => ProsodySource::Shuffled,
    };
    let report = evaluate_corpus(
        &manifest,
        &acoustic,
        &prosodic,
        args.setting,
        &EvalOptions { seed, prosody },
    )?;
    print!("{}", report.summary());
    let Some(out) = &args.out else {
        if args.external.is_some() {
            return Err(Error::InvalidArgument(
                "--external needs --out for the generated audio".into(),
            ));
        }
        return Ok(());
    };
    create_dir(out)?;
    report.write_tsv(out.join("report.tsv"))?;
    if let Some(program) = &args.external {
        let records = ingest_manifest(&manifest)?;
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let references = select_references(&records, args.setting, &dir)?;
        let wav_dir = absolute(out)?.join("generated");
        create_dir(&wav_dir)?;
        let mut generated = Vec::new();
        for (i, (r, reference)) in records.iter().zip(&references).enumerate() {
            let visual_path = r
                .visual
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no clip", r.utt_id)))?;
            let visual = read_visual::<Real>(visual_path)?;
            let reference = load_waveform::<Real>(reference)?;
            let s = seed.wrapping_add(i as u64);
            let (wav, _) = synthesize_dub(
                &r.phonemes,
                &reference,
                &visual,
                &acoustic,
                &prosodic,
                s,
                args.vocoder_iterations,
            )?;
            let path = wav_dir.join(format!("{}.wav", r.utt_id));
            save_waveform(&path, &wav)?;
            generated.push((r.utt_id.clone(), path));
        }
        let evaluator = ExternalEvaluator {
            program: program.clone(),
            args: args.external_args.clone(),
        };
        let scores = evaluator
            .run(&generated, out)
            .map_err(|e| e.in_stage("external evaluator"))?;
        let mut body = format!("utt_id\t{}\n", scores.metrics.join("\t"));
        for (id, vals) in &scores.rows {
            let vals: Vec<String> = vals.iter().map(f64::to_string).collect();
            body.push_str(&format!("{id}\t{}\n", vals.join("\t")));
        }
        let path = out.join("external_scores.tsv");
        io(&path, std::fs::write(&path, &body))?;
        print!("external\n{body}");
    }
    Ok(())
}

fn configure_workers() -> Result<()> {
    let Ok(v) = std::env::var("PRODUB_NUM_WORKERS") else {
        return Ok(());
    };
    let n: usize =
        v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::InvalidArgument(format!("PRODUB_NUM_WORKERS must be a positive integer, got {v:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    configure_workers()?;
    let file = cli.config.as_deref();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a, seed).map_err(|e| e.in_stage("gen-corpus")),
        Command::Augment(a) => augment(a, seed).map_err(|e| e.in_stage("augment")),
        Command::Pretrain(a) => run_pretrain(a, file, cli.seed).map_err(|e| e.in_stage("pretrain")),
        Command::Adapt(a) => run_adapt(a, file, cli.seed).map_err(|e| e.in_stage("adapt")),
        Command::Dub(a) => run_dub(a, seed).map_err(|e| e.in_stage("dub")),
        Command::Eval(a) => run_eval(a, seed).map_err(|e| e.in_stage("eval")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\t'], " ");
            let _ = writeln!(std::io::stderr(), "error\t{}\t{message}", e.kind());
            ExitCode::FAILURE
        }
    }
}
