//! Audio I/O, mel analysis and inversion, and ground-truth prosody extraction.

pub mod audio;
pub mod invert;
pub mod mel;
pub mod prosody;

pub use audio::{load_waveform, resample, save_waveform, Waveform};
pub use invert::{invert_mel, invert_mel_seeded, DEFAULT_ITERATIONS};
pub use mel::{mel_spectrogram, read_mel_cache, write_mel_cache, MelAnalyzer, MelSpectrogram};
pub use prosody::{extract_prosody, ProsodyCurves};

pub const SAMPLE_RATE: u32 = 24_000;
pub const N_FFT: usize = 2048;
pub const HOP_LENGTH: usize = 300;
pub const WIN_LENGTH: usize = 1200;
pub const N_MELS: usize = 80;
pub const FLOOR_DB: f64 = -80.0;

/// Seconds per mel frame at the default geometry (0.0125 s).
pub const HOP_SECONDS: f64 = HOP_LENGTH as f64 / SAMPLE_RATE as f64;
