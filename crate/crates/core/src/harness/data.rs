//! Utterances for training and evaluation: a synthetic tone corpus and a
//! manifest reader for 16-bit mono WAV files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LabelSequence;
use crate::model::{FRAME_LEN, SAMPLE_RATE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataMode {
    #[default]
    Synthetic,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub mode: DataMode,
    pub seed: u64,
    pub num_samples: usize,
    /// Output symbols including the blank.
    pub vocab_size: usize,
    /// Inclusive range of label lengths.
    pub label_len: [usize; 2],
    /// Inclusive range of frames spent on each symbol.
    pub frames_per_symbol: [usize; 2],
    /// Inclusive range of silent frames before, between and after symbols.
    pub gap_frames: [usize; 2],
    pub frame_len: usize,
    pub sample_rate: usize,
    pub noise: f64,
    /// CSV with columns `path,labels` (labels space separated); file mode only.
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            mode: DataMode::Synthetic,
            seed: 0,
            num_samples: 20,
            vocab_size: 5,
            label_len: [1, 3],
            frames_per_symbol: [3, 5],
            gap_frames: [1, 2],
            frame_len: FRAME_LEN,
            sample_rate: SAMPLE_RATE,
            noise: 0.05,
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: Vec<f64>,
    pub labels: LabelSequence,
}

impl Utterance {
    pub fn frames(&self, frame_len: usize) -> usize {
        self.waveform.len() / frame_len
    }
}

fn check_range(name: &str, r: [usize; 2]) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::Config(format!("{name}: range [{}, {}] is empty", r[0], r[1])));
    }
    Ok(())
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must include blank plus one symbol".into()));
        }
        if self.frame_len == 0 || self.sample_rate == 0 {
            return Err(Error::Config("frame_len and sample_rate must be >= 1".into()));
        }
        if self.mode == DataMode::File {
            if self.manifest.is_none() {
                return Err(Error::Config("file mode needs data.manifest".into()));
            }
            return Ok(());
        }
        let top = symbol_frequency(self.vocab_size - 1, self.sample_rate);
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "vocab_size {} is too large for distinct synthetic tones at {} Hz",
                self.vocab_size, self.sample_rate
            )));
        }
        check_range("label_len", self.label_len)?;
        check_range("frames_per_symbol", self.frames_per_symbol)?;
        check_range("gap_frames", self.gap_frames)?;
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be >= 0".into()));
        }
        // A repeated symbol needs a blank frame between its two runs.
        if self.frames_per_symbol[0] == 0 || (self.label_len[1] > 1 && self.gap_frames[0] == 0) {
            return Err(Error::contract(
                "synthetic data settings are not CTC-feasible: need frames_per_symbol >= 1 and gap_frames >= 1",
            ));
        }
        Ok(())
    }

    pub fn load(&self) -> Result<Vec<Utterance>> {
        match self.mode {
            DataMode::Synthetic => synth_dataset(self),
            DataMode::File => read_manifest(self.manifest.as_deref().expect("validated"), self),
        }
    }
}

/// Peak tone level, leaving headroom for noise in 16-bit files.
pub const TONE_AMPLITUDE: f64 = 0.5;

/// Tone frequency in Hz for symbol `s` (1-based); spaced well apart so every
/// symbol is separable from one frame.
pub fn symbol_frequency(symbol: usize, sample_rate: usize) -> f64 {
    let step = sample_rate as f64 / 32.0;
    step * (symbol as f64 + 1.0)
}

/// Deterministic corpus where each label symbol is rendered as a run of
/// frames holding a sine tone of its own frequency. The tone restarts at
/// phase zero on every frame, so all frames of one symbol look alike up to
/// noise. Silence separates symbols and pads both ends.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<Vec<Utterance>> {
    spec.validate()?;
    if spec.mode != DataMode::Synthetic {
        return Err(Error::Config("synth_dataset needs data.mode = \"synthetic\"".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.frame_len;
    let frame_of = |symbol: usize| -> Vec<f64> {
        let f = symbol_frequency(symbol, spec.sample_rate);
        (0..n)
            .map(|i| TONE_AMPLITUDE * (2.0 * std::f64::consts::PI * f * i as f64 / spec.sample_rate as f64).sin())
            .collect()
    };
    let mut out = Vec::with_capacity(spec.num_samples);
    for idx in 0..spec.num_samples {
        let len = rng.random_range(spec.label_len[0]..=spec.label_len[1]);
        let symbols: Vec<usize> = (0..len).map(|_| rng.random_range(1..spec.vocab_size)).collect();
        let mut wave = Vec::new();
        let silence = |wave: &mut Vec<f64>, rng: &mut ChaCha8Rng| {
            let frames = rng.random_range(spec.gap_frames[0]..=spec.gap_frames[1]);
            wave.extend(std::iter::repeat_n(0.0, frames * n));
        };
        silence(&mut wave, &mut rng);
        for &s in &symbols {
            let frames = rng.random_range(spec.frames_per_symbol[0]..=spec.frames_per_symbol[1]);
            let tone = frame_of(s);
            for _ in 0..frames {
                wave.extend_from_slice(&tone);
            }
            silence(&mut wave, &mut rng);
        }
        for v in &mut wave {
            *v += noise.sample(&mut rng);
        }
        let labels = LabelSequence::new(symbols, spec.vocab_size)?;
        if !labels.is_feasible(wave.len() / n) {
            return Err(Error::contract(format!("utterance {idx} is not CTC-feasible")));
        }
        out.push(Utterance {
            id: format!("synth-{idx:04}"),
            waveform: wave,
            labels,
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestRow {
    path: String,
    labels: String,
}

fn parse_labels(text: &str, vocab_size: usize) -> Result<LabelSequence> {
    let symbols = text
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Format {
                what: "manifest",
                detail: format!("bad label {t:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabelSequence::new(symbols, vocab_size)
}

/// Reads a 16-bit mono WAV file at `sample_rate` into samples in [-1, 1).
pub fn read_wav(path: &Path, sample_rate: usize) -> Result<Vec<f64>> {
    let bad = |detail: String| Error::Format { what: "wav", detail };
    let reader = hound::WavReader::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(bad(format!("{}: expected 16-bit integer mono", path.display())));
    }
    if spec.sample_rate as usize != sample_rate {
        return Err(bad(format!(
            "{}: sample rate {} (expected {sample_rate})",
            path.display(),
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| bad(e.to_string())))
        .collect()
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: usize) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let bad = |e: hound::Error| Error::Format {
        what: "wav",
        detail: format!("{}: {e}", path.display()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(bad)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(bad)?;
    }
    writer.finalize().map_err(bad)
}

/// Loads utterances listed in a manifest; relative paths are resolved
/// against the manifest's directory.
pub fn read_manifest(manifest: &Path, spec: &DatasetSpec) -> Result<Vec<Utterance>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| Error::Format {
        what: "manifest",
        detail: format!("{}: {e}", manifest.display()),
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::Format {
            what: "manifest",
            detail: e.to_string(),
        })?;
        let path = base.join(&row.path);
        let waveform = read_wav(&path, spec.sample_rate)?;
        let labels = parse_labels(&row.labels, spec.vocab_size)?;
        let frames = waveform.len() / spec.frame_len;
        if !labels.is_feasible(frames) {
            return Err(Error::contract(format!(
                "{}: {frames} frames cannot hold {} labels",
                path.display(),
                labels.len()
            )));
        }
        out.push(Utterance {
            id: row.path,
            waveform,
            labels,
        });
    }
    Ok(out)
}

/// Writes `utterances` as WAV files plus `manifest.csv` under `dir`, in the
/// layout [`read_manifest`] accepts. Returns the manifest path.
pub fn write_corpus(dir: &Path, utterances: &[Utterance], sample_rate: usize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut writer = csv::Writer::from_path(&manifest).map_err(|e| Error::Format {
        what: "manifest",
        detail: e.to_string(),
    })?;
    for u in utterances {
        let name = format!("{}.wav", u.id);
        write_wav(&dir.join(&name), &u.waveform, sample_rate)?;
        let labels = u.labels.symbols().iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
        writer
            .serialize(ManifestRow { path: name, labels })
            .map_err(|e| Error::Format {
                what: "manifest",
                detail: e.to_string(),
            })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec {
            frame_len: 32,
            num_samples: 6,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_dataset(&spec()).unwrap();
        let b = synth_dataset(&spec()).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(&DatasetSpec { seed: 1, ..spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_utterance_is_feasible() {
        let s = DatasetSpec {
            num_samples: 50,
            label_len: [1, 6],
            frames_per_symbol: [1, 2],
            gap_frames: [1, 1],
            ..spec()
        };
        for u in synth_dataset(&s).unwrap() {
            assert!(u.labels.is_feasible(u.frames(s.frame_len)));
            assert!(u.labels.symbols().iter().all(|&x| x >= 1 && x < s.vocab_size));
        }
    }

    #[test]
    fn two_symbols_give_two_distinct_tones() {
        let s = DatasetSpec {
            num_samples: 40,
            vocab_size: 3,
            label_len: [2, 2],
            frames_per_symbol: [1, 1],
            gap_frames: [1, 1],
            noise: 0.0,
            ..spec()
        };
        let corpus = synth_dataset(&s).unwrap();
        let u = corpus.iter().find(|u| u.labels.symbols() == [1, 2]).unwrap();
        let n = s.frame_len;
        // silence, tone 1, silence, tone 2, silence
        assert_eq!(u.waveform.len(), 5 * n);
        assert!(u.waveform[..n].iter().all(|&v| v == 0.0));
        let (a, b) = (&u.waveform[n..2 * n], &u.waveform[3 * n..4 * n]);
        assert!(a.iter().zip(b).any(|(x, y)| (x - y).abs() > 0.1));
        assert!(u.waveform[2 * n..3 * n].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let s = DatasetSpec {
            gap_frames: [0, 0],
            ..spec()
        };
        assert!(matches!(synth_dataset(&s), Err(Error::Contract(_))));
        let s = DatasetSpec {
            label_len: [3, 1],
            ..spec()
        };
        assert!(synth_dataset(&s).is_err());
    }

    #[test]
    fn corpus_roundtrips_through_wav_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = DatasetSpec {
            sample_rate: 8000,
            ..spec()
        };
        let corpus = synth_dataset(&s).unwrap();
        let manifest = write_corpus(dir.path(), &corpus, s.sample_rate).unwrap();
        let file_spec = DatasetSpec {
            mode: DataMode::File,
            manifest: Some(manifest),
            ..s.clone()
        };
        let back = file_spec.load().unwrap();
        assert_eq!(back.len(), corpus.len());
        for (a, b) in corpus.iter().zip(&back) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.waveform.len(), b.waveform.len());
            let err = a.waveform.iter().zip(&b.waveform).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 1.0 / 32768.0 + 1e-12, "{err}");
        }
    }

    #[test]
    fn wav_with_wrong_rate_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &[0.0; 100], 8000).unwrap();
        assert!(read_wav(&path, 16000).is_err());
    }
}
