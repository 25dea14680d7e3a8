//! Clean-speech corpora: an on-disk index of mono WAV files, an in-memory
//! variant, and a synthetic speech-like generator for tests and demos.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::io::{create_dir, read_jsonl, read_wav, write_jsonl, write_wav};
use crate::rng::{stream_rng, Rng, Stream};

pub const INDEX_FILE: &str = "index.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Validation, Partition::Test];

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Validation => "validation",
            Partition::Test => "test",
        }
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Partition::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown partition {s:?}")))
    }
}

/// One utterance. `path` is relative to the corpus root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub utterance_id: String,
    pub path: PathBuf,
    pub duration_s: f64,
    pub speaker_id: String,
    pub partition: Partition,
}

/// Anything that can hand out utterances by entry position.
pub trait UtteranceSource: Sync {
    fn entries(&self) -> &[CorpusEntry];
    fn load(&self, index: usize) -> Result<Waveform>;

    /// Entry positions grouped by speaker, speakers in sorted order.
    fn by_speaker(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries().iter().enumerate() {
            map.entry(e.speaker_id.as_str()).or_default().push(i);
        }
        map
    }
}

fn validate_entries(entries: &[CorpusEntry]) -> Result<()> {
    if let Some(e) = entries.iter().find(|e| !(e.duration_s > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "utterance {} has duration {}",
            e.utterance_id, e.duration_s
        )));
    }
    check_partitions(entries)
}

/// Fails if any speaker appears in more than one partition.
pub fn check_partitions(entries: &[CorpusEntry]) -> Result<()> {
    let mut seen: HashMap<&str, Partition> = HashMap::new();
    for e in entries {
        match seen.insert(&e.speaker_id, e.partition) {
            Some(p) if p != e.partition => {
                return Err(Error::InvalidConfig(format!(
                    "speaker {} appears in both {} and {}",
                    e.speaker_id,
                    p.name(),
                    e.partition.name()
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Corpus stored as WAV files under `root`, listed in `root/index.jsonl`.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusIndex {
    pub fn load(root: &Path) -> Result<Self> {
        let entries = read_jsonl(&root.join(INDEX_FILE))?;
        validate_entries(&entries)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn save(&self) -> Result<()> {
        write_jsonl(&self.root.join(INDEX_FILE), &self.entries)
    }

    pub fn partition(&self, partition: Partition) -> Self {
        Self {
            root: self.root.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.partition == partition)
                .cloned()
                .collect(),
        }
    }
}

impl UtteranceSource for CorpusIndex {
    fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    fn load(&self, index: usize) -> Result<Waveform> {
        let path = self.root.join(&self.entries[index].path);
        let wave = read_wav(&path)?;
        if wave.sample_rate != DEFAULT_SAMPLE_RATE {
            return Err(Error::SampleRateMismatch {
                left: wave.sample_rate,
                right: DEFAULT_SAMPLE_RATE,
            });
        }
        Ok(wave)
    }
}

/// Corpus held in memory, entry `i` paired with `audio[i]`.
#[derive(Debug, Clone)]
pub struct MemoryCorpus {
    pub entries: Vec<CorpusEntry>,
    pub audio: Vec<Waveform>,
}

impl MemoryCorpus {
    pub fn partition(&self, partition: Partition) -> Self {
        let (entries, audio) = self
            .entries
            .iter()
            .zip(&self.audio)
            .filter(|(e, _)| e.partition == partition)
            .map(|(e, a)| (e.clone(), a.clone()))
            .unzip();
        Self { entries, audio }
    }

    /// Writes every utterance plus the index under `root`.
    pub fn write(&self, root: &Path) -> Result<CorpusIndex> {
        for (e, a) in self.entries.iter().zip(&self.audio) {
            let path = root.join(&e.path);
            if let Some(dir) = path.parent() {
                create_dir(dir)?;
            }
            write_wav(&path, a)?;
        }
        let index = CorpusIndex {
            root: root.to_path_buf(),
            entries: self.entries.clone(),
        };
        index.save()?;
        Ok(index)
    }
}

impl UtteranceSource for MemoryCorpus {
    fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    fn load(&self, index: usize) -> Result<Waveform> {
        Ok(self.audio[index].clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusConfig {
    /// Speakers in the train, validation and test partitions.
    pub speakers: [usize; 3],
    pub utterances_per_speaker: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            speakers: [24, 8, 8],
            utterances_per_speaker: 4,
            min_duration: 2.0,
            max_duration: 15.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }
}

/// Pitch and vocal-tract resonances that stay fixed for one speaker.
#[derive(Debug, Clone, Copy)]
struct Voice {
    f0: f64,
    formants: [f64; 3],
}

impl Voice {
    fn sample(rng: &mut Rng) -> Self {
        Self {
            f0: rng.gen_range(85.0..255.0),
            formants: [
                rng.gen_range(350.0..800.0),
                rng.gen_range(1000.0..2200.0),
                rng.gen_range(2400.0..3300.0),
            ],
        }
    }
}

// Raised-cosine fade applied to both ends of a segment.
fn fade(i: usize, len: usize, ramp: usize) -> f64 {
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
    }
}

fn voiced(rng: &mut Rng, voice: &Voice, len: usize, fs: f64, out: &mut Vec<f64>) {
    let f0 = voice.f0 * rng.gen_range(0.85..1.2);
    let glide = rng.gen_range(-0.15..0.15);
    let shift = rng.gen_range(0.85..1.15);
    let formants = voice.formants.map(|f| f * shift);
    let n_harm = ((0.45 * fs) / f0).floor().max(1.0) as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let res: f64 = formants
                .iter()
                .zip([1.0, 0.6, 0.3])
                .map(|(fc, g)| g * (-0.5 * ((f - fc) / (0.12 * fc)).powi(2)).exp())
                .sum();
            (res + 0.02) / (h as f64).sqrt()
        })
        .collect();
    let ramp = (0.01 * fs) as usize;
    let mut phase = 0.0_f64;
    for i in 0..len {
        let progress = i as f64 / len as f64;
        phase += 2.0 * PI * f0 * (1.0 + glide * progress) / fs;
        // sin(h·φ) by the Chebyshev recurrence.
        let (s1, c1) = phase.sin_cos();
        let (mut prev, mut cur) = (0.0, s1);
        let mut acc = 0.0;
        for a in &amps {
            acc += a * cur;
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
        }
        out.push(acc * fade(i, len, ramp));
    }
}

fn fricative(rng: &mut Rng, len: usize, fs: f64, out: &mut Vec<f64>) {
    let ramp = (0.005 * fs) as usize;
    let mut last = 0.0;
    for i in 0..len {
        let v: f64 = rng.gen_range(-1.0..1.0);
        out.push(0.25 * (v - last) * fade(i, len, ramp));
        last = v;
    }
}

/// A speech-like signal: voiced harmonic segments shaped by the speaker's
/// formants, interleaved with noise bursts and pauses. Normalized to an RMS
/// of 0.05.
fn synth_utterance(rng: &mut Rng, voice: &Voice, duration: f64, fs: u32) -> Vec<f64> {
    let fs_f = fs as f64;
    let n = (duration * fs_f).round() as usize;
    let mut out = Vec::with_capacity(n + fs as usize);
    while out.len() < n {
        let pick: f64 = rng.gen();
        if pick < 0.6 {
            let len = (rng.gen_range(0.08..0.35) * fs_f) as usize;
            voiced(rng, voice, len, fs_f, &mut out);
        } else if pick < 0.8 {
            let len = (rng.gen_range(0.04..0.15) * fs_f) as usize;
            fricative(rng, len, fs_f, &mut out);
        } else {
            let len = (rng.gen_range(0.05..0.3) * fs_f) as usize;
            out.resize(out.len() + len, 0.0);
        }
    }
    out.truncate(n);
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|x| *x *= 0.05 / rms);
    }
    out
}

/// Generates a speaker-disjoint synthetic corpus.
pub fn synthesize_corpus(config: &SyntheticCorpusConfig) -> Result<MemoryCorpus> {
    if !(config.min_duration > 0.0 && config.min_duration <= config.max_duration) {
        return Err(Error::InvalidConfig(format!(
            "duration range [{}, {}] invalid",
            config.min_duration, config.max_duration
        )));
    }
    let mut entries = Vec::new();
    let mut audio = Vec::new();
    let mut speaker_no = 0u64;
    for (partition, n_speakers) in Partition::ALL.into_iter().zip(config.speakers) {
        for s in 0..n_speakers {
            let mut rng = stream_rng(config.seed, Stream::Corpus, speaker_no);
            speaker_no += 1;
            let voice = Voice::sample(&mut rng);
            let speaker_id = format!("{}-spk{s:03}", partition.name());
            for u in 0..config.utterances_per_speaker {
                let duration = if config.min_duration < config.max_duration {
                    rng.gen_range(config.min_duration..config.max_duration)
                } else {
                    config.min_duration
                };
                let samples = synth_utterance(&mut rng, &voice, duration, config.sample_rate);
                let utterance_id = format!("{speaker_id}-u{u:03}");
                entries.push(CorpusEntry {
                    path: PathBuf::from(partition.name())
                        .join(&speaker_id)
                        .join(format!("{utterance_id}.wav")),
                    utterance_id,
                    duration_s: samples.len() as f64 / config.sample_rate as f64,
                    speaker_id: speaker_id.clone(),
                    partition,
                });
                audio.push(Waveform::new(samples, config.sample_rate));
            }
        }
    }
    Ok(MemoryCorpus { entries, audio })
}

/// Distinct speakers per partition.
pub fn speaker_counts(entries: &[CorpusEntry]) -> BTreeMap<Partition, usize> {
    let mut sets: BTreeMap<Partition, BTreeSet<&str>> = BTreeMap::new();
    for e in entries {
        sets.entry(e.partition).or_default().insert(&e.speaker_id);
    }
    sets.into_iter().map(|(p, s)| (p, s.len())).collect()
}
