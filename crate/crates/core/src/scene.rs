//! Ten-second reverberant scenes: mixture, near/far targets and per-source
//! stems, rendered from room records and a clean-speech corpus.

use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::UtteranceSource;
use crate::dsp::{fft_convolve, Waveform};
use crate::error::{Error, Result};
use crate::io::{create_dir, read_wav, write_jsonl, write_wav};
use crate::rir::{generate_rir, RirParams};
use crate::rng::{stream_rng, Rng, Stream};
use crate::sampler::{apply_spp, label_near_far, RoomRecord, RoomSpec, ScenePlacement};

pub const CLIP_SECONDS: f64 = 10.0;
pub const PEAK_LEVEL: f64 = 0.9;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

// Stored samples are rounded to multiples of this step. Any value below 4 in
// magnitude on this grid is exact in f32, and sums of grid values are exact
// in f64, so the mixture identity survives both arithmetic and WAV storage.
const SAMPLE_GRID: f64 = 1.0 / (1u64 << 22) as f64;

/// Fits an utterance into a clip of `clip_len` samples: short utterances are
/// zero-padded at a uniform random offset, long ones cropped to a uniform
/// random interior window.
pub fn place_utterance(rng: &mut Rng, utt: &Waveform, clip_len: usize) -> Waveform {
    let n = utt.len();
    if n == 0 {
        return Waveform::zeros(clip_len, utt.sample_rate);
    }
    if n < clip_len {
        let offset = rng.gen_range(0..=clip_len - n);
        let mut out = vec![0.0; clip_len];
        out[offset..offset + n].copy_from_slice(&utt.samples);
        Waveform::new(out, utt.sample_rate)
    } else {
        let start = rng.gen_range(0..=n - clip_len);
        Waveform::new(
            utt.samples[start..start + clip_len].to_vec(),
            utt.sample_rate,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub distance_m: f64,
    pub near: bool,
    pub present: bool,
    pub speaker_id: Option<String>,
    pub utterance_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub scene_id: String,
    pub index: u64,
    pub seed: u64,
    pub threshold_m: f64,
    pub spp: f64,
    pub sources: Vec<SourceMeta>,
    pub n_near: usize,
    pub n_far: usize,
    pub norm_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneExample {
    pub mixture: Waveform,
    pub near: Waveform,
    pub far: Waveform,
    pub stems: Vec<Waveform>,
    pub meta: SceneMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    pub rir: RirParams,
    pub clip_seconds: f64,
    pub peak_level: f64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            rir: RirParams::default(),
            clip_seconds: CLIP_SECONDS,
            peak_level: PEAK_LEVEL,
        }
    }
}

impl BuildParams {
    pub fn clip_len(&self) -> usize {
        (self.clip_seconds * self.rir.sample_rate as f64).round() as usize
    }
}

fn quantize(x: f64) -> f64 {
    (x / SAMPLE_GRID).round() * SAMPLE_GRID
}

fn sum_of(stems: &[Waveform], pick: impl Fn(usize) -> bool, len: usize, fs: u32) -> Waveform {
    let mut out = vec![0.0; len];
    for (i, stem) in stems.iter().enumerate() {
        if pick(i) {
            for (o, s) in out.iter_mut().zip(&stem.samples) {
                *o += s;
            }
        }
    }
    Waveform::new(out, fs)
}

/// Renders one scene. Present sources get distinct speakers; near/far flags
/// are recomputed from `threshold`. The returned `meta` has an empty scene
/// id, index and seed for the caller to fill in.
pub fn build_example(
    rng: &mut Rng,
    corpus: &impl UtteranceSource,
    room: &RoomSpec,
    placement: &ScenePlacement,
    threshold: f64,
    params: &BuildParams,
) -> Result<SceneExample> {
    let placement = label_near_far(placement.clone(), threshold);
    let fs = params.rir.sample_rate;
    let clip_len = params.clip_len();
    let present: Vec<usize> = (0..placement.n_sources())
        .filter(|i| placement.present[*i])
        .collect();
    let speakers = corpus.by_speaker();
    if speakers.len() < present.len() {
        return Err(Error::CorpusExhausted {
            needed: present.len(),
            available: speakers.len(),
        });
    }
    let speaker_list: Vec<(&str, &Vec<usize>)> = speakers.iter().map(|(k, v)| (*k, v)).collect();
    let chosen = sample_indices(rng, speaker_list.len(), present.len()).into_vec();

    let mut raw = vec![Waveform::zeros(clip_len, fs); placement.n_sources()];
    let mut sources: Vec<SourceMeta> = (0..placement.n_sources())
        .map(|i| SourceMeta {
            distance_m: placement.distances[i],
            near: placement.near[i],
            present: placement.present[i],
            speaker_id: None,
            utterance_id: None,
        })
        .collect();
    for (&src, &spk) in present.iter().zip(&chosen) {
        let (speaker, utts) = speaker_list[spk];
        let entry = utts[rng.gen_range(0..utts.len())];
        let utt = corpus.load(entry)?;
        let dry = place_utterance(rng, &utt, clip_len);
        let ir = generate_rir(room, &placement.sources[src], &placement.mic, &params.rir)?;
        let mut wet = fft_convolve(&dry, &ir)?;
        wet.samples.truncate(clip_len);
        raw[src] = wet;
        sources[src].speaker_id = Some(speaker.to_string());
        sources[src].utterance_id = Some(corpus.entries()[entry].utterance_id.clone());
    }

    let peak = sum_of(&raw, |_| true, clip_len, fs).peak();
    let gain = if peak > 0.0 {
        params.peak_level / peak
    } else {
        1.0
    };
    let stems: Vec<Waveform> = raw
        .iter()
        .map(|w| Waveform::new(w.samples.iter().map(|x| quantize(x * gain)).collect(), fs))
        .collect();
    let near = sum_of(
        &stems,
        |i| placement.present[i] && placement.near[i],
        clip_len,
        fs,
    );
    let far = sum_of(
        &stems,
        |i| placement.present[i] && !placement.near[i],
        clip_len,
        fs,
    );
    let mixture = near.add(&far)?;
    let n_near = present.iter().filter(|i| placement.near[**i]).count();
    Ok(SceneExample {
        mixture,
        near,
        far,
        stems,
        meta: SceneMeta {
            scene_id: String::new(),
            index: 0,
            seed: 0,
            threshold_m: threshold,
            spp: 1.0,
            sources,
            n_near,
            n_far: present.len() - n_near,
            norm_gain: gain,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub threshold: f64,
    pub spp: f64,
    pub seed: u64,
    #[serde(default)]
    pub build: BuildParams,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.spp) {
            return Err(Error::InvalidConfig(format!(
                "spp {} outside [0, 1]",
                self.spp
            )));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} must be > 0",
                self.threshold
            )));
        }
        self.build.rir.validate()
    }
}

/// Renders the scene for one room record. Presence and utterance choices
/// come from streams keyed by the record's index, so the result does not
/// depend on which worker renders it.
pub fn render_scene(
    record: &RoomRecord,
    corpus: &impl UtteranceSource,
    config: &DatasetConfig,
) -> Result<SceneExample> {
    let placement = apply_spp(
        &mut stream_rng(config.seed, Stream::Presence, record.index),
        record.placement(),
        config.spp,
    );
    let mut rng = stream_rng(config.seed, Stream::Utterance, record.index);
    let mut ex = build_example(
        &mut rng,
        corpus,
        &record.room(),
        &placement,
        config.threshold,
        &config.build,
    )?;
    ex.meta.scene_id = record.scene_id.clone();
    ex.meta.index = record.index;
    ex.meta.seed = config.seed;
    ex.meta.spp = config.spp;
    Ok(ex)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePaths {
    pub mix: String,
    pub near: String,
    pub far: String,
    pub stems: Vec<String>,
}

impl ScenePaths {
    pub fn for_scene(scene_id: &str, n_stems: usize) -> Self {
        Self {
            mix: format!("{scene_id}_mix.wav"),
            near: format!("{scene_id}_near.wav"),
            far: format!("{scene_id}_far.wav"),
            stems: (0..n_stems)
                .map(|i| format!("{scene_id}_stem{i}.wav"))
                .collect(),
        }
    }
}

/// One line of a dataset manifest. Paths are relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    #[serde(flatten)]
    pub meta: SceneMeta,
    pub paths: ScenePaths,
}

pub fn write_example(dir: &Path, ex: &SceneExample) -> Result<ManifestRow> {
    let paths = ScenePaths::for_scene(&ex.meta.scene_id, ex.stems.len());
    write_wav(&dir.join(&paths.mix), &ex.mixture)?;
    write_wav(&dir.join(&paths.near), &ex.near)?;
    write_wav(&dir.join(&paths.far), &ex.far)?;
    for (stem, p) in ex.stems.iter().zip(&paths.stems) {
        write_wav(&dir.join(p), stem)?;
    }
    Ok(ManifestRow {
        meta: ex.meta.clone(),
        paths,
    })
}

/// Reads a manifest row's audio back.
pub fn load_example(dir: &Path, row: &ManifestRow) -> Result<SceneExample> {
    Ok(SceneExample {
        mixture: read_wav(&dir.join(&row.paths.mix))?,
        near: read_wav(&dir.join(&row.paths.near))?,
        far: read_wav(&dir.join(&row.paths.far))?,
        stems: row
            .paths
            .stems
            .iter()
            .map(|p| read_wav(&dir.join(p)))
            .collect::<Result<_>>()?,
        meta: row.meta.clone(),
    })
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Renders the first `config.count` records into `out_dir` and writes the
/// manifest there. Output is identical for any worker count.
pub fn generate_dataset(
    records: &[RoomRecord],
    corpus: &impl UtteranceSource,
    config: &DatasetConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<ManifestRow>> {
    config.validate()?;
    if records.len() < config.count {
        return Err(Error::InvalidConfig(format!(
            "asked for {} scenes but only {} room records given",
            config.count,
            records.len()
        )));
    }
    create_dir(out_dir)?;
    let rows = thread_pool(workers)?.install(|| {
        records[..config.count]
            .par_iter()
            .map(|rec| write_example(out_dir, &render_scene(rec, corpus, config)?))
            .collect::<Result<Vec<_>>>()
    })?;
    write_jsonl(&out_dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}
