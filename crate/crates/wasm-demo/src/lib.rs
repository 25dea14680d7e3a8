//! Browser bindings for three small demos. Each export returns a JSON
//! string that `www/index.html` plots; the plain functions underneath are
//! ordinary Rust so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use proxsep_core::acoustics::{compute_drr, rt60_estimate, DEFAULT_DIRECT_WINDOW};
use proxsep_core::corpus::{synthesize_corpus, SyntheticCorpusConfig};
use proxsep_core::dsp::{Stft, StftParams, Waveform};
use proxsep_core::metrics::si_sdr;
use proxsep_core::rir::{generate_rir, RirParams};
use proxsep_core::sampler::{
    label_near_far, sabine_reflection, sample_scene, shoebox_decay_ratio, silent_fractions,
    RoomSpec, SamplerConfig, Vec3,
};
use proxsep_core::scene::{build_example, BuildParams};
use proxsep_core::separator::{oracle_mask, separate, OracleKind};

#[derive(Debug, Serialize)]
pub struct RirReport {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
    pub direct_index: usize,
    pub distance_m: f64,
    pub drr_db: f64,
    pub t60_target_s: f64,
    pub t60_estimate_s: Option<f64>,
}

/// Impulse response of a uniform-walled room tuned to `t60`.
pub fn rir_report(dims: Vec3, t60: f64, source: Vec3, mic: Vec3) -> Result<RirReport, String> {
    if !(t60 > 0.0) {
        return Err(format!("t60 must be positive, got {t60}"));
    }
    let room = RoomSpec::uniform(
        dims,
        sabine_reflection(dims, t60 / shoebox_decay_ratio(t60)),
    );
    room.validate().map_err(|e| e.to_string())?;
    for (name, p) in [("source", &source), ("microphone", &mic)] {
        if !room.contains(p, 0.0) {
            return Err(format!("{name} {p:?} lies outside the room"));
        }
    }
    let params = RirParams {
        rir_length: (1.5 * t60).max(0.3),
        ..RirParams::default()
    };
    let ir = generate_rir(&room, &source, &mic, &params).map_err(|e| e.to_string())?;
    Ok(RirReport {
        sample_rate: ir.sample_rate,
        samples: ir.samples.iter().map(|x| *x as f32).collect(),
        direct_index: ir.direct_index,
        distance_m: ir.source_distance,
        drr_db: compute_drr(&ir, DEFAULT_DIRECT_WINDOW).map_err(|e| e.to_string())?,
        t60_target_s: t60,
        t60_estimate_s: rt60_estimate(&ir).ok(),
    })
}

pub const HIST_BIN_M: f64 = 0.25;
pub const HIST_BINS: usize = 32;

#[derive(Debug, Serialize)]
pub struct DistanceReport {
    pub scenes: usize,
    pub threshold_m: f64,
    pub bin_width_m: f64,
    /// Source counts per distance bin; the last bin collects the overflow.
    pub histogram: Vec<usize>,
    pub mean_distance_m: f64,
    pub silent_near: f64,
    pub silent_far: f64,
}

/// Distance histogram and silent-target fractions over `scenes` default
/// placements (five sources each, all present).
pub fn distance_report(seed: u64, scenes: usize, threshold: f64) -> Result<DistanceReport, String> {
    if scenes == 0 || !(threshold > 0.0) {
        return Err("need at least one scene and a positive threshold".into());
    }
    let config = SamplerConfig {
        seed,
        ..SamplerConfig::default()
    };
    let placements = (0..scenes as u64)
        .map(|i| sample_scene(&config, i).map(|(_, p)| p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut histogram = vec![0; HIST_BINS];
    let mut sum = 0.0;
    let mut n = 0usize;
    for d in placements.iter().flat_map(|p| &p.distances) {
        histogram[((d / HIST_BIN_M) as usize).min(HIST_BINS - 1)] += 1;
        sum += d;
        n += 1;
    }
    let (silent_near, silent_far) = silent_fractions(&placements, threshold);
    Ok(DistanceReport {
        scenes,
        threshold_m: threshold,
        bin_width_m: HIST_BIN_M,
        histogram,
        mean_distance_m: sum / n as f64,
        silent_near,
        silent_far,
    })
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub distances_m: Vec<f64>,
    pub near: Vec<bool>,
    pub n_near: usize,
    pub n_far: usize,
    /// Frame RMS envelopes (20 ms) for plotting.
    pub frame_ms: f64,
    pub mixture_env: Vec<f32>,
    pub near_env: Vec<f32>,
    pub near_hat_env: Vec<f32>,
    pub far_hat_env: Vec<f32>,
    pub near_input_db: Option<f64>,
    pub near_output_db: Option<f64>,
    pub far_input_db: Option<f64>,
    pub far_output_db: Option<f64>,
}

const DEMO_FRAME: usize = 320;

fn envelope(w: &Waveform) -> Vec<f32> {
    w.samples
        .chunks(DEMO_FRAME)
        .map(|c| (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt() as f32)
        .collect()
}

fn scored(x: &Waveform, est: &Waveform) -> Option<f64> {
    si_sdr(x, est).ok()
}

/// Renders one short three-source scene from a small synthetic corpus and
/// separates it with an oracle mask.
pub fn oracle_report(seed: u64, threshold: f64, binary: bool) -> Result<OracleReport, String> {
    let corpus = synthesize_corpus(&SyntheticCorpusConfig {
        speakers: [6, 0, 0],
        utterances_per_speaker: 1,
        min_duration: 2.0,
        max_duration: 4.0,
        seed,
        ..SyntheticCorpusConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let sampler = SamplerConfig {
        n_sources: 3,
        seed,
        ..SamplerConfig::default()
    };
    let (room, placement) = sample_scene(&sampler, 0).map_err(|e| e.to_string())?;
    let placement = label_near_far(placement, threshold);
    let params = BuildParams {
        clip_seconds: 4.0,
        rir: RirParams {
            rir_length: 0.6,
            ..RirParams::default()
        },
        ..BuildParams::default()
    };
    let mut rng = proxsep_core::rng::stream_rng(seed, proxsep_core::rng::Stream::Utterance, 0);
    let ex = build_example(&mut rng, &corpus, &room, &placement, threshold, &params)
        .map_err(|e| e.to_string())?;
    let stft = Stft::new(StftParams::default());
    let kind = if binary {
        OracleKind::Binary
    } else {
        OracleKind::MagnitudeRatio
    };
    let (m_near, m_far) = oracle_mask(&stft, &ex.near, &ex.far, kind).map_err(|e| e.to_string())?;
    let out = separate(&stft, &ex.mixture, &m_near, &m_far).map_err(|e| e.to_string())?;
    Ok(OracleReport {
        distances_m: placement.distances.clone(),
        near: placement.near.clone(),
        n_near: ex.meta.n_near,
        n_far: ex.meta.n_far,
        frame_ms: 1000.0 * DEMO_FRAME as f64 / ex.mixture.sample_rate as f64,
        mixture_env: envelope(&ex.mixture),
        near_env: envelope(&ex.near),
        near_hat_env: envelope(&out.near_hat),
        far_hat_env: envelope(&out.far_hat),
        near_input_db: scored(&ex.near, &ex.mixture),
        near_output_db: scored(&ex.near, &out.near_hat),
        far_input_db: scored(&ex.far, &ex.mixture),
        far_output_db: scored(&ex.far, &out.far_hat),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen]
pub fn simulate_rir(
    lx: f64,
    ly: f64,
    lz: f64,
    t60: f64,
    sx: f64,
    sy: f64,
    sz: f64,
    mx: f64,
    my: f64,
    mz: f64,
) -> Result<String, JsValue> {
    to_js(rir_report([lx, ly, lz], t60, [sx, sy, sz], [mx, my, mz]))
}

#[wasm_bindgen]
pub fn distance_stats(seed: u32, scenes: u32, threshold: f64) -> Result<String, JsValue> {
    to_js(distance_report(seed as u64, scenes as usize, threshold))
}

#[wasm_bindgen]
pub fn oracle_separation(seed: u32, threshold: f64, binary: bool) -> Result<String, JsValue> {
    to_js(oracle_report(seed as u64, threshold, binary))
}
