//! Dataset-level steps that combine several modules: separating a whole
//! manifest and exporting impulse responses.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::DEFAULT_DIRECT_WINDOW;
use crate::acoustics::{compute_drr, rt60_estimate};
use crate::dsp::{Stft, StftParams, Waveform};
use crate::error::{Error, Result};
use crate::eval::estimate_paths;
use crate::io::{create_dir, write_json, write_wav};
use crate::model::{load_checkpoint, predict_masks, Model};
use crate::rir::{generate_rir, RirParams};
use crate::sampler::RoomRecord;
use crate::scene::{load_example, thread_pool, ManifestRow};
use crate::separator::{oracle_mask, separate, OracleKind};

/// Parsed `--mask` value.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    Oracle(OracleKind),
    Model(PathBuf),
}

impl std::str::FromStr for MaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle-ratio" => Ok(MaskSpec::Oracle(OracleKind::MagnitudeRatio)),
            "oracle-binary" => Ok(MaskSpec::Oracle(OracleKind::Binary)),
            _ => match s.strip_prefix("model:") {
                Some(p) if !p.is_empty() => Ok(MaskSpec::Model(p.into())),
                _ => Err(Error::InvalidConfig(format!(
                    "mask must be oracle-ratio, oracle-binary or model:<checkpoint>, not {s:?}"
                ))),
            },
        }
    }
}

pub enum MaskSource {
    Oracle(OracleKind),
    Model(Box<Model>),
}

impl MaskSource {
    pub fn resolve(spec: &MaskSpec) -> Result<Self> {
        Ok(match spec {
            MaskSpec::Oracle(kind) => MaskSource::Oracle(*kind),
            MaskSpec::Model(path) => {
                MaskSource::Model(Box::new(load_checkpoint(path)?.into_model()?))
            }
        })
    }
}

/// Writes `<scene>_nearhat.wav` and `<scene>_farhat.wav` for every row.
/// Returns the paths in manifest order.
pub fn separate_dataset(
    rows: &[ManifestRow],
    manifest_dir: &Path,
    masks: &MaskSource,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<(PathBuf, PathBuf)>> {
    create_dir(out_dir)?;
    thread_pool(workers)?.install(|| {
        rows.par_iter()
            .map(|row| {
                let ex = load_example(manifest_dir, row)?;
                let stft = Stft::new(StftParams::for_sample_rate(ex.mixture.sample_rate));
                let (m_near, m_far) = match masks {
                    MaskSource::Oracle(kind) => oracle_mask(&stft, &ex.near, &ex.far, *kind)?,
                    MaskSource::Model(model) => predict_masks(model, &stft, &ex.mixture)?,
                };
                let out = separate(&stft, &ex.mixture, &m_near, &m_far)?;
                let (near_path, far_path) = estimate_paths(out_dir, &row.meta.scene_id);
                write_wav(&near_path, &out.near_hat)?;
                write_wav(&far_path, &out.far_hat)?;
                Ok((near_path, far_path))
            })
            .collect()
    })
}

/// JSON sidecar written next to each exported impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirSidecar {
    pub scene_id: String,
    pub source: usize,
    pub distance_m: f64,
    pub near: bool,
    pub direct_index: usize,
    pub drr_db: f64,
    /// None when the response decays too little to fit.
    pub t60_s: Option<f64>,
    pub dims: [f64; 3],
    pub sample_rate: u32,
}

/// Renders every source's impulse response for each record as
/// `<scene>_src<i>_rir.wav` plus a `.json` sidecar.
pub fn export_rirs(
    records: &[RoomRecord],
    params: &RirParams,
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<RirSidecar>> {
    create_dir(out_dir)?;
    let jobs: Vec<(&RoomRecord, usize)> = records
        .iter()
        .flat_map(|r| (0..r.sources.len()).map(move |i| (r, i)))
        .collect();
    thread_pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|(rec, i)| {
                let ir = generate_rir(&rec.room(), &rec.sources[*i], &rec.mic, params)?;
                let stem = format!("{}_src{i}_rir", rec.scene_id);
                write_wav(
                    &out_dir.join(format!("{stem}.wav")),
                    &Waveform::new(ir.samples.clone(), ir.sample_rate),
                )?;
                let side = RirSidecar {
                    scene_id: rec.scene_id.clone(),
                    source: *i,
                    distance_m: rec.distances[*i],
                    near: rec.near[*i],
                    direct_index: ir.direct_index,
                    drr_db: compute_drr(&ir, DEFAULT_DIRECT_WINDOW)?,
                    t60_s: rt60_estimate(&ir).ok(),
                    dims: rec.dims,
                    sample_rate: ir.sample_rate,
                };
                write_json(&out_dir.join(format!("{stem}.json")), &side)?;
                Ok(side)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_spec_parsing() {
        assert_eq!(
            "oracle-ratio".parse::<MaskSpec>().unwrap(),
            MaskSpec::Oracle(OracleKind::MagnitudeRatio)
        );
        assert_eq!(
            "oracle-binary".parse::<MaskSpec>().unwrap(),
            MaskSpec::Oracle(OracleKind::Binary)
        );
        assert_eq!(
            "model:run/m.ckpt".parse::<MaskSpec>().unwrap(),
            MaskSpec::Model("run/m.ckpt".into())
        );
        assert!("model:".parse::<MaskSpec>().is_err());
        assert!("ideal".parse::<MaskSpec>().is_err());
    }
}
