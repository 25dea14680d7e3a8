//! Per-example scoring with silent-target routing, and bucketed reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::io::read_wav;
use crate::metrics::{noise_reduction, si_sdr};
use crate::scene::{load_example, thread_pool, ManifestRow, SceneExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    SiSdriPair,
    NoiseReduction,
    SkippedSilentFar,
}

impl RecordKind {
    pub fn name(self) -> &'static str {
        match self {
            RecordKind::SiSdriPair => "si-sdri-pair",
            RecordKind::NoiseReduction => "noise-reduction",
            RecordKind::SkippedSilentFar => "skipped-silent-far",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    pub n_near: usize,
    pub n_far: usize,
    pub spp: f64,
    pub kind: RecordKind,
    pub near_input_db: Option<f64>,
    pub far_input_db: Option<f64>,
    pub near_sisdri: Option<f64>,
    pub far_sisdri: Option<f64>,
    pub noise_reduction: Option<f64>,
}

pub fn estimate_paths(dir: &Path, scene_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{scene_id}_nearhat.wav")),
        dir.join(format!("{scene_id}_farhat.wav")),
    )
}

/// Scores one example. A target is silent iff its energy is exactly zero.
pub fn evaluate_example(
    ex: &SceneExample,
    near_hat: &Waveform,
    far_hat: &Waveform,
) -> Result<EvalRecord> {
    let mut rec = EvalRecord {
        scene_id: ex.meta.scene_id.clone(),
        n_near: ex.meta.n_near,
        n_far: ex.meta.n_far,
        spp: ex.meta.spp,
        kind: RecordKind::SkippedSilentFar,
        near_input_db: None,
        far_input_db: None,
        near_sisdri: None,
        far_sisdri: None,
        noise_reduction: None,
    };
    let near_silent = ex.near.energy() == 0.0;
    let far_silent = ex.far.energy() == 0.0;
    if far_silent {
        return Ok(rec);
    }
    if near_silent {
        rec.kind = RecordKind::NoiseReduction;
        rec.noise_reduction = Some(noise_reduction(&ex.mixture, near_hat)?);
        return Ok(rec);
    }
    rec.kind = RecordKind::SiSdriPair;
    let near_in = si_sdr(&ex.near, &ex.mixture)?;
    let far_in = si_sdr(&ex.far, &ex.mixture)?;
    rec.near_input_db = Some(near_in);
    rec.far_input_db = Some(far_in);
    rec.near_sisdri = Some(si_sdr(&ex.near, near_hat)? - near_in);
    rec.far_sisdri = Some(si_sdr(&ex.far, far_hat)? - far_in);
    Ok(rec)
}

/// Scores every manifest row against `<scene>_{nearhat,farhat}.wav` in
/// `estimates`. Records come back in manifest order.
pub fn evaluate(
    rows: &[ManifestRow],
    manifest_dir: &Path,
    estimates: &Path,
    workers: usize,
) -> Result<Vec<EvalRecord>> {
    for row in rows {
        let (n, f) = estimate_paths(estimates, &row.meta.scene_id);
        for p in [n, f] {
            if !p.is_file() {
                return Err(Error::MissingEstimate(p));
            }
        }
    }
    thread_pool(workers)?.install(|| {
        rows.par_iter()
            .map(|row| {
                let ex = load_example(manifest_dir, row)?;
                let (n, f) = estimate_paths(estimates, &row.meta.scene_id);
                evaluate_example(&ex, &read_wav(&n)?, &read_wav(&f)?)
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    NNear,
    Spp,
    None,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n_near" => Ok(GroupBy::NNear),
            "spp" => Ok(GroupBy::Spp),
            "none" => Ok(GroupBy::None),
            _ => Err(Error::InvalidConfig(format!(
                "group-by must be n_near, spp or none, not {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub bucket: String,
    /// Examples scored with SI-SDRi (both targets non-silent).
    pub n_pairs: usize,
    pub near_sisdri: Option<f64>,
    pub far_sisdri: Option<f64>,
    pub n_noise_reduction: usize,
    pub noise_reduction: Option<f64>,
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub group_by: GroupBy,
    pub rows: Vec<ReportRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(bucket: String, records: &[&EvalRecord]) -> ReportRow {
    let of = |k: RecordKind| records.iter().filter(move |r| r.kind == k);
    ReportRow {
        bucket,
        n_pairs: of(RecordKind::SiSdriPair).count(),
        near_sisdri: mean(of(RecordKind::SiSdriPair).filter_map(|r| r.near_sisdri)),
        far_sisdri: mean(of(RecordKind::SiSdriPair).filter_map(|r| r.far_sisdri)),
        n_noise_reduction: of(RecordKind::NoiseReduction).count(),
        noise_reduction: mean(of(RecordKind::NoiseReduction).filter_map(|r| r.noise_reduction)),
        n_skipped: of(RecordKind::SkippedSilentFar).count(),
    }
}

/// Buckets and averages records. Grouping by `n_near` always lists buckets
/// 1 to 4 (empty ones with count 0) and appends an `all` row.
pub fn report(records: &[EvalRecord], group_by: GroupBy) -> Result<ReportTable> {
    if records.is_empty() {
        return Err(Error::InvalidConfig(
            "no evaluation records to report".into(),
        ));
    }
    let all: Vec<&EvalRecord> = records.iter().collect();
    let mut rows = Vec::new();
    match group_by {
        GroupBy::None => {}
        GroupBy::NNear => {
            let mut buckets: BTreeMap<usize, Vec<&EvalRecord>> =
                (1..=4).map(|k| (k, Vec::new())).collect();
            for r in &all {
                buckets.entry(r.n_near).or_default().push(r);
            }
            rows.extend(
                buckets
                    .into_iter()
                    .map(|(k, rs)| summarize(k.to_string(), &rs)),
            );
        }
        GroupBy::Spp => {
            let mut buckets: BTreeMap<u64, Vec<&EvalRecord>> = BTreeMap::new();
            for r in &all {
                buckets.entry(r.spp.to_bits()).or_default().push(r);
            }
            let mut keyed: Vec<(f64, Vec<&EvalRecord>)> = buckets
                .into_iter()
                .map(|(k, v)| (f64::from_bits(k), v))
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            rows.extend(
                keyed
                    .into_iter()
                    .map(|(k, rs)| summarize(format!("{k}"), &rs)),
            );
        }
    }
    rows.push(summarize("all".into(), &all));
    Ok(ReportTable { group_by, rows })
}

fn db(v: Option<f64>) -> String {
    match v {
        None => "n/a".into(),
        Some(x) => {
            let s = format!("{x:.2}");
            if s == "-0.00" {
                "0.00".into()
            } else {
                s
            }
        }
    }
}

pub const REPORT_HEADER: &str =
    "bucket,n_pairs,near_sisdri_db,far_sisdri_db,n_noise_reduction,noise_reduction_db,n_skipped";
pub const SCATTER_HEADER: &str = "scene_id,target,input_sisdr_db,sisdri_db";

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.bucket,
                r.n_pairs,
                db(r.near_sisdri),
                db(r.far_sisdri),
                r.n_noise_reduction,
                db(r.noise_reduction),
                r.n_skipped
            );
        }
        out
    }
}

/// Input SI-SDR against SI-SDRi, one line per target of every scored pair.
pub fn scatter_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for r in records.iter().filter(|r| r.kind == RecordKind::SiSdriPair) {
        for (target, input, gain) in [
            ("near", r.near_input_db, r.near_sisdri),
            ("far", r.far_input_db, r.far_sisdri),
        ] {
            let _ = writeln!(out, "{},{},{},{}", r.scene_id, target, db(input), db(gain));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneMeta;

    fn pair(scene: &str, n_near: usize, near: f64, far: f64) -> EvalRecord {
        EvalRecord {
            scene_id: scene.into(),
            n_near,
            n_far: 5 - n_near,
            spp: 1.0,
            kind: RecordKind::SiSdriPair,
            near_input_db: Some(-3.0),
            far_input_db: Some(2.0),
            near_sisdri: Some(near),
            far_sisdri: Some(far),
            noise_reduction: None,
        }
    }

    fn example(near: Vec<f64>, far: Vec<f64>) -> SceneExample {
        let n = Waveform::new(near, 16_000);
        let f = Waveform::new(far, 16_000);
        SceneExample {
            mixture: n.add(&f).unwrap(),
            stems: vec![n.clone(), f.clone()],
            near: n,
            far: f,
            meta: SceneMeta {
                scene_id: "s".into(),
                index: 0,
                seed: 0,
                threshold_m: 1.5,
                spp: 1.0,
                sources: vec![],
                n_near: 0,
                n_far: 0,
                norm_gain: 1.0,
            },
        }
    }

    #[test]
    fn routing() {
        let z = vec![0.0; 4];
        let a = vec![1.0, -1.0, 0.5, 0.0];
        let b = vec![0.2, 0.1, -0.3, 0.9];
        let ex = example(z.clone(), a.clone());
        let r = evaluate_example(&ex, &ex.near, &ex.far).unwrap();
        assert_eq!(r.kind, RecordKind::NoiseReduction);
        assert_eq!(r.noise_reduction, Some(100.0));
        let ex = example(a.clone(), z.clone());
        assert_eq!(
            evaluate_example(&ex, &ex.near, &ex.far).unwrap().kind,
            RecordKind::SkippedSilentFar
        );
        let ex = example(a, b);
        let r = evaluate_example(&ex, &ex.mixture, &ex.mixture).unwrap();
        assert_eq!(r.kind, RecordKind::SiSdriPair);
        assert_eq!(r.near_sisdri, Some(0.0));
        assert_eq!(r.far_sisdri, Some(0.0));
    }

    #[test]
    fn table_layout_fixture() {
        let t = report(&[pair("a", 1, 4.4, 6.8)], GroupBy::NNear).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines[1], "1,1,4.40,6.80,0,n/a,0");
        assert_eq!(lines[2], "2,0,n/a,n/a,0,n/a,0");
        assert_eq!(lines[5], "all,1,4.40,6.80,0,n/a,0");
    }

    #[test]
    fn identical_records_average_to_themselves() {
        let recs: Vec<_> = (0..7)
            .map(|i| pair(&format!("s{i}"), 2, -1.25, 3.5))
            .collect();
        let t = report(&recs, GroupBy::None).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].near_sisdri, Some(-1.25));
        assert_eq!(t.rows[0].far_sisdri, Some(3.5));
    }

    #[test]
    fn bucket_counts_sum_to_pairs() {
        let mut recs: Vec<_> = (0..20)
            .map(|i| pair("x", 1 + i % 4, i as f64, 0.0))
            .collect();
        let mut nr = pair("y", 0, 0.0, 0.0);
        nr.kind = RecordKind::NoiseReduction;
        nr.noise_reduction = Some(12.0);
        recs.push(nr);
        let t = report(&recs, GroupBy::NNear).unwrap();
        let buckets: usize = t
            .rows
            .iter()
            .filter(|r| r.bucket != "all")
            .map(|r| r.n_pairs)
            .sum();
        assert_eq!(buckets, 20);
        let all = t.rows.last().unwrap();
        assert_eq!(
            (all.n_pairs, all.n_noise_reduction, all.noise_reduction),
            (20, 1, Some(12.0))
        );
        assert!(report(&[], GroupBy::None).is_err());
    }

    #[test]
    fn spp_grouping_and_scatter() {
        let mut a = pair("a", 1, 1.0, 2.0);
        a.spp = 0.5;
        let b = pair("b", 2, 3.0, 4.0);
        let t = report(&[b.clone(), a.clone()], GroupBy::Spp).unwrap();
        let keys: Vec<_> = t.rows.iter().map(|r| r.bucket.as_str()).collect();
        assert_eq!(keys, ["0.5", "1", "all"]);
        let s = scatter_csv(&[a]);
        assert_eq!(s.lines().nth(1).unwrap(), "a,near,-3.00,1.00");
        assert_eq!(s.lines().count(), 3);
        assert_eq!(db(Some(-0.001)), "0.00");
    }

    #[test]
    fn group_by_parses() {
        assert_eq!("n_near".parse::<GroupBy>().unwrap(), GroupBy::NNear);
        assert!("bucket".parse::<GroupBy>().is_err());
    }
}
