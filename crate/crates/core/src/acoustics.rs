//! Diagnostics on impulse responses: DRR, Schroeder T60, band-limited peak.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rir::ImpulseResponse;

pub const DEFAULT_DIRECT_WINDOW: f64 = 0.0025;
pub const DRR_CAP_DB: f64 = 100.0;

/// Direct-to-reverberant ratio in dB, with the direct part taken as
/// `direct_index ± direct_window` seconds.
pub fn compute_drr(ir: &ImpulseResponse, direct_window: f64) -> Result<f64> {
    if ir.is_empty() {
        return Err(Error::SilentImpulse);
    }
    let w = (direct_window * ir.sample_rate as f64).round() as usize;
    let lo = ir.direct_index.saturating_sub(w);
    let hi = (ir.direct_index + w + 1).min(ir.len());
    let direct: f64 = ir.samples[lo..hi].iter().map(|x| x * x).sum();
    let total = ir.energy();
    if total == 0.0 {
        return Err(Error::SilentImpulse);
    }
    let tail = (total - direct).max(0.0);
    if tail < 1e-20 * direct {
        return Ok(DRR_CAP_DB);
    }
    Ok((10.0 * (direct / tail).log10()).clamp(-DRR_CAP_DB, DRR_CAP_DB))
}

/// Schroeder backward-integrated energy decay curve in dB, normalized to
/// 0 dB at the first sample.
pub fn energy_decay_curve(samples: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = samples
        .iter()
        .rev()
        .map(|x| {
            acc += x * x;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|e| {
            if *e > 0.0 {
                10.0 * (e / total).log10()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Reverberation time from a line fit of the −5…−25 dB part of the
/// Schroeder curve, extrapolated to −60 dB.
///
/// The decay range is measured on the reverberant part only (after the
/// direct window, up to 90% of the response), so a pulse with no tail is
/// rejected even though its own curve drops steeply.
pub fn rt60_estimate(ir: &ImpulseResponse) -> Result<f64> {
    let total = ir.energy();
    if total == 0.0 {
        return Err(Error::SilentImpulse);
    }
    let fs = ir.sample_rate as f64;
    let n = ir.len();
    let start = (ir.direct_index + (DEFAULT_DIRECT_WINDOW * fs).round() as usize).min(n - 1);
    let stop = (n * 9 / 10).max(start + 1).min(n - 1);
    let tail_at = |i: usize| ir.samples[i..].iter().map(|x| x * x).sum::<f64>();
    let (e_start, e_stop) = (tail_at(start), tail_at(stop));
    let range_db = if e_start <= 1e-10 * total {
        0.0
    } else if e_stop <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (e_start / e_stop).log10()
    };
    if range_db < 20.0 {
        return Err(Error::InsufficientDecay { range_db });
    }

    let edc = energy_decay_curve(&ir.samples);
    let (mut sx, mut sy, mut sxx, mut sxy, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, db) in edc.iter().enumerate() {
        if *db <= -5.0 && *db >= -25.0 {
            let t = i as f64 / fs;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
            count += 1.0;
        }
    }
    if count < 2.0 {
        return Err(Error::InsufficientDecay { range_db });
    }
    let slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
    if !(slope < 0.0) {
        return Err(Error::InsufficientDecay { range_db });
    }
    Ok(-60.0 / slope)
}

/// Peak of the band-limited (sinc-interpolated) signal around the largest
/// sample, searched on a 1/64-sample grid. Returns `(amplitude, position)`
/// with position in fractional samples.
pub fn interpolated_peak(samples: &[f64]) -> (f64, f64) {
    let Some((k, _)) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
    else {
        return (0.0, 0.0);
    };
    let support = 256usize;
    let lo = k.saturating_sub(support);
    let hi = (k + support + 1).min(samples.len());
    let mut best = (0.0, k as f64);
    for step in -64..=64 {
        let t = k as f64 + step as f64 / 64.0;
        let v: f64 = (lo..hi)
            .map(|j| {
                let u = t - j as f64;
                let s = if u.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * u).sin() / (PI * u)
                };
                samples[j] * s
            })
            .sum();
        if v.abs() > best.0 {
            best = (v.abs(), t);
        }
    }
    best
}
