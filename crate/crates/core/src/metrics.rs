//! SI-SDR, SI-SDR improvement, noise reduction and oracle stem grouping.

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Finite stand-in for ±∞ dB.
pub const DB_CAP: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_len(x: &Waveform, y: &Waveform) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(
            format!("{} samples", x.len()),
            format!("{} samples", y.len()),
        ));
    }
    Ok(())
}

/// Scale-invariant SDR in dB, capped to `[-100, 100]`.
pub fn si_sdr(x: &Waveform, x_hat: &Waveform) -> Result<f64> {
    check_len(x, x_hat)?;
    let xx = dot(&x.samples, &x.samples);
    if xx == 0.0 {
        return Err(Error::SilentReference);
    }
    let alpha = dot(&x.samples, &x_hat.samples) / xx;
    let target = alpha * alpha * xx;
    let residual: f64 = x
        .samples
        .iter()
        .zip(&x_hat.samples)
        .map(|(a, b)| (alpha * a - b).powi(2))
        .sum();
    if target == 0.0 {
        return Ok(-DB_CAP);
    }
    if residual < 1e-10 * target {
        return Ok(DB_CAP);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-DB_CAP, DB_CAP))
}

/// `si_sdr(x, x̂) − si_sdr(x, y)`, caps applied first.
pub fn si_sdri(x: &Waveform, x_hat: &Waveform, y: &Waveform) -> Result<f64> {
    Ok(si_sdr(x, x_hat)? - si_sdr(x, y)?)
}

/// Power of the mixture over power of the near estimate, in dB.
pub fn noise_reduction(y: &Waveform, near_hat: &Waveform) -> Result<f64> {
    check_len(y, near_hat)?;
    let yy = y.energy();
    if yy == 0.0 {
        return Err(Error::SilentMixture);
    }
    let nn = near_hat.energy().max(1e-10 * yy);
    Ok(10.0 * (yy / nn).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// `near[i]` is true when stem `i` is assigned to the near estimate.
    pub near: Vec<bool>,
    pub near_db: f64,
    pub far_db: f64,
    pub candidates: usize,
}

/// Exhaustive search over the `2^k` near/far assignments of `stems`,
/// maximizing the mean of near and far SI-SDR. An empty side estimates
/// silence (−100 dB against a non-silent reference).
pub fn best_grouping(stems: &[Waveform], x_near: &Waveform, x_far: &Waveform) -> Result<Grouping> {
    check_len(x_near, x_far)?;
    for s in stems {
        check_len(x_near, s)?;
    }
    if x_near.energy() == 0.0 || x_far.energy() == 0.0 {
        return Err(Error::SilentReference);
    }
    assert!(
        stems.len() < 20,
        "exhaustive grouping over {} stems",
        stems.len()
    );
    let k = stems.len();
    let len = x_near.len();
    let fs = x_near.sample_rate;
    let mut best: Option<Grouping> = None;
    let mut candidates = 0;
    for code in 0u32..(1 << k) {
        candidates += 1;
        let mut near = vec![0.0; len];
        let mut far = vec![0.0; len];
        for (i, stem) in stems.iter().enumerate() {
            let dst = if code >> i & 1 == 1 {
                &mut near
            } else {
                &mut far
            };
            for (d, s) in dst.iter_mut().zip(&stem.samples) {
                *d += s;
            }
        }
        let near_db = si_sdr(x_near, &Waveform::new(near, fs))?;
        let far_db = si_sdr(x_far, &Waveform::new(far, fs))?;
        let better = best
            .as_ref()
            .map_or(true, |b| near_db + far_db > b.near_db + b.far_db);
        if better {
            best = Some(Grouping {
                near: (0..k).map(|i| code >> i & 1 == 1).collect(),
                near_db,
                far_db,
                candidates: 0,
            });
        }
    }
    let mut best = best.expect("at least one candidate");
    best.candidates = candidates;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000)
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        w((0..len).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn hand_case() {
        let v = si_sdr(&w(vec![1.0, 0.0]), &w(vec![1.0, 1.0])).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn caps() {
        let x = noise(100, 1);
        assert_eq!(si_sdr(&x, &x.scaled(-3.0)).unwrap(), DB_CAP);
        let orth = w(vec![0.0, 1.0]);
        assert_eq!(si_sdr(&w(vec![1.0, 0.0]), &orth).unwrap(), -DB_CAP);
        assert!(matches!(
            si_sdr(&w(vec![0.0; 3]), &w(vec![1.0; 3])),
            Err(Error::SilentReference)
        ));
        assert!(si_sdr(&w(vec![1.0]), &w(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn improvement_cases() {
        let x = noise(500, 2);
        let y = x.add(&noise(500, 3)).unwrap();
        assert_eq!(si_sdri(&x, &y, &y).unwrap(), 0.0);
        let input = si_sdr(&x, &y).unwrap();
        assert!((si_sdri(&x, &x, &y).unwrap() - (DB_CAP - input)).abs() < 1e-12);
    }

    #[test]
    fn noise_reduction_cases() {
        let y = noise(300, 4);
        assert!(noise_reduction(&y, &y).unwrap().abs() < 1e-12);
        assert!((noise_reduction(&y, &y.scaled(0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(noise_reduction(&y, &w(vec![0.0; 300])).unwrap(), DB_CAP);
        assert!(matches!(
            noise_reduction(&w(vec![0.0; 3]), &w(vec![0.0; 3])),
            Err(Error::SilentMixture)
        ));
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in 0u64..1000, c in 0.01f64..100.0) {
            let x = noise(64, seed);
            let x_hat = x.add(&noise(64, seed + 7).scaled(0.5)).unwrap();
            let base = si_sdr(&x, &x_hat).unwrap();
            prop_assert!((si_sdr(&x, &x_hat.scaled(c)).unwrap() - base).abs() < 1e-9);
            prop_assert!((si_sdr(&x.scaled(c), &x_hat).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn noise_reduction_of_scaled_copy(seed in 0u64..1000, g in 0.001f64..10.0) {
            let y = noise(64, seed);
            let v = noise_reduction(&y, &y.scaled(g)).unwrap();
            prop_assert!((v + 20.0 * g.log10()).abs() < 1e-9);
        }
    }

    #[test]
    fn grouping_recovers_exact_stems() {
        let stems: Vec<Waveform> = (0..5).map(|i| noise(400, 10 + i)).collect();
        let labels = [true, false, false, true, false];
        let sum = |want: bool| {
            let mut acc = w(vec![0.0; 400]);
            for (s, l) in stems.iter().zip(labels) {
                if l == want {
                    acc.add_assign(s).unwrap();
                }
            }
            acc
        };
        let g = best_grouping(&stems, &sum(true), &sum(false)).unwrap();
        assert_eq!(g.near, labels);
        assert_eq!(g.candidates, 32);
        assert_eq!((g.near_db, g.far_db), (DB_CAP, DB_CAP));
    }

    #[test]
    fn single_stem_goes_near() {
        let s = noise(200, 20);
        let far = noise(200, 21);
        let g = best_grouping(&[s.clone()], &s, &far).unwrap();
        assert_eq!(g.near, vec![true]);
        assert_eq!(g.candidates, 2);
    }

    #[test]
    fn grouping_needs_both_references() {
        let s = noise(10, 22);
        assert!(best_grouping(&[s.clone()], &s, &w(vec![0.0; 10])).is_err());
    }
}
