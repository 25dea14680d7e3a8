use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use super::Waveform;
use crate::error::{Error, Result};
use crate::rir::ImpulseResponse;

/// Full linear convolution of a signal with an impulse response.
pub fn fft_convolve(x: &Waveform, h: &ImpulseResponse) -> Result<Waveform> {
    if x.sample_rate != h.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: x.sample_rate,
            right: h.sample_rate,
        });
    }
    Ok(Waveform::new(
        fft_convolve_slices(&x.samples, &h.samples),
        x.sample_rate,
    ))
}

/// Overlap-add block convolution; output length is `x.len() + h.len() - 1`.
pub fn fft_convolve_slices(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    // Short inputs are cheaper done directly.
    if x.len().min(h.len()) <= 32 {
        return direct_convolve(x, h);
    }

    let fft_len = (2 * h.len()).next_power_of_two().max(1024);
    let block = fft_len - h.len() + 1;
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(fft_len);
    let c2r = planner.plan_fft_inverse(fft_len);

    let mut time = r2c.make_input_vec();
    time[..h.len()].copy_from_slice(h);
    let mut kernel = r2c.make_output_vec();
    let mut scratch = r2c.make_scratch_vec();
    r2c.process_with_scratch(&mut time, &mut kernel, &mut scratch)
        .expect("fft sizes fixed by plan");

    let mut spectrum = r2c.make_output_vec();
    let mut inv_scratch = c2r.make_scratch_vec();
    let mut out = vec![0.0; out_len];
    let scale = 1.0 / fft_len as f64;
    for start in (0..x.len()).step_by(block) {
        let end = (start + block).min(x.len());
        time.iter_mut().for_each(|v| *v = 0.0);
        time[..end - start].copy_from_slice(&x[start..end]);
        r2c.process_with_scratch(&mut time, &mut spectrum, &mut scratch)
            .expect("fft sizes fixed by plan");
        for (s, k) in spectrum.iter_mut().zip(&kernel) {
            *s *= k;
        }
        let last = spectrum.len() - 1;
        spectrum[0] = Complex64::new(spectrum[0].re, 0.0);
        spectrum[last] = Complex64::new(spectrum[last].re, 0.0);
        c2r.process_with_scratch(&mut spectrum, &mut time, &mut inv_scratch)
            .expect("fft sizes fixed by plan");
        let valid = (end - start + h.len() - 1).min(out_len - start);
        for (o, v) in out[start..start + valid].iter_mut().zip(&time) {
            *o += v * scale;
        }
    }
    out
}

/// O(n·m) reference convolution.
pub fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, xv) in x.iter().enumerate() {
        for (j, hv) in h.iter().enumerate() {
            out[i + j] += xv * hv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len());
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn unit_impulse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(5000, &mut rng);
        let mut h = vec![0.0; 100];
        h[0] = 1.0;
        let y = fft_convolve_slices(&x, &h);
        assert_eq!(y.len(), 5099);
        assert!(rel_err(&y[..5000], &x) < 1e-12);
        assert!(y[5000..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn delayed_scaled_impulse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(3000, &mut rng);
        let (k, g) = (37, -0.25);
        let mut h = vec![0.0; 64];
        h[k] = g;
        let y = fft_convolve_slices(&x, &h);
        for (i, v) in x.iter().enumerate() {
            assert!((y[i + k] - g * v).abs() < 1e-12);
        }
        assert!(y[..k].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(1000, &mut rng);
        let h = random(300, &mut rng);
        assert!(rel_err(&fft_convolve_slices(&x, &h), &direct_convolve(&x, &h)) < 1e-9);
    }

    #[test]
    fn commutative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random(700, &mut rng);
        let b = random(2100, &mut rng);
        assert!(rel_err(&fft_convolve_slices(&a, &b), &fft_convolve_slices(&b, &a)) < 1e-12);
    }

    #[test]
    fn sample_rate_mismatch() {
        let x = Waveform::zeros(10, 16_000);
        let h = ImpulseResponse {
            samples: vec![1.0],
            sample_rate: 8000,
            direct_index: 0,
            source_distance: 1.0,
        };
        assert!(matches!(
            fft_convolve(&x, &h),
            Err(Error::SampleRateMismatch { .. })
        ));
    }
}
