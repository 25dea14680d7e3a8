use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use super::{Mask, Waveform};
use crate::error::{Error, Result};

/// Analysis parameters. The hop is always half the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl StftParams {
    /// 32 ms square-root Hann window, 16 ms hop.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let window_len = ((sample_rate as usize * 32 / 1000) / 2) * 2;
        Self::with_window(window_len, sample_rate)
    }

    pub fn with_window(window_len: usize, sample_rate: u32) -> Self {
        assert!(
            window_len >= 2 && window_len % 2 == 0,
            "window length must be even"
        );
        Self {
            window_len,
            hop: window_len / 2,
            sample_rate,
        }
    }

    pub fn n_freq(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else {
            len.div_ceil(self.hop) + 1
        }
    }
}

impl Default for StftParams {
    fn default() -> Self {
        Self::for_sample_rate(super::DEFAULT_SAMPLE_RATE)
    }
}

/// One-sided complex spectrogram, row-major `(frame, bin)`.
///
/// `signal_len` is the length of the time signal it describes, so that
/// synthesis returns exactly that many samples.
#[derive(Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: Vec<Complex64>,
    pub n_frames: usize,
    pub n_freq: usize,
    pub hop: usize,
    pub window_len: usize,
    pub sample_rate: u32,
    pub signal_len: usize,
}

impl fmt::Debug for Spectrogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectrogram")
            .field("n_frames", &self.n_frames)
            .field("n_freq", &self.n_freq)
            .field("hop", &self.hop)
            .field("window_len", &self.window_len)
            .field("sample_rate", &self.sample_rate)
            .field("signal_len", &self.signal_len)
            .finish()
    }
}

#[derive(Serialize)]
struct DumpHeader<'a> {
    format: &'a str,
    n_frames: usize,
    n_freq: usize,
    hop: usize,
    window_len: usize,
    sample_rate: u32,
    signal_len: usize,
}

impl Spectrogram {
    pub fn zeros_like(&self) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); self.bins.len()],
            ..self.clone()
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_frames, self.n_freq)
    }

    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.bins[frame * self.n_freq + bin]
    }

    pub fn frame(&self, frame: usize) -> &[Complex64] {
        &self.bins[frame * self.n_freq..(frame + 1) * self.n_freq]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|c| c.norm()).collect()
    }

    pub fn check_same_shape(&self, other: &Spectrogram) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    /// Time-domain energy implied by the one-sided spectra (Parseval, with
    /// the square-root Hann windows summing to one in power).
    pub fn implied_energy(&self) -> f64 {
        let n = self.window_len as f64;
        let last = self.n_freq - 1;
        let mut total = 0.0;
        for t in 0..self.n_frames {
            for (f, c) in self.frame(t).iter().enumerate() {
                let w = if f == 0 || f == last { 1.0 } else { 2.0 };
                total += w * c.norm_sqr();
            }
        }
        total / n
    }

    /// Debug dump: one JSON header line, then interleaved little-endian
    /// `f32` real/imaginary pairs in row-major order.
    pub fn write_debug(&self, path: &Path) -> Result<()> {
        let header = DumpHeader {
            format: "complex-f32-le",
            n_frames: self.n_frames,
            n_freq: self.n_freq,
            hop: self.hop,
            window_len: self.window_len,
            sample_rate: self.sample_rate,
            signal_len: self.signal_len,
        };
        let mut out = Vec::with_capacity(self.bins.len() * 8 + 256);
        serde_json::to_writer(&mut out, &header).map_err(|source| Error::Json {
            context: "spectrogram header".into(),
            source,
        })?;
        out.push(b'\n');
        for c in &self.bins {
            out.extend_from_slice(&(c.re as f32).to_le_bytes());
            out.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// STFT engine with cached FFT plans and window.
#[derive(Clone)]
pub struct Stft {
    params: StftParams,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("params", &self.params)
            .finish()
    }
}

impl Stft {
    pub fn new(params: StftParams) -> Self {
        let n = params.window_len;
        // Periodic Hann: its square-root pair overlap-adds to one at hop n/2.
        let window = (0..n)
            .map(|i| {
                let hann = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                hann.sqrt()
            })
            .collect();
        let mut planner = RealFftPlanner::<f64>::new();
        Self {
            params,
            window,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn params(&self) -> StftParams {
        self.params
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn n_freq(&self) -> usize {
        self.params.n_freq()
    }

    pub fn stft(&self, x: &Waveform) -> Spectrogram {
        let mut spec = self.analyze(&x.samples);
        spec.sample_rate = x.sample_rate;
        spec
    }

    /// Forward transform of raw samples (sample rate taken from params).
    pub fn analyze(&self, x: &[f64]) -> Spectrogram {
        let StftParams {
            window_len: n, hop, ..
        } = self.params;
        let n_freq = self.n_freq();
        let n_frames = self.params.n_frames(x.len());
        let mut bins = vec![Complex64::new(0.0, 0.0); n_frames * n_freq];
        let mut frame = self.forward.make_input_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for t in 0..n_frames {
            // Frame t covers padded positions [t*hop, t*hop + n); the signal
            // starts one hop into the padded buffer.
            for (i, slot) in frame.iter_mut().enumerate() {
                let p = (t * hop + i) as isize - hop as isize;
                *slot = if p >= 0 && (p as usize) < x.len() {
                    x[p as usize] * self.window[i]
                } else {
                    0.0
                };
            }
            let out = &mut bins[t * n_freq..(t + 1) * n_freq];
            self.forward
                .process_with_scratch(&mut frame, out, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
        }
        Spectrogram {
            bins,
            n_frames,
            n_freq,
            hop,
            window_len: n,
            sample_rate: self.params.sample_rate,
            signal_len: x.len(),
        }
    }

    pub fn istft(&self, spec: &Spectrogram) -> Waveform {
        Waveform::new(self.synthesize(spec), spec.sample_rate)
    }

    /// Weighted overlap-add synthesis; returns `spec.signal_len` samples.
    pub fn synthesize(&self, spec: &Spectrogram) -> Vec<f64> {
        self.check_params(spec);
        let StftParams {
            window_len: n, hop, ..
        } = self.params;
        let n_freq = self.n_freq();
        let len = spec.signal_len;
        let mut out = vec![0.0; len];
        let mut buf = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let scale = 1.0 / n as f64;
        for t in 0..spec.n_frames {
            buf.copy_from_slice(spec.frame(t));
            buf[0].im = 0.0;
            buf[n_freq - 1].im = 0.0;
            self.inverse
                .process_with_scratch(&mut buf, &mut frame, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            for (i, v) in frame.iter().enumerate() {
                let p = (t * hop + i) as isize - hop as isize;
                if p >= 0 && (p as usize) < len {
                    out[p as usize] += v * self.window[i] * scale;
                }
            }
        }
        out
    }

    /// Projects onto the set of consistent spectrograms: `stft(istft(s))`.
    pub fn consistency_project(&self, spec: &Spectrogram) -> Spectrogram {
        let mut out = self.analyze(&self.synthesize(spec));
        out.sample_rate = spec.sample_rate;
        out
    }

    /// Adjoint of [`Stft::analyze`] under the real inner product
    /// `<A, B> = sum(Re A Re B + Im A Im B)`: maps a bin-domain gradient to a
    /// time-domain gradient of length `signal_len`.
    pub fn analyze_adjoint(
        &self,
        grad: &[Complex64],
        n_frames: usize,
        signal_len: usize,
    ) -> Vec<f64> {
        let StftParams { hop, .. } = self.params;
        let n_freq = self.n_freq();
        assert_eq!(grad.len(), n_frames * n_freq);
        let mut out = vec![0.0; signal_len];
        let mut buf = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        for t in 0..n_frames {
            let g = &grad[t * n_freq..(t + 1) * n_freq];
            for (f, slot) in buf.iter_mut().enumerate() {
                *slot = if f == 0 || f == n_freq - 1 {
                    Complex64::new(g[f].re, 0.0)
                } else {
                    g[f] * 0.5
                };
            }
            self.inverse
                .process_with_scratch(&mut buf, &mut frame, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            for (i, v) in frame.iter().enumerate() {
                let p = (t * hop + i) as isize - hop as isize;
                if p >= 0 && (p as usize) < signal_len {
                    out[p as usize] += v * self.window[i];
                }
            }
        }
        out
    }

    /// Adjoint of [`Stft::synthesize`]: maps a time-domain gradient to a
    /// bin-domain gradient with `n_frames` frames.
    pub fn synthesize_adjoint(&self, grad: &[f64], n_frames: usize) -> Vec<Complex64> {
        let StftParams {
            window_len: n, hop, ..
        } = self.params;
        let n_freq = self.n_freq();
        let mut out = vec![Complex64::new(0.0, 0.0); n_frames * n_freq];
        let mut frame = self.forward.make_input_vec();
        let mut scratch = self.forward.make_scratch_vec();
        let scale = 1.0 / n as f64;
        for t in 0..n_frames {
            for (i, slot) in frame.iter_mut().enumerate() {
                let p = (t * hop + i) as isize - hop as isize;
                *slot = if p >= 0 && (p as usize) < grad.len() {
                    grad[p as usize] * self.window[i] * scale
                } else {
                    0.0
                };
            }
            let dst = &mut out[t * n_freq..(t + 1) * n_freq];
            self.forward
                .process_with_scratch(&mut frame, dst, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            for (f, c) in dst.iter_mut().enumerate() {
                if f == 0 || f == n_freq - 1 {
                    *c = Complex64::new(c.re, 0.0);
                } else {
                    *c *= 2.0;
                }
            }
        }
        out
    }

    fn check_params(&self, spec: &Spectrogram) {
        assert_eq!(
            (spec.window_len, spec.hop, spec.n_freq),
            (self.params.window_len, self.params.hop, self.n_freq()),
            "spectrogram was produced with different STFT parameters"
        );
    }
}

/// Elementwise `|bin|^exponent`.
pub fn compress(spec: &Spectrogram, exponent: f64) -> Vec<f64> {
    spec.bins.iter().map(|c| c.norm().powf(exponent)).collect()
}

/// Scales every bin by the matching real mask entry.
pub fn apply_mask(mask: &Mask, spec: &Spectrogram) -> Result<Spectrogram> {
    if (mask.n_frames, mask.n_freq) != spec.shape() {
        return Err(Error::shape(
            format!("{:?}", spec.shape()),
            format!("{:?}", (mask.n_frames, mask.n_freq)),
        ));
    }
    let bins = spec
        .bins
        .iter()
        .zip(&mask.values)
        .map(|(c, m)| c * *m)
        .collect();
    Ok(Spectrogram {
        bins,
        ..spec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_spec(stft: &Stft, len: usize, seed: u64) -> Spectrogram {
        let mut spec = stft.analyze(&vec![0.0; len]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in spec.bins.iter_mut() {
            *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        spec
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn spec_diff(a: &Spectrogram, b: &Spectrogram) -> f64 {
        let num: f64 = a
            .bins
            .iter()
            .zip(&b.bins)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum();
        let den: f64 = b.bins.iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(1e-300)).sqrt()
    }

    #[test]
    fn default_params_are_512_256() {
        let p = StftParams::default();
        assert_eq!((p.window_len, p.hop, p.n_freq()), (512, 256, 257));
    }

    #[test]
    fn zero_input_frame_count() {
        let stft = Stft::new(StftParams::default());
        let spec = stft.analyze(&vec![0.0; 16_000]);
        let expected = ((16_000.0_f64 + 512.0) / 256.0).ceil() as usize - 1;
        assert_eq!(spec.n_frames, expected);
        assert!(spec.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn empty_input_has_no_frames() {
        let stft = Stft::new(StftParams::default());
        let spec = stft.analyze(&[]);
        assert_eq!(spec.n_frames, 0);
        assert!(stft.synthesize(&spec).is_empty());
    }

    #[test]
    fn impulse_at_frame_center_is_flat() {
        let stft = Stft::new(StftParams::default());
        let mut x = vec![0.0; 4096];
        // Frame 4 starts at padded 1024, i.e. signal index 768; its centre
        // is 256 samples later.
        x[768 + 256] = 1.0;
        let spec = stft.analyze(&x);
        let centre = stft.window()[256];
        for f in 0..spec.n_freq {
            assert!((spec.at(4, f).norm() - centre).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_lands_in_expected_bin() {
        let stft = Stft::new(StftParams::default());
        let x: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let spec = stft.analyze(&x);
        let t = spec.n_frames / 2;
        let mags: Vec<f64> = spec.frame(t).iter().map(|c| c.norm()).collect();
        let argmax = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 32);
    }

    #[test]
    fn perfect_reconstruction_every_sample() {
        let stft = Stft::new(StftParams::default());
        for (len, seed) in [(16_000, 1), (1234, 2), (1, 3), (257, 4)] {
            let x = random_signal(len, seed);
            let y = stft.synthesize(&stft.analyze(&x));
            assert_eq!(y.len(), len);
            assert!(rel_err(&y, &x) < 1e-12, "len {len}");
        }
    }

    #[test]
    fn zero_spectrogram_gives_zero_waveform() {
        let stft = Stft::new(StftParams::default());
        let spec = stft.analyze(&vec![0.0; 3000]);
        assert!(stft.synthesize(&spec).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_is_linear() {
        let stft = Stft::new(StftParams::default());
        let a = random_signal(5000, 5);
        let b = random_signal(5000, 6);
        let mut sum = stft.analyze(&a);
        let sb = stft.analyze(&b);
        for (x, y) in sum.bins.iter_mut().zip(&sb.bins) {
            *x += y;
        }
        let y = stft.synthesize(&sum);
        let expected: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert!(rel_err(&y, &expected) < 1e-10);
    }

    #[test]
    fn parseval() {
        let stft = Stft::new(StftParams::default());
        let x = random_signal(20_000, 9);
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spec = stft.analyze(&x);
        assert!((spec.implied_energy() - energy).abs() / energy < 1e-6);
    }

    #[test]
    fn projection_of_consistent_is_identity() {
        let stft = Stft::new(StftParams::default());
        let s = stft.analyze(&random_signal(8000, 10));
        assert!(spec_diff(&stft.consistency_project(&s), &s) < 1e-8);
    }

    #[test]
    fn projection_is_idempotent_and_preserves_signal() {
        let stft = Stft::new(StftParams::default());
        let s = random_spec(&stft, 6000, 11);
        let p = stft.consistency_project(&s);
        assert!(
            spec_diff(&p, &s) > 0.1,
            "random spectrogram should be inconsistent"
        );
        let pp = stft.consistency_project(&p);
        assert!(spec_diff(&pp, &p) < 1e-8);
        assert!(rel_err(&stft.synthesize(&p), &stft.synthesize(&s)) < 1e-8);
    }

    fn real_dot(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.re * y.re + x.im * y.im)
            .sum()
    }

    #[test]
    fn adjoints_satisfy_dot_product_identity() {
        let stft = Stft::new(StftParams::with_window(16, 16_000));
        let len = 203;
        let x = random_signal(len, 12);
        let g = random_spec(&stft, len, 13);
        // <S x, g> == <x, S^T g>
        let sx = stft.analyze(&x);
        let lhs = real_dot(&sx.bins, &g.bins);
        let st_g = stft.analyze_adjoint(&g.bins, g.n_frames, len);
        let rhs: f64 = x.iter().zip(&st_g).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

        // <I s, y> == <s, I^T y>
        let mut s = random_spec(&stft, len, 14);
        for t in 0..s.n_frames {
            s.bins[t * s.n_freq].im = 0.0;
            s.bins[t * s.n_freq + s.n_freq - 1].im = 0.0;
        }
        let y = random_signal(len, 15);
        let is = stft.synthesize(&s);
        let lhs: f64 = is.iter().zip(&y).map(|(a, b)| a * b).sum();
        let it_y = stft.synthesize_adjoint(&y, s.n_frames);
        let rhs = real_dot(&s.bins, &it_y);
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn compress_values() {
        let stft = Stft::new(StftParams::with_window(4, 16_000));
        let mut s = stft.analyze(&[0.0; 4]);
        s.bins[0] = Complex64::new(0.0, 0.0);
        s.bins[1] = Complex64::new(1.0, 0.0);
        s.bins[2] = Complex64::new(0.0, 8.0);
        let c = compress(&s, 0.3);
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 1.0).abs() < 1e-15);
        assert!((c[2] - 1.866_065_983).abs() < 1e-8);
    }

    #[test]
    fn mask_shape_mismatch() {
        let stft = Stft::new(StftParams::default());
        let s = stft.analyze(&vec![0.0; 1000]);
        let m = Mask::filled(1.0, s.n_frames + 1, s.n_freq);
        assert!(matches!(
            apply_mask(&m, &s),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mask_scaling() {
        let stft = Stft::new(StftParams::default());
        let x = random_signal(4000, 16);
        let s = stft.analyze(&x);
        let ones = apply_mask(&Mask::filled(1.0, s.n_frames, s.n_freq), &s).unwrap();
        assert_eq!(ones, s);
        let zeros = apply_mask(&Mask::filled(0.0, s.n_frames, s.n_freq), &s).unwrap();
        assert!(zeros.bins.iter().all(|c| c.norm() == 0.0));
        let half = apply_mask(&Mask::filled(0.5, s.n_frames, s.n_freq), &s).unwrap();
        let y = stft.synthesize(&half);
        let expected: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        assert!(rel_err(&y, &expected) < 1e-8);
    }
}
