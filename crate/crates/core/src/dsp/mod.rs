//! Signal kernels: STFT analysis/synthesis, consistency projection, power
//! compression, masking and fast convolution.

mod conv;
mod stft;

pub use conv::{direct_convolve, fft_convolve, fft_convolve_slices};
pub use stft::{apply_mask, compress, Spectrogram, Stft, StftParams};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// A mono signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self::new(
            self.samples.iter().map(|x| x * gain).collect(),
            self.sample_rate,
        )
    }

    /// Samplewise sum. Lengths must agree.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        self.check_compatible(other)?;
        Ok(Self::new(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            self.sample_rate,
        ))
    }

    pub fn add_assign(&mut self, other: &Waveform) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch {
                left: self.sample_rate,
                right: other.sample_rate,
            });
        }
        if self.len() != other.len() {
            return Err(Error::shape(
                format!("{} samples", self.len()),
                format!("{} samples", other.len()),
            ));
        }
        Ok(())
    }
}

/// Real-valued time-frequency mask, stored row-major as `(frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Vec<f64>,
    pub n_frames: usize,
    pub n_freq: usize,
}

impl Mask {
    /// Builds a mask, rejecting any entry outside `[0, 1]`.
    pub fn new(values: Vec<f64>, n_frames: usize, n_freq: usize) -> Result<Self> {
        if values.len() != n_frames * n_freq {
            return Err(Error::shape(n_frames * n_freq, values.len()));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfig(format!(
                "mask value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            values,
            n_frames,
            n_freq,
        })
    }

    pub fn filled(value: f64, n_frames: usize, n_freq: usize) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            values: vec![value; n_frames * n_freq],
            n_frames,
            n_freq,
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            n_frames: self.n_frames,
            n_freq: self.n_freq,
        }
    }
}
