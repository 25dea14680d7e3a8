//! Mask-based separation: masks applied to the mixture STFT, consistency
//! projection, oracle masks and the compressed-magnitude loss.

use serde::{Deserialize, Serialize};

use crate::dsp::{apply_mask, Mask, Spectrogram, Stft, Waveform};
use crate::error::{Error, Result};

pub const COMPRESSION: f64 = 0.3;
pub const ORACLE_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SeparationResult {
    pub near_hat: Waveform,
    pub far_hat: Waveform,
    pub near_spec: Spectrogram,
    pub far_spec: Spectrogram,
}

/// `near_hat = istft(M_near ⊙ stft(y))`, likewise for far. The spectra
/// returned are the consistency-projected masked spectra, or the raw masked
/// spectra when `project` is false.
pub fn separate_with(
    stft: &Stft,
    y: &Waveform,
    m_near: &Mask,
    m_far: &Mask,
    project: bool,
) -> Result<SeparationResult> {
    let spec = stft.stft(y);
    let one = |m: &Mask| -> Result<(Waveform, Spectrogram)> {
        let masked = apply_mask(m, &spec)?;
        let wave = stft.istft(&masked);
        let out = if project { stft.stft(&wave) } else { masked };
        Ok((wave, out))
    };
    let (near_hat, near_spec) = one(m_near)?;
    let (far_hat, far_spec) = one(m_far)?;
    Ok(SeparationResult {
        near_hat,
        far_hat,
        near_spec,
        far_spec,
    })
}

pub fn separate(
    stft: &Stft,
    y: &Waveform,
    m_near: &Mask,
    m_far: &Mask,
) -> Result<SeparationResult> {
    separate_with(stft, y, m_near, m_far, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    MagnitudeRatio,
    Binary,
}

/// Masks computed from the true targets.
pub fn oracle_mask(
    stft: &Stft,
    x_near: &Waveform,
    x_far: &Waveform,
    kind: OracleKind,
) -> Result<(Mask, Mask)> {
    x_near.check_compatible(x_far)?;
    let near = stft.stft(x_near);
    let far = stft.stft(x_far);
    let values: Vec<f64> = near
        .bins
        .iter()
        .zip(&far.bins)
        .map(|(a, b)| {
            let (a, b) = (a.norm(), b.norm());
            match kind {
                OracleKind::MagnitudeRatio => a / (a + b + ORACLE_EPS),
                OracleKind::Binary => {
                    if a >= b && a > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();
    let m_near = Mask::new(values, near.n_frames, near.n_freq)?;
    let m_far = m_near.complement();
    Ok((m_near, m_far))
}

/// `Σ (|X|^0.3 − |X̂|^0.3)²`.
pub fn compressed_loss(x: &Spectrogram, x_hat: &Spectrogram) -> Result<f64> {
    x.check_same_shape(x_hat)?;
    Ok(x.bins
        .iter()
        .zip(&x_hat.bins)
        .map(|(a, b)| (a.norm().powf(COMPRESSION) - b.norm().powf(COMPRESSION)).powi(2))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_near: f64,
    pub w_far: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_near: 0.8,
            w_far: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_near >= 0.0 && self.w_far >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "negative loss weight in {self:?}"
            )))
        }
    }

    pub fn combine(&self, l_near: f64, l_far: f64) -> f64 {
        self.w_near * l_near + self.w_far * l_far
    }
}

/// `w_near·L(stft(x_near), X̂_near) + w_far·L(stft(x_far), X̂_far)`.
pub fn weighted_loss(
    stft: &Stft,
    x_near: &Waveform,
    x_far: &Waveform,
    result: &SeparationResult,
    weights: &LossWeights,
) -> Result<f64> {
    let l_near = compressed_loss(&stft.stft(x_near), &result.near_spec)?;
    let l_far = compressed_loss(&stft.stft(x_far), &result.far_spec)?;
    Ok(weights.combine(l_near, l_far))
}
