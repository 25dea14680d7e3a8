//! Image-method room impulse responses with frequency-dependent walls.
//!
//! Each octave band gets its own pass over the mirror images (same delays,
//! band-specific reflection gains). The band responses are then recombined
//! through a zero-phase filterbank whose band weights sum to one at every
//! frequency, so a room with equal coefficients in every band comes out
//! identical to a single broadband pass.

use std::f64::consts::PI;

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{RoomSpec, Vec3, BAND_CENTERS_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RirParams {
    pub sample_rate: u32,
    pub speed_of_sound: f64,
    /// Seconds.
    pub rir_length: f64,
    pub frac_delay_taps: usize,
    pub n_bands: usize,
    /// Images whose loudest band amplitude falls below this fraction of a
    /// 1 m direct path are skipped. Zero keeps every image.
    pub cull_level: f64,
}

impl Default for RirParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            speed_of_sound: 343.0,
            rir_length: 0.5,
            frac_delay_taps: 81,
            n_bands: BAND_CENTERS_HZ.len(),
            cull_level: 1e-5,
        }
    }
}

impl RirParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.rir_length > 0.0) {
            return bad(format!("rir_length {} must be > 0", self.rir_length));
        }
        if self.frac_delay_taps % 2 == 0 {
            return bad(format!(
                "frac_delay_taps {} must be odd",
                self.frac_delay_taps
            ));
        }
        if self.n_bands == 0 || self.n_bands > BAND_CENTERS_HZ.len() {
            return bad(format!("n_bands {} must be in 1..=6", self.n_bands));
        }
        let top_edge = BAND_CENTERS_HZ[self.n_bands - 1] * 2f64.sqrt();
        if self.sample_rate as f64 <= 2.0 * top_edge {
            return bad(format!(
                "sample_rate {} must exceed {:.0} Hz",
                self.sample_rate,
                2.0 * top_edge
            ));
        }
        if !(self.speed_of_sound > 0.0) || !(self.cull_level >= 0.0) {
            return bad("speed_of_sound must be > 0 and cull_level >= 0".into());
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.rir_length * self.sample_rate as f64).round() as usize
    }

    pub fn max_path(&self) -> f64 {
        self.rir_length * self.speed_of_sound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    /// Sample index of the direct-path peak.
    pub direct_index: usize,
    pub source_distance: f64,
}

impl ImpulseResponse {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }
}

/// A mirror image of the source: its position and the product of the
/// reflection coefficients met along the way, per band.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource {
    pub position: Vec3,
    pub distance: f64,
    pub gains: Vec<f64>,
}

// One-axis images: offset from the mic along the axis, plus the per-band
// product of the two walls' coefficients raised to their hit counts.
struct AxisImage {
    offset: f64,
    coord: f64,
    gains: Vec<f64>,
}

fn axis_images(
    len: f64,
    src: f64,
    mic: f64,
    max_path: f64,
    wall_lo: &[f64],
    wall_hi: &[f64],
) -> Vec<AxisImage> {
    let n_max = (max_path / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..=1i64 {
            let coord = (1 - 2 * q) as f64 * src + 2.0 * n as f64 * len;
            let offset = coord - mic;
            if offset.abs() > max_path {
                continue;
            }
            let hits_lo = (n - q).unsigned_abs() as i32;
            let hits_hi = n.unsigned_abs() as i32;
            let gains = wall_lo
                .iter()
                .zip(wall_hi)
                .map(|(a, b)| a.powi(hits_lo) * b.powi(hits_hi))
                .collect();
            out.push(AxisImage {
                offset,
                coord,
                gains,
            });
        }
    }
    out.sort_by(|a, b| a.offset.abs().total_cmp(&b.offset.abs()));
    out
}

fn visit_images(
    room: &RoomSpec,
    src: &Vec3,
    mic: &Vec3,
    max_path: f64,
    mut visit: impl FnMut(Vec3, f64, &[f64]),
) {
    let r = &room.reflection;
    let xs = axis_images(room.dims[0], src[0], mic[0], max_path, &r[0], &r[1]);
    let ys = axis_images(room.dims[1], src[1], mic[1], max_path, &r[2], &r[3]);
    let zs = axis_images(room.dims[2], src[2], mic[2], max_path, &r[4], &r[5]);
    let r2 = max_path * max_path;
    let nb = room.n_bands();
    let mut gxy = vec![0.0; nb];
    let mut g = vec![0.0; nb];
    for x in &xs {
        let dx2 = x.offset * x.offset;
        if dx2 > r2 {
            break;
        }
        for y in &ys {
            let dxy2 = dx2 + y.offset * y.offset;
            if dxy2 > r2 {
                break;
            }
            for b in 0..nb {
                gxy[b] = x.gains[b] * y.gains[b];
            }
            for z in &zs {
                let d2 = dxy2 + z.offset * z.offset;
                if d2 > r2 {
                    break;
                }
                for b in 0..nb {
                    g[b] = gxy[b] * z.gains[b];
                }
                visit([x.coord, y.coord, z.coord], d2.sqrt(), &g);
            }
        }
    }
}

/// All shoebox images within `max_path` of the microphone, nearest first.
pub fn image_sources(room: &RoomSpec, src: &Vec3, mic: &Vec3, max_path: f64) -> Vec<ImageSource> {
    let mut out = Vec::new();
    visit_images(room, src, mic, max_path, |position, distance, gains| {
        out.push(ImageSource {
            position,
            distance,
            gains: gains.to_vec(),
        })
    });
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    out
}

/// Phases per sample in the fractional-delay table.
const KERNEL_PHASES: usize = 2048;

/// Windowed-sinc kernels tabulated at `KERNEL_PHASES` fractional offsets:
/// row `p` holds taps for a delay `p / KERNEL_PHASES` past an integer, the
/// sinc tapered by a Hann window twice as wide as the tap span.
struct KernelTable {
    taps: usize,
    rows: Vec<f64>,
}

impl KernelTable {
    fn new(taps: usize) -> Self {
        let half = (taps / 2) as f64;
        let width = taps as f64;
        let mut rows = Vec::with_capacity((KERNEL_PHASES + 1) * taps);
        for p in 0..=KERNEL_PHASES {
            let frac = p as f64 / KERNEL_PHASES as f64;
            for i in 0..taps {
                let u = i as f64 - half - frac;
                let sinc = if u.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * u).sin() / (PI * u)
                };
                rows.push(sinc * 0.5 * (1.0 + (PI * u / width).cos()));
            }
        }
        Self { taps, rows }
    }

    fn shared(taps: usize) -> std::sync::Arc<KernelTable> {
        use std::sync::{Arc, Mutex, OnceLock};
        static CACHE: OnceLock<Mutex<Vec<Arc<KernelTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = guard.iter().find(|t| t.taps == taps) {
            return t.clone();
        }
        let table = Arc::new(KernelTable::new(taps));
        guard.push(table.clone());
        table
    }

    /// Adds `amps[b] * kernel(k - delay)` into each band buffer.
    fn add_impulse(&self, bands: &mut [Vec<f64>], amps: &[f64], delay: f64) {
        let half = (self.taps / 2) as i64;
        let whole = delay.floor();
        let mut phase = ((delay - whole) * KERNEL_PHASES as f64).round() as usize;
        let mut base = whole as i64;
        if phase == KERNEL_PHASES {
            phase = 0;
            base += 1;
        }
        let row = &self.rows[phase * self.taps..(phase + 1) * self.taps];
        let len = bands[0].len() as i64;
        let first = base - half;
        let lo = first.max(0);
        let hi = (first + self.taps as i64).min(len);
        if lo >= hi {
            return;
        }
        let kernel = &row[(lo - first) as usize..(hi - first) as usize];
        accumulate(bands, lo as usize, kernel, amps);
    }
}

// The hot loop of synthesis. Wider vector units only change speed: no fused
// multiply-add is used, so every path rounds identically.
fn accumulate(bands: &mut [Vec<f64>], lo: usize, kernel: &[f64], amps: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the feature was just detected on this CPU.
        return unsafe { accumulate_avx(bands, lo, kernel, amps) };
    }
    accumulate_generic(bands, lo, kernel, amps)
}

#[inline(always)]
fn accumulate_generic(bands: &mut [Vec<f64>], lo: usize, kernel: &[f64], amps: &[f64]) {
    for (band, amp) in bands.iter_mut().zip(amps) {
        for (dst, k) in band[lo..lo + kernel.len()].iter_mut().zip(kernel) {
            *dst += amp * k;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn accumulate_avx(bands: &mut [Vec<f64>], lo: usize, kernel: &[f64], amps: &[f64]) {
    accumulate_generic(bands, lo, kernel, amps)
}

/// Zero-phase band weights on the rfft grid: cos²/sin² crossovers in
/// log-frequency between adjacent octave centres, summing to one everywhere.
pub fn band_weights(n_bands: usize, fft_len: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = fft_len / 2 + 1;
    let centres = &BAND_CENTERS_HZ[..n_bands];
    let mut weights = vec![vec![0.0; n_bins]; n_bands];
    for bin in 0..n_bins {
        let f = bin as f64 * sample_rate as f64 / fft_len as f64;
        if n_bands == 1 || f <= centres[0] {
            weights[0][bin] = 1.0;
            continue;
        }
        if f >= centres[n_bands - 1] {
            weights[n_bands - 1][bin] = 1.0;
            continue;
        }
        let b = centres.iter().rposition(|c| *c <= f).unwrap();
        let x = (f / centres[b]).log2() / (centres[b + 1] / centres[b]).log2();
        let c = (0.5 * PI * x).cos();
        weights[b][bin] = c * c;
        weights[b + 1][bin] = 1.0 - c * c;
    }
    weights
}

fn combine_bands(bands: &[Vec<f64>], sample_rate: u32) -> Vec<f64> {
    let n = bands[0].len();
    if bands.len() == 1 {
        return bands[0].clone();
    }
    // Twice the length so the (two-sided) band filters do not wrap the tail
    // onto the start.
    let fft_len = (2 * n).next_power_of_two();
    let weights = band_weights(bands.len(), fft_len, sample_rate);
    let mut planner = RealFftPlanner::<f64>::new();
    let r2c = planner.plan_fft_forward(fft_len);
    let c2r = planner.plan_fft_inverse(fft_len);
    let mut time = r2c.make_input_vec();
    let mut spec = r2c.make_output_vec();
    let mut acc = vec![Complex64::new(0.0, 0.0); spec.len()];
    for (band, w) in bands.iter().zip(&weights) {
        time.iter_mut().for_each(|v| *v = 0.0);
        time[..n].copy_from_slice(band);
        r2c.process(&mut time, &mut spec)
            .expect("fft sizes fixed by plan");
        for ((a, s), w) in acc.iter_mut().zip(&spec).zip(w) {
            *a += s * *w;
        }
    }
    let last = acc.len() - 1;
    acc[0].im = 0.0;
    acc[last].im = 0.0;
    c2r.process(&mut acc, &mut time)
        .expect("fft sizes fixed by plan");
    let scale = 1.0 / fft_len as f64;
    time[..n].iter().map(|v| v * scale).collect()
}

/// Synthesizes the impulse response from `src` to `mic`.
pub fn generate_rir(
    room: &RoomSpec,
    src: &Vec3,
    mic: &Vec3,
    params: &RirParams,
) -> Result<ImpulseResponse> {
    params.validate()?;
    room.validate()?;
    if room.n_bands() != params.n_bands {
        return Err(Error::shape(
            format!("{} bands", params.n_bands),
            format!("{} bands", room.n_bands()),
        ));
    }
    let direct =
        ((src[0] - mic[0]).powi(2) + (src[1] - mic[1]).powi(2) + (src[2] - mic[2]).powi(2)).sqrt();
    if direct < 1e-3 {
        return Err(Error::DegenerateGeometry { distance: direct });
    }
    let fs = params.sample_rate as f64;
    let c = params.speed_of_sound;
    let n = params.n_samples();
    let nb = params.n_bands;
    let mut bands = vec![vec![0.0; n]; nb];
    let mut amps = vec![0.0; nb];
    let floor = params.cull_level / (4.0 * PI);
    let kernels = KernelTable::shared(params.frac_delay_taps);
    visit_images(room, src, mic, params.max_path(), |_, d, gains| {
        let spread = 1.0 / (4.0 * PI * d);
        let loudest = gains.iter().cloned().fold(0.0, f64::max) * spread;
        if loudest < floor && d > direct {
            return;
        }
        for (a, g) in amps.iter_mut().zip(gains) {
            *a = g * spread;
        }
        kernels.add_impulse(&mut bands, &amps, d / c * fs);
    });
    let samples = combine_bands(&bands, params.sample_rate);
    let direct_index = ((direct / c * fs).round() as usize).min(n.saturating_sub(1));
    Ok(ImpulseResponse {
        samples,
        sample_rate: params.sample_rate,
        direct_index,
        source_distance: direct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anechoic(dims: Vec3) -> RoomSpec {
        RoomSpec::uniform(dims, 0.0)
    }

    #[test]
    fn too_short_path_has_no_images() {
        let room = RoomSpec::uniform([5.0, 5.0, 5.0], 0.5);
        assert!(image_sources(&room, &[1.0, 1.0, 1.0], &[2.0, 1.0, 1.0], 0.5).is_empty());
    }

    #[test]
    fn only_direct_image_below_first_reflection() {
        let room = RoomSpec::uniform([6.0, 6.0, 6.0], 0.7);
        // Direct 1 m; the nearest reflection path is well over 2 m.
        let imgs = image_sources(&room, &[3.0, 3.0, 3.0], &[4.0, 3.0, 3.0], 1.01);
        assert_eq!(imgs.len(), 1);
        assert!(imgs[0].gains.iter().all(|g| *g == 1.0));
    }

    #[test]
    fn cube_first_order_images() {
        let room = RoomSpec::uniform([4.0, 4.0, 4.0], 0.6);
        let c = [2.0, 2.0, 2.0];
        // First-order images sit 4 m away, second-order ones at >= 5.66 m.
        let imgs = image_sources(&room, &c, &c, 4.5);
        assert_eq!(imgs.len(), 7);
        assert_eq!(imgs[0].distance, 0.0);
        for img in &imgs[1..] {
            assert!((img.distance - 4.0).abs() < 1e-12);
            assert!(img.gains.iter().all(|g| (*g - 0.6).abs() < 1e-12));
        }
    }

    #[test]
    fn degenerate_geometry() {
        let room = anechoic([4.0, 4.0, 3.0]);
        let p = [1.0, 1.0, 1.0];
        let err = generate_rir(&room, &p, &[1.0, 1.0, 1.0005], &RirParams::default());
        assert!(matches!(err, Err(Error::DegenerateGeometry { .. })));
    }

    #[test]
    fn band_weights_sum_to_one() {
        let w = band_weights(6, 4096, 16_000);
        for bin in 0..w[0].len() {
            let s: f64 = w.iter().map(|b| b[bin]).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|b| b[bin] >= 0.0));
        }
    }

    #[test]
    fn constant_band_gains_are_transparent() {
        let n = 3000;
        let mut rng_state = 1u64;
        let base: Vec<f64> = (0..n)
            .map(|_| {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let bands: Vec<Vec<f64>> = (0..6).map(|_| base.clone()).collect();
        let out = combine_bands(&bands, 16_000);
        let err: f64 = out.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum();
        let energy: f64 = base.iter().map(|b| b * b).sum();
        assert!(10.0 * (err / energy).log10() < -60.0);
    }

    #[test]
    fn invalid_params() {
        let mut p = RirParams::default();
        p.frac_delay_taps = 80;
        assert!(p.validate().is_err());
        let mut p = RirParams::default();
        p.sample_rate = 8000;
        assert!(p.validate().is_err());
        let mut p = RirParams::default();
        p.rir_length = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn anechoic_delay_and_decay() {
        let room = anechoic([10.0, 10.0, 10.0]);
        let mic = [5.0, 5.0, 5.0];
        let p = RirParams::default();
        let one = generate_rir(&room, &[6.0, 5.0, 5.0], &mic, &p).unwrap();
        assert_eq!(one.direct_index, (16_000.0_f64 / 343.0).round() as usize);
        let two = generate_rir(&room, &[7.0, 5.0, 5.0], &mic, &p).unwrap();
        // The 81-tap pulse fully captures both; energies follow 1/d².
        let ratio = one.energy() / two.energy();
        assert!((ratio - 4.0).abs() / 4.0 < 0.01, "{ratio}");
    }

    #[test]
    fn deterministic() {
        let room = RoomSpec::uniform([5.0, 4.0, 3.0], 0.8);
        let p = RirParams::default();
        let a = generate_rir(&room, &[1.0, 1.0, 1.0], &[3.0, 2.5, 1.5], &p).unwrap();
        let b = generate_rir(&room, &[1.0, 1.0, 1.0], &[3.0, 2.5, 1.5], &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reciprocity() {
        let mut room = RoomSpec::uniform([5.3, 4.1, 2.7], 0.85);
        room.reflection[1] = vec![0.6, 0.65, 0.7, 0.75, 0.8, 0.85];
        room.reflection[4] = vec![0.9; 6];
        let (a, b) = ([1.1, 0.9, 1.3], [3.7, 2.8, 1.6]);
        let p = RirParams::default();
        let ab = generate_rir(&room, &a, &b, &p).unwrap();
        let ba = generate_rir(&room, &b, &a, &p).unwrap();
        let err: f64 = ab
            .samples
            .iter()
            .zip(&ba.samples)
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        assert!(err / ab.energy() < 1e-3, "{}", err / ab.energy());
    }

    #[test]
    fn reverberant_tail_ignores_distance() {
        let room = RoomSpec::uniform([6.0, 5.0, 3.0], 0.9);
        let mic = [3.0, 2.5, 1.5];
        let p = RirParams::default();
        let w = (0.0025 * 16_000.0_f64).round() as usize;
        let split = |d: f64| {
            let ir = generate_rir(&room, &[3.0 - 0.6 * d, 2.5 - 0.8 * d, 1.5], &mic, &p).unwrap();
            let lo = ir.direct_index.saturating_sub(w);
            let direct: f64 = ir.samples[lo..=ir.direct_index + w]
                .iter()
                .map(|x| x * x)
                .sum();
            (10.0 * direct.log10(), 10.0 * (ir.energy() - direct).log10())
        };
        let (near_direct, near_tail) = split(0.5);
        let (far_direct, far_tail) = split(3.0);
        assert!((near_tail - far_tail).abs() < 3.0);
        // 20·log10(6) = 15.6 dB for the pure direct paths; the near window
        // also holds some early reflections.
        let gap = near_direct - far_direct;
        assert!((gap - 15.6).abs() < 3.0, "{gap}");
    }
}
