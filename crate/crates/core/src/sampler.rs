//! Random rooms, microphone/source placements, presence and near/far labels.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng, Stream};

pub type Vec3 = [f64; 3];

/// Octave band centres used for the wall reflection coefficients.
pub const BAND_CENTERS_HZ: [f64; 6] = [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0];
pub const N_WALLS: usize = 6;
pub const MAX_PLACEMENT_REJECTIONS: usize = 10_000;

fn default_dims_min() -> Vec3 {
    [3.0, 4.0, 2.13]
}
fn default_dims_max() -> Vec3 {
    [7.0, 8.0, 3.05]
}
fn default_n_sources() -> usize {
    5
}
fn default_wall_margin() -> f64 {
    0.15
}
fn default_distance_min() -> f64 {
    0.2
}
fn default_t60_range() -> [f64; 2] {
    [0.2, 0.6]
}
fn default_band_perturbation() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "default_dims_min")]
    pub room_dims_min: Vec3,
    #[serde(default = "default_dims_max")]
    pub room_dims_max: Vec3,
    #[serde(default = "default_n_sources")]
    pub n_sources: usize,
    #[serde(default = "default_wall_margin")]
    pub wall_margin: f64,
    #[serde(default = "default_distance_min")]
    pub distance_min: f64,
    #[serde(default = "default_t60_range")]
    pub t60_range: [f64; 2],
    #[serde(default = "default_band_perturbation")]
    pub band_perturbation: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            room_dims_min: default_dims_min(),
            room_dims_max: default_dims_max(),
            n_sources: default_n_sources(),
            wall_margin: default_wall_margin(),
            distance_min: default_distance_min(),
            t60_range: default_t60_range(),
            band_perturbation: default_band_perturbation(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for k in 0..3 {
            if !(self.room_dims_min[k] > 0.0 && self.room_dims_min[k] <= self.room_dims_max[k]) {
                return bad(format!(
                    "room_dims_min[{k}]={} must be positive and <= room_dims_max[{k}]={}",
                    self.room_dims_min[k], self.room_dims_max[k]
                ));
            }
        }
        let smallest = self
            .room_dims_min
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(self.wall_margin >= 0.0 && self.wall_margin < smallest / 2.0) {
            return bad(format!(
                "wall_margin {} must be in [0, {})",
                self.wall_margin,
                smallest / 2.0
            ));
        }
        if !(self.distance_min > 0.0) {
            return bad(format!("distance_min {} must be > 0", self.distance_min));
        }
        let [lo, hi] = self.t60_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("t60_range [{lo}, {hi}] invalid"));
        }
        if !(0.0..1.0).contains(&self.band_perturbation) {
            return bad(format!(
                "band_perturbation {} must be in [0, 1)",
                self.band_perturbation
            ));
        }
        Ok(())
    }
}

/// Shoebox geometry with per-wall, per-band reflection coefficients.
///
/// Wall order is `x=0, x=Lx, y=0, y=Ly, z=0, z=Lz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: Vec3,
    pub reflection: Vec<Vec<f64>>,
    pub nominal_t60: f64,
}

impl RoomSpec {
    /// A room whose walls all share one reflection coefficient.
    pub fn uniform(dims: Vec3, coefficient: f64) -> Self {
        Self {
            dims,
            reflection: vec![vec![coefficient; BAND_CENTERS_HZ.len()]; N_WALLS],
            nominal_t60: 0.0,
        }
    }

    pub fn n_bands(&self) -> usize {
        self.reflection.first().map_or(0, Vec::len)
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidConfig(format!("room dims {:?}", self.dims)));
        }
        if self.reflection.len() != N_WALLS {
            return Err(Error::shape(N_WALLS, self.reflection.len()));
        }
        let nb = self.n_bands();
        for wall in &self.reflection {
            if wall.len() != nb || nb == 0 {
                return Err(Error::shape(nb, wall.len()));
            }
            if let Some(r) = wall.iter().find(|r| !(0.0..1.0).contains(*r)) {
                return Err(Error::InvalidConfig(format!(
                    "reflection coefficient {r} outside [0, 1)"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        (0..3).all(|k| p[k] >= margin && p[k] <= self.dims[k] - margin)
    }
}

// Measured ratio of Schroeder T60 (image method, default room sizes) to the
// Sabine prediction, as a function of the target T60. Grazing paths along
// the long axes decay slower than the diffuse-field model assumes.
const SHOEBOX_DECAY_TABLE: [(f64, f64); 4] = [(0.2, 1.09), (0.3, 1.25), (0.4, 1.36), (0.6, 1.47)];

/// How much longer a synthesized shoebox decay runs than Sabine predicts at
/// `t60`; piecewise linear, flat outside the measured range.
pub fn shoebox_decay_ratio(t60: f64) -> f64 {
    let table = SHOEBOX_DECAY_TABLE;
    if t60 <= table[0].0 {
        return table[0].1;
    }
    for w in table.windows(2) {
        let ((t0, r0), (t1, r1)) = (w[0], w[1]);
        if t60 <= t1 {
            return r0 + (r1 - r0) * (t60 - t0) / (t1 - t0);
        }
    }
    table[table.len() - 1].1
}

/// Reflection coefficient that makes Sabine's formula hit `t60` when every
/// wall reflects the same fraction of pressure.
pub fn sabine_reflection(dims: Vec3, t60: f64) -> f64 {
    let volume: f64 = dims.iter().product();
    let [x, y, z] = dims;
    let area = 2.0 * (x * y + x * z + y * z);
    let absorption = (0.161 * volume / (t60 * area)).clamp(0.0, 1.0);
    (1.0 - absorption).sqrt()
}

/// Sabine reverberation time implied by a room's mean band coefficients.
pub fn sabine_t60(room: &RoomSpec) -> f64 {
    let [x, y, z] = room.dims;
    let areas = [y * z, y * z, x * z, x * z, x * y, x * y];
    let nb = room.n_bands() as f64;
    let absorbing: f64 = room
        .reflection
        .iter()
        .zip(areas)
        .map(|(bands, s)| s * bands.iter().map(|r| 1.0 - r * r).sum::<f64>() / nb)
        .sum();
    0.161 * room.volume() / absorbing
}

pub fn sample_room(rng: &mut Rng, config: &SamplerConfig) -> RoomSpec {
    let mut dims = [0.0; 3];
    for k in 0..3 {
        let (lo, hi) = (config.room_dims_min[k], config.room_dims_max[k]);
        dims[k] = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    }
    let [t_lo, t_hi] = config.t60_range;
    let nominal_t60 = if t_lo < t_hi {
        rng.gen_range(t_lo..t_hi)
    } else {
        t_lo
    };
    // Aim Sabine at a shorter time so the synthesized decay lands on the
    // nominal value.
    let base = sabine_reflection(dims, nominal_t60 / shoebox_decay_ratio(nominal_t60));
    let p = config.band_perturbation;
    let reflection = (0..N_WALLS)
        .map(|_| {
            BAND_CENTERS_HZ
                .iter()
                .map(|_| {
                    let factor = if p > 0.0 {
                        1.0 + rng.gen_range(-p..p)
                    } else {
                        1.0
                    };
                    (base * factor).clamp(0.0, 0.999)
                })
                .collect()
        })
        .collect();
    RoomSpec {
        dims,
        reflection,
        nominal_t60,
    }
}

/// Microphone and source positions plus per-source labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePlacement {
    pub mic: Vec3,
    pub sources: Vec<Vec3>,
    pub distances: Vec<f64>,
    pub present: Vec<bool>,
    pub near: Vec<bool>,
}

impl ScenePlacement {
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Counts of present near and present far sources.
    pub fn near_far_counts(&self) -> (usize, usize) {
        let mut counts = (0, 0);
        for (p, n) in self.present.iter().zip(&self.near) {
            if *p {
                if *n {
                    counts.0 += 1;
                } else {
                    counts.1 += 1;
                }
            }
        }
        counts
    }

    /// Whether the near (resp. far) target would be silent with every
    /// source present, at `threshold`.
    pub fn silent_targets(&self, threshold: f64) -> (bool, bool) {
        let n_near = self.distances.iter().filter(|d| **d < threshold).count();
        (n_near == 0, n_near == self.distances.len())
    }
}

fn distance(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Draws the microphone uniformly in the margin-shrunk room, then each
/// source at a distance uniform on `[distance_min, d_max]` (farthest
/// margin-shrunk corner) and a uniformly random direction. A direction that
/// leaves the box is redrawn; a distance whose directions keep failing is
/// itself redrawn.
// Arc of a quarter circle of radius `rho` (first quadrant) lying inside
// [0, a] x [0, b], as an angle interval.
fn quarter_arc(rho: f64, a: f64, b: f64) -> (f64, f64) {
    let from = if rho <= a { 0.0 } else { (a / rho).acos() };
    let to = if rho <= b {
        std::f64::consts::FRAC_PI_2
    } else {
        (b / rho).asin()
    };
    (from, to)
}

/// Uniform point on the sphere of radius `d` around `centre`, restricted to
/// the box `[lo, hi]`.
///
/// The sphere is split into octants around the centre. On each octant patch
/// the height is uniform (Archimedes) and, at a given height, the feasible
/// arc of longitude only grows as the height rises, so a per-octant uniform
/// envelope over the heights where the arc is non-empty is tight. Returns
/// the attempt count on failure.
fn sample_on_sphere_in_box(
    rng: &mut Rng,
    centre: &Vec3,
    d: f64,
    lo: &Vec3,
    hi: &Vec3,
) -> std::result::Result<Vec3, usize> {
    struct Octant {
        signs: [f64; 3],
        extent: Vec3,
        z_lo: f64,
        z_hi: f64,
        arc_hi: f64,
    }
    let mut octants = Vec::with_capacity(8);
    let mut weights = Vec::with_capacity(8);
    for code in 0..8 {
        let signs: [f64; 3] = std::array::from_fn(|k| if code >> k & 1 == 0 { 1.0 } else { -1.0 });
        let extent: Vec3 = std::array::from_fn(|k| {
            if signs[k] > 0.0 {
                hi[k] - centre[k]
            } else {
                centre[k] - lo[k]
            }
        });
        let [a, b, c] = extent;
        let z_lo = (d * d - a * a - b * b).max(0.0).sqrt();
        let z_hi = c.min(d);
        if z_hi <= z_lo {
            continue;
        }
        let (from, to) = quarter_arc((d * d - z_hi * z_hi).max(0.0).sqrt(), a, b);
        let arc_hi = (to - from).max(0.0);
        weights.push((z_hi - z_lo) * arc_hi);
        octants.push(Octant {
            signs,
            extent,
            z_lo,
            z_hi,
            arc_hi,
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(0);
    }
    for _ in 0..MAX_PLACEMENT_REJECTIONS {
        let mut pick = rng.gen::<f64>() * total;
        let mut idx = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                idx = i;
                break;
            }
            pick -= w;
        }
        let o = &octants[idx];
        let z = rng.gen_range(o.z_lo..=o.z_hi);
        let rho = (d * d - z * z).max(0.0).sqrt();
        let (from, to) = quarter_arc(rho, o.extent[0], o.extent[1]);
        let arc = to - from;
        if !(arc > 0.0) || rng.gen::<f64>() * o.arc_hi >= arc {
            continue;
        }
        let phi = rng.gen_range(from..=to);
        let local = [rho * phi.cos(), rho * phi.sin(), z];
        let p: Vec3 =
            std::array::from_fn(|k| (centre[k] + o.signs[k] * local[k]).clamp(lo[k], hi[k]));
        return Ok(p);
    }
    Err(MAX_PLACEMENT_REJECTIONS)
}

pub fn sample_placement(
    rng: &mut Rng,
    room: &RoomSpec,
    config: &SamplerConfig,
) -> Result<ScenePlacement> {
    let m = config.wall_margin;
    let lo = [m; 3];
    let hi = [room.dims[0] - m, room.dims[1] - m, room.dims[2] - m];
    if (0..3).any(|k| hi[k] <= lo[k]) {
        return Err(Error::InvalidConfig(format!(
            "margin {m} leaves no room inside {:?}",
            room.dims
        )));
    }
    let mut mic = [0.0; 3];
    for k in 0..3 {
        mic[k] = rng.gen_range(lo[k]..hi[k]);
    }
    let far_corner: Vec3 = std::array::from_fn(|k| (mic[k] - lo[k]).max(hi[k] - mic[k]));
    let d_max = distance(&far_corner, &[0.0; 3]);

    let mut sources = Vec::with_capacity(config.n_sources);
    let mut distances = Vec::with_capacity(config.n_sources);
    for source_index in 0..config.n_sources {
        if d_max <= config.distance_min {
            return Err(Error::RejectionExhausted {
                source_index,
                attempts: 0,
            });
        }
        let d = rng.gen_range(config.distance_min..d_max);
        let pos = sample_on_sphere_in_box(rng, &mic, d, &lo, &hi).map_err(|attempts| {
            Error::RejectionExhausted {
                source_index,
                attempts,
            }
        })?;
        distances.push(distance(&pos, &mic));
        sources.push(pos);
    }
    let n = sources.len();
    Ok(ScenePlacement {
        mic,
        sources,
        distances,
        present: vec![true; n],
        near: vec![false; n],
    })
}

/// Marks each source present independently with probability `p`.
pub fn apply_spp(rng: &mut Rng, mut placement: ScenePlacement, p: f64) -> ScenePlacement {
    assert!(
        (0.0..=1.0).contains(&p),
        "presence probability {p} outside [0, 1]"
    );
    placement.present = (0..placement.n_sources())
        .map(|_| rng.gen::<f64>() < p)
        .collect();
    placement
}

/// A source is near iff its distance is strictly below `threshold`.
pub fn label_near_far(mut placement: ScenePlacement, threshold: f64) -> ScenePlacement {
    placement.near = placement.distances.iter().map(|d| *d < threshold).collect();
    placement
}

/// Room and placement for scene `index` of a seeded run.
pub fn sample_scene(config: &SamplerConfig, index: u64) -> Result<(RoomSpec, ScenePlacement)> {
    let room = sample_room(&mut stream_rng(config.seed, Stream::Room, index), config);
    let placement = sample_placement(
        &mut stream_rng(config.seed, Stream::Placement, index),
        &room,
        config,
    )?;
    Ok((room, placement))
}

/// Fractions of placements whose near (resp. far) target is silent at
/// `threshold`, with all sources present.
pub fn silent_fractions(placements: &[ScenePlacement], threshold: f64) -> (f64, f64) {
    if placements.is_empty() {
        return (0.0, 0.0);
    }
    let (mut near, mut far) = (0usize, 0usize);
    for p in placements {
        let (n, f) = p.silent_targets(threshold);
        near += n as usize;
        far += f as usize;
    }
    let n = placements.len() as f64;
    (near as f64 / n, far as f64 / n)
}

pub fn silent_target_stats(
    config: &SamplerConfig,
    threshold: f64,
    n_rooms: usize,
) -> Result<(f64, f64)> {
    config.validate()?;
    assert!(n_rooms >= 1, "n_rooms must be at least 1");
    let placements = (0..n_rooms as u64)
        .map(|i| sample_scene(config, i).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    Ok(silent_fractions(&placements, threshold))
}

/// One generated scene as stored in a rooms JSON Lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub scene_id: String,
    /// Index of the scene in the seeded stream; all per-scene randomness
    /// downstream is derived from `(seed, index)`.
    pub index: u64,
    pub seed: u64,
    pub threshold: f64,
    pub dims: Vec3,
    pub reflection: Vec<Vec<f64>>,
    pub nominal_t60: f64,
    pub mic: Vec3,
    pub sources: Vec<Vec3>,
    pub distances: Vec<f64>,
    pub present: Vec<bool>,
    pub near: Vec<bool>,
}

impl RoomRecord {
    pub fn new(
        scene_id: String,
        index: u64,
        seed: u64,
        threshold: f64,
        room: &RoomSpec,
        placement: &ScenePlacement,
    ) -> Self {
        Self {
            scene_id,
            index,
            seed,
            threshold,
            dims: room.dims,
            reflection: room.reflection.clone(),
            nominal_t60: room.nominal_t60,
            mic: placement.mic,
            sources: placement.sources.clone(),
            distances: placement.distances.clone(),
            present: placement.present.clone(),
            near: placement.near.clone(),
        }
    }

    pub fn room(&self) -> RoomSpec {
        RoomSpec {
            dims: self.dims,
            reflection: self.reflection.clone(),
            nominal_t60: self.nominal_t60,
        }
    }

    pub fn placement(&self) -> ScenePlacement {
        ScenePlacement {
            mic: self.mic,
            sources: self.sources.clone(),
            distances: self.distances.clone(),
            present: self.present.clone(),
            near: self.near.clone(),
        }
    }
}

/// Anything carrying a placement, so streams of bare placements and of
/// full room records can both be pre-filtered.
pub trait HasPlacement {
    fn silent_targets(&self, threshold: f64) -> (bool, bool);
}

impl HasPlacement for ScenePlacement {
    fn silent_targets(&self, threshold: f64) -> (bool, bool) {
        ScenePlacement::silent_targets(self, threshold)
    }
}

impl HasPlacement for RoomRecord {
    fn silent_targets(&self, threshold: f64) -> (bool, bool) {
        let n_near = self.distances.iter().filter(|d| **d < threshold).count();
        (n_near == 0, n_near == self.distances.len())
    }
}

/// Default number of source draws allowed while looking for one item of
/// the wanted class.
pub const PREFILTER_LOOKAHEAD: usize = 10_000;

/// Rebalances a placement stream so that a fixed fraction of its output has
/// a silent (near or far) target, judged with all sources present.
///
/// Output slot `k` is silent iff `floor((k+1)·f) > floor(k·f)`, so any
/// prefix of length `n` holds `floor(n·f)` silent items. Items of the
/// other class met while searching are queued for later slots, up to
/// `lookahead` each; beyond that they are dropped.
pub struct Prefilter<I: Iterator> {
    source: I,
    threshold: f64,
    fraction: f64,
    lookahead: usize,
    emitted: u64,
    silent: VecDeque<I::Item>,
    audible: VecDeque<I::Item>,
    exhausted: bool,
}

pub fn prefilter_rooms<I>(source: I, threshold: f64, target_silent_pct: f64) -> Prefilter<I>
where
    I: Iterator,
    I::Item: HasPlacement,
{
    assert!(
        (0.0..=100.0).contains(&target_silent_pct),
        "target_silent_pct {target_silent_pct} outside [0, 100]"
    );
    Prefilter {
        source,
        threshold,
        fraction: target_silent_pct / 100.0,
        lookahead: PREFILTER_LOOKAHEAD,
        emitted: 0,
        silent: VecDeque::new(),
        audible: VecDeque::new(),
        exhausted: false,
    }
}

impl<I: Iterator> Prefilter<I> {
    pub fn with_lookahead(mut self, lookahead: usize) -> Self {
        self.lookahead = lookahead;
        self
    }
}

impl<I> Iterator for Prefilter<I>
where
    I: Iterator,
    I::Item: HasPlacement,
{
    type Item = Result<I::Item>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.exhausted {
            return None;
        }
        let k = self.emitted as f64;
        let want_silent = ((k + 1.0) * self.fraction).floor() > (k * self.fraction).floor();
        for _ in 0..=self.lookahead {
            let queue = if want_silent {
                &mut self.silent
            } else {
                &mut self.audible
            };
            if let Some(item) = queue.pop_front() {
                self.emitted += 1;
                return Some(Ok(item));
            }
            let Some(item) = self.source.next() else {
                self.exhausted = true;
                return None;
            };
            let (near, far) = item.silent_targets(self.threshold);
            let other = if near || far {
                &mut self.silent
            } else {
                &mut self.audible
            };
            if other.len() < self.lookahead {
                other.push_back(item);
            }
        }
        self.exhausted = true;
        Some(Err(Error::Starvation {
            wanted: if want_silent {
                "silent-target"
            } else {
                "non-silent"
            },
            lookahead: self.lookahead,
        }))
    }
}

/// Generates `count` labelled room records for `threshold`, optionally
/// pre-filtered to a silent-target percentage.
pub fn generate_rooms(
    config: &SamplerConfig,
    threshold: f64,
    count: usize,
    prefilter_pct: Option<f64>,
) -> Result<Vec<RoomRecord>> {
    config.validate()?;
    let stream = (0u64..).map(|index| {
        sample_scene(config, index).map(|(room, placement)| {
            let placement = label_near_far(placement, threshold);
            RoomRecord::new(
                String::new(),
                index,
                config.seed,
                threshold,
                &room,
                &placement,
            )
        })
    });
    // Errors from the sampler are surfaced by carrying them through the
    // prefilter as ordinary items.
    let mut out = Vec::with_capacity(count);
    match prefilter_pct {
        None => {
            for rec in stream.take(count) {
                out.push(rec?);
            }
        }
        Some(pct) => {
            let mut first_err = None;
            let ok_stream = stream.map_while(|r| match r {
                Ok(rec) => Some(rec),
                Err(e) => {
                    first_err = Some(e);
                    None
                }
            });
            for rec in prefilter_rooms(ok_stream, threshold, pct).take(count) {
                out.push(rec?);
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
    }
    for (i, rec) in out.iter_mut().enumerate() {
        rec.scene_id = format!("scene{i:06}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> Rng {
        use rand::SeedableRng;
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn defaults_match_room_bounds() {
        let c = SamplerConfig::default();
        assert_eq!(c.room_dims_min, [3.0, 4.0, 2.13]);
        assert_eq!(c.room_dims_max, [7.0, 8.0, 3.05]);
        assert_eq!(c.n_sources, 5);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SamplerConfig::default();
        c.room_dims_min[0] = 9.0;
        assert!(c.validate().is_err());
        let mut c = SamplerConfig::default();
        c.wall_margin = 1.1;
        assert!(c.validate().is_err());
        let mut c = SamplerConfig::default();
        c.distance_min = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn degenerate_range_gives_exact_dims() {
        let c = SamplerConfig {
            room_dims_min: [5.0, 5.0, 3.0],
            room_dims_max: [5.0, 5.0, 3.0],
            ..Default::default()
        };
        let room = sample_room(&mut rng(1), &c);
        assert_eq!(room.dims, [5.0, 5.0, 3.0]);
        room.validate().unwrap();
    }

    #[test]
    fn zero_perturbation_shares_one_coefficient() {
        let c = SamplerConfig {
            t60_range: [0.3, 0.3],
            band_perturbation: 0.0,
            ..Default::default()
        };
        let room = sample_room(&mut rng(2), &c);
        let r0 = room.reflection[0][0];
        assert!(room.reflection.iter().flatten().all(|r| *r == r0));
        assert!((sabine_t60(&room) * shoebox_decay_ratio(0.3) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn room_sampling_is_deterministic() {
        let c = SamplerConfig::default();
        assert_eq!(sample_room(&mut rng(3), &c), sample_room(&mut rng(3), &c));
    }

    #[test]
    fn no_sources() {
        let c = SamplerConfig {
            n_sources: 0,
            ..Default::default()
        };
        let room = sample_room(&mut rng(4), &c);
        let p = sample_placement(&mut rng(5), &room, &c).unwrap();
        assert!(p.sources.is_empty());
        assert!(room.contains(&p.mic, c.wall_margin));
    }

    #[test]
    fn placements_are_contained_and_consistent() {
        let c = SamplerConfig::default();
        let room = RoomSpec::uniform([5.0, 6.0, 2.5], 0.5);
        let mut r = rng(6);
        let diag = (25.0_f64 + 36.0 + 6.25).sqrt();
        for _ in 0..2000 {
            let p = sample_placement(&mut r, &room, &c).unwrap();
            assert!(room.contains(&p.mic, c.wall_margin));
            for (s, d) in p.sources.iter().zip(&p.distances) {
                assert!(room.contains(s, c.wall_margin));
                assert!((distance(s, &p.mic) - d).abs() < 1e-12);
                assert!(*d >= c.distance_min && *d <= diag);
            }
        }
    }

    // Brute force: isotropic directions, rejected until inside the box.
    fn brute_sphere_in_box(r: &mut Rng, c: &Vec3, d: f64, lo: &Vec3, hi: &Vec3) -> Vec3 {
        use rand_distr::StandardNormal;
        loop {
            let v: [f64; 3] = std::array::from_fn(|_| r.sample::<f64, _>(StandardNormal));
            let n = distance(&v, &[0.0; 3]);
            let p: Vec3 = std::array::from_fn(|k| c[k] + d * v[k] / n);
            if (0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]) {
                return p;
            }
        }
    }

    #[test]
    fn sphere_in_box_matches_brute_force() {
        let (lo, hi) = ([0.0; 3], [4.0, 5.0, 2.5]);
        let c = [1.0, 3.5, 0.7];
        let mut r = rng(11);
        for d in [0.5, 2.0, 4.0] {
            let n = 20_000;
            let mut fast = [0.0; 3];
            let mut slow = [0.0; 3];
            for _ in 0..n {
                let p = sample_on_sphere_in_box(&mut r, &c, d, &lo, &hi).unwrap();
                assert!((distance(&p, &c) - d).abs() < 1e-9);
                assert!((0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]));
                let q = brute_sphere_in_box(&mut r, &c, d, &lo, &hi);
                for k in 0..3 {
                    fast[k] += p[k] / n as f64;
                    slow[k] += q[k] / n as f64;
                }
            }
            for k in 0..3 {
                assert!(
                    (fast[k] - slow[k]).abs() < 0.02 * d,
                    "d={d} axis {k}: {fast:?} vs {slow:?}"
                );
            }
        }
    }

    #[test]
    fn impossible_margin_reports_rejection() {
        let c = SamplerConfig {
            distance_min: 50.0,
            ..Default::default()
        };
        let room = RoomSpec::uniform([3.0, 4.0, 2.5], 0.5);
        assert!(matches!(
            sample_placement(&mut rng(7), &room, &c),
            Err(Error::RejectionExhausted { .. })
        ));
    }

    #[test]
    fn spp_extremes() {
        let c = SamplerConfig::default();
        let (_, p) = sample_scene(&c, 0).unwrap();
        assert!(apply_spp(&mut rng(8), p.clone(), 1.0)
            .present
            .iter()
            .all(|x| *x));
        assert!(apply_spp(&mut rng(8), p, 0.0).present.iter().all(|x| !*x));
    }

    #[test]
    fn near_far_labels() {
        let p = ScenePlacement {
            mic: [0.0; 3],
            sources: vec![[0.0; 3]; 3],
            distances: vec![0.5, 2.0, 3.1],
            present: vec![true; 3],
            near: vec![false; 3],
        };
        assert_eq!(label_near_far(p.clone(), 3.0).near, vec![true, true, false]);
        let single = |d: f64, t: f64| {
            label_near_far(
                ScenePlacement {
                    distances: vec![d],
                    ..p.clone()
                },
                t,
            )
            .near[0]
        };
        assert!(single(1.0, 1.5));
        assert!(!single(1.5, 1.5));
    }

    #[test]
    fn infinite_threshold_silences_far() {
        let c = SamplerConfig::default();
        let (near, far) = silent_target_stats(&c, f64::INFINITY, 50).unwrap();
        assert_eq!((near, far), (0.0, 1.0));
    }

    #[test]
    fn prefilter_zero_percent_has_no_silent_targets() {
        let c = SamplerConfig::default();
        let recs = generate_rooms(&c, 1.5, 300, Some(0.0)).unwrap();
        assert_eq!(recs.len(), 300);
        assert!(recs.iter().all(|r| {
            let (n, f) = HasPlacement::silent_targets(r, 1.5);
            !n && !f
        }));
    }

    #[test]
    fn prefilter_starves_when_class_missing() {
        let c = SamplerConfig::default();
        // At an infinite threshold every far target is silent.
        let stream = (0..).map(|i| sample_scene(&c, i).unwrap().1);
        let mut f = prefilter_rooms(stream, f64::INFINITY, 0.0).with_lookahead(50);
        assert!(matches!(f.next(), Some(Err(Error::Starvation { .. }))));
        assert!(f.next().is_none());
    }

    #[test]
    fn scene_ids_are_sequential() {
        let c = SamplerConfig::default();
        let recs = generate_rooms(&c, 1.5, 3, None).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.scene_id.as_str()).collect();
        assert_eq!(ids, ["scene000000", "scene000001", "scene000002"]);
        assert_eq!(recs[2].placement().near.len(), 5);
    }
}
