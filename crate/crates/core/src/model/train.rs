use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use realfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{save_checkpoint, Model, ModelConfig};
use crate::dsp::{Mask, Spectrogram, Stft, StftParams, Waveform};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scene::{load_example, ManifestRow};
use crate::separator::{LossWeights, COMPRESSION};

/// Magnitude floor inside the derivative of `|s|^0.3`.
const GRAD_MAG_FLOOR: f64 = 1e-8;

/// One aligned training triple, all the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub mixture: Vec<f64>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
}

impl TrainExample {
    pub fn new(mixture: Vec<f64>, near: Vec<f64>, far: Vec<f64>) -> Result<Self> {
        if near.len() != mixture.len() || far.len() != mixture.len() {
            return Err(Error::shape(
                format!("{} samples", mixture.len()),
                format!("{} and {} samples", near.len(), far.len()),
            ));
        }
        Ok(Self { mixture, near, far })
    }

    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    fn crop(&self, start: usize, len: usize) -> Self {
        let r = start..start + len;
        Self {
            mixture: self.mixture[r.clone()].to_vec(),
            near: self.near[r.clone()].to_vec(),
            far: self.far[r].to_vec(),
        }
    }
}

pub type Batch = [TrainExample];

/// Random access to training examples, so large sets can stay on disk.
pub trait TrainSource: Sync {
    fn len(&self) -> usize;
    fn example(&self, index: usize) -> Result<TrainExample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TrainSource for [TrainExample] {
    fn len(&self) -> usize {
        <[TrainExample]>::len(self)
    }

    fn example(&self, index: usize) -> Result<TrainExample> {
        Ok(self[index].clone())
    }
}

impl TrainSource for Vec<TrainExample> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn example(&self, index: usize) -> Result<TrainExample> {
        Ok(self[index].clone())
    }
}

/// Examples read from a rendered dataset on demand.
#[derive(Debug, Clone)]
pub struct ManifestSource {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl ManifestSource {
    pub fn open(manifest: &Path) -> Result<Self> {
        let rows = crate::io::read_jsonl(manifest)?;
        let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, rows })
    }
}

impl TrainSource for ManifestSource {
    fn len(&self) -> usize {
        self.rows.len()
    }

    fn example(&self, index: usize) -> Result<TrainExample> {
        let ex = load_example(&self.dir, &self.rows[index])?;
        TrainExample::new(ex.mixture.samples, ex.near.samples, ex.far.samples)
    }
}

fn check_model_stft(model: &Model, stft: &Stft) -> Result<()> {
    if stft.n_freq() != model.config.n_freq {
        return Err(Error::shape(
            format!("{} frequency bins", model.config.n_freq),
            format!("{} from the STFT", stft.n_freq()),
        ));
    }
    Ok(())
}

/// Near and far masks for a whole mixture.
pub fn predict_masks(model: &Model, stft: &Stft, y: &Waveform) -> Result<(Mask, Mask)> {
    check_model_stft(model, stft)?;
    let spec = stft.stft(y);
    let input: Vec<f64> = spec
        .bins
        .iter()
        .map(|c| c.norm().powf(COMPRESSION))
        .collect();
    let (near, far) = model.forward(&input)?;
    Ok((
        Mask::new(near, spec.n_frames, spec.n_freq)?,
        Mask::new(far, spec.n_frames, spec.n_freq)?,
    ))
}

// Loss of one target and `d loss / d mask`, accumulated into `d_mask`
// (stride 2F, offset selects near or far).
#[allow(clippy::too_many_arguments)]
fn target_term(
    stft: &Stft,
    y: &[Complex64],
    target: &[Complex64],
    masks: &[f64],
    offset: usize,
    weight: f64,
    project: bool,
    n_frames: usize,
    signal_len: usize,
    d_mask: &mut [f64],
) -> f64 {
    let f = stft.n_freq();
    let params = stft.params();
    let z = Spectrogram {
        bins: (0..n_frames * f)
            .map(|i| y[i] * masks[(i / f) * 2 * f + offset + i % f])
            .collect(),
        n_frames,
        n_freq: f,
        hop: params.hop,
        window_len: params.window_len,
        sample_rate: params.sample_rate,
        signal_len,
    };
    let est = if project {
        stft.analyze(&stft.synthesize(&z)).bins
    } else {
        z.bins
    };
    let mut loss = 0.0;
    let mut g_est = vec![Complex64::new(0.0, 0.0); est.len()];
    for ((g, s), x) in g_est.iter_mut().zip(&est).zip(target) {
        let r = s.norm();
        let diff = r.powf(COMPRESSION) - x.norm().powf(COMPRESSION);
        loss += diff * diff;
        let rf = r.max(GRAD_MAG_FLOOR);
        *g = *s * (weight * 2.0 * diff * COMPRESSION * rf.powf(COMPRESSION - 2.0));
    }
    let g_z = if project {
        let g_time = stft.analyze_adjoint(&g_est, n_frames, signal_len);
        stft.synthesize_adjoint(&g_time, n_frames)
    } else {
        g_est
    };
    for i in 0..n_frames * f {
        let dm = y[i].re * g_z[i].re + y[i].im * g_z[i].im;
        d_mask[(i / f) * 2 * f + offset + i % f] += dm;
    }
    weight * loss
}

fn example_loss_grad(
    model: &Model,
    stft: &Stft,
    ex: &TrainExample,
    weights: &LossWeights,
    project: bool,
    grad: &mut [f64],
) -> Result<f64> {
    let f = stft.n_freq();
    let y = stft.analyze(&ex.mixture);
    let x_near = stft.analyze(&ex.near);
    let x_far = stft.analyze(&ex.far);
    let input: Vec<f64> = y.bins.iter().map(|c| c.norm().powf(COMPRESSION)).collect();
    let cache = model.forward_cached(&input)?;
    let mut d_mask = vec![0.0; y.n_frames * 2 * f];
    let mut loss = 0.0;
    for (target, offset, w) in [(&x_near, 0, weights.w_near), (&x_far, f, weights.w_far)] {
        loss += target_term(
            stft,
            &y.bins,
            &target.bins,
            &cache.masks,
            offset,
            w,
            project,
            y.n_frames,
            ex.len(),
            &mut d_mask,
        );
    }
    model.backward(&cache, &d_mask, grad);
    Ok(loss)
}

/// Mean weighted compressed loss over the batch and its gradient with
/// respect to every model parameter.
pub fn loss_and_grad(
    model: &Model,
    stft: &Stft,
    batch: &Batch,
    weights: &LossWeights,
    project: bool,
) -> Result<(f64, Vec<f64>)> {
    check_model_stft(model, stft)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty training batch".into()));
    }
    let mut grad = vec![0.0; model.n_params()];
    let mut total = 0.0;
    for ex in batch {
        total += example_loss_grad(model, stft, ex, weights, project, &mut grad)?;
    }
    let scale = 1.0 / batch.len() as f64;
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss));
    }
    for g in &mut grad {
        *g *= scale;
    }
    if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss(*bad));
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random crop length per example; 0 trains on whole clips.
    pub crop_seconds: f64,
    pub weights: LossWeights,
    pub project: bool,
    /// Checkpoint period in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            crop_seconds: 2.0,
            weights: LossWeights::default(),
            project: true,
            checkpoint_every: 500,
            seed: 0,
        }
    }

    pub fn large() -> Self {
        Self {
            model: ModelConfig::large(),
            steps: 100_000,
            batch_size: 128,
            learning_rate: 3e-5,
            crop_seconds: 0.0,
            checkpoint_every: 5000,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (desk, large)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.crop_seconds >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "batch_size {}, learning_rate {}, crop_seconds {}",
                self.batch_size, self.learning_rate, self.crop_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<TrainLogRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Where `train` writes: the final checkpoint, a CSV log next to it and
/// periodic snapshots `<stem>_step<n>.ckpt`.
pub fn log_path(checkpoint: &Path) -> PathBuf {
    sibling(checkpoint, "_log.csv")
}

fn sibling(checkpoint: &Path, suffix: &str) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    checkpoint.with_file_name(format!("{stem}{suffix}"))
}

fn batch_for_step(
    config: &TrainConfig,
    data: &(impl TrainSource + ?Sized),
    crop_len: usize,
    order: &mut Vec<usize>,
    epoch: &mut u64,
    cursor: &mut usize,
    step: usize,
) -> Result<Vec<TrainExample>> {
    let mut crop_rng = stream_rng(config.seed, Stream::Crop, step as u64);
    let mut batch = Vec::with_capacity(config.batch_size);
    while batch.len() < config.batch_size {
        if *cursor == order.len() {
            *order = (0..data.len()).collect();
            order.shuffle(&mut stream_rng(config.seed, Stream::Shuffle, *epoch));
            *epoch += 1;
            *cursor = 0;
        }
        let ex = data.example(order[*cursor])?;
        *cursor += 1;
        if crop_len == 0 || ex.len() <= crop_len {
            batch.push(ex);
        } else {
            let start = crop_rng.gen_range(0..=ex.len() - crop_len);
            batch.push(ex.crop(start, crop_len));
        }
    }
    Ok(batch)
}

/// Trains from the configured initialization with Adam. When `checkpoint`
/// is given, also writes the CSV log (`step,loss,wall_ms`) and periodic
/// snapshots beside it. Final parameters are rounded to f32 so the
/// checkpoint reproduces the returned model exactly.
pub fn train(
    config: &TrainConfig,
    data: &(impl TrainSource + ?Sized),
    checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    let stft = Stft::new(StftParams::with_window(
        config.model.window_len(),
        crate::dsp::DEFAULT_SAMPLE_RATE,
    ));
    let crop_len = (config.crop_seconds * crate::dsp::DEFAULT_SAMPLE_RATE as f64).round() as usize;
    let mut model = Model::init(&config.model)?;
    let mut adam = AdamState::new(model.n_params(), config.learning_rate);

    let mut log_file = match checkpoint {
        Some(ckpt) => {
            if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
                crate::io::create_dir(dir)?;
            }
            let path = log_path(ckpt);
            let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "step,loss,wall_ms").map_err(|e| Error::io(&path, e))?;
            Some((path, f))
        }
        None => None,
    };

    let started = Instant::now();
    let mut log = Vec::with_capacity(config.steps);
    let mut checkpoints = Vec::new();
    let (mut order, mut epoch, mut cursor) = (Vec::new(), 0u64, 0usize);
    for step in 0..config.steps {
        let batch = batch_for_step(
            config,
            data,
            crop_len,
            &mut order,
            &mut epoch,
            &mut cursor,
            step,
        )?;
        let (loss, grad) = loss_and_grad(&model, &stft, &batch, &config.weights, config.project)?;
        adam_step(&mut model.params, &grad, &mut adam);
        let row = TrainLogRow {
            step: step + 1,
            loss,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some((path, f)) = &mut log_file {
            writeln!(f, "{},{},{}", row.step, row.loss, row.wall_ms)
                .map_err(|e| Error::io(&*path, e))?;
        }
        log.push(row);
        if let Some(ckpt) = checkpoint {
            if config.checkpoint_every > 0
                && (step + 1) % config.checkpoint_every == 0
                && step + 1 < config.steps
            {
                let path = sibling(ckpt, &format!("_step{:07}.ckpt", step + 1));
                let mut snapshot = model.clone();
                snapshot
                    .params
                    .iter_mut()
                    .for_each(|p| *p = *p as f32 as f64);
                save_checkpoint(&path, &snapshot, step + 1)?;
                checkpoints.push(path);
            }
        }
    }
    for p in &mut model.params {
        *p = *p as f32 as f64;
    }
    if let Some(ckpt) = checkpoint {
        save_checkpoint(ckpt, &model, config.steps)?;
        checkpoints.push(ckpt.to_path_buf());
    }
    Ok(TrainOutcome {
        model,
        log,
        checkpoints,
    })
}

// Exposed for the gradient check in tests.
#[cfg(test)]
pub(crate) fn masks_of(model: &Model, stft: &Stft, ex: &TrainExample) -> (Vec<f64>, Vec<f64>) {
    let y = stft.analyze(&ex.mixture);
    let input: Vec<f64> = y.bins.iter().map(|c| c.norm().powf(COMPRESSION)).collect();
    super::split_masks(&model.forward_cached(&input).unwrap().masks, stft.n_freq())
}
