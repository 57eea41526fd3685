//! Paired datasets (simulated IQ against a despeckled envelope or the CT
//! image), the training loop and held-out evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::hu_to_acoustic;
use crate::bench::psnr;
use crate::cnn::{adam_step, mse_loss, AdamState, ModelCheckpoint, Network, NetworkSpec, NormStats, Tensor4};
use crate::demod::demodulate;
use crate::denoise::{Bm3dParams, Denoiser, NlmParams, TvParams};
use crate::dicom::HounsfieldSlice;
use crate::error::{Error, Result};
use crate::grid::{extract_patch, ComplexGrid, RealGrid};
use crate::homomorphic::{despeckle, DespeckleConfig};
use crate::io::{read_f32_blob, read_json, write_f32_blob, write_json};
use crate::seed::derive;
use crate::sim::{baseband_psf, simulate_rf, ProbeSpec};

pub const DEFAULT_PATCH: usize = 64;
/// HU window mapped linearly onto `[0, 1]` for CT targets.
pub const CT_WINDOW_HU: (f64, f64) = (-1000.0, 1000.0);
pub const DEFAULT_WIENER_NOISE_RATIO: f64 = 0.05;
pub const DEFAULT_TV: TvParams = TvParams {
    lambda: 0.3,
    iters: 100,
    tau: 0.25,
};
pub const DEFAULT_NLM_H: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Tv,
    Nlm,
    Bm3d,
    Ct,
}

impl TargetKind {
    pub const ALL: [TargetKind; 4] = [Self::Tv, Self::Nlm, Self::Bm3d, Self::Ct];

    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Tv => "tv",
            TargetKind::Nlm => "nlm",
            TargetKind::Bm3d => "bm3d",
            TargetKind::Ct => "ct",
        }
    }

    /// Default despeckling pipeline for this kind, `None` for CT targets.
    pub fn default_despeckle(self, probe: &ProbeSpec) -> Result<Option<DespeckleConfig>> {
        let denoiser = match self {
            TargetKind::Tv => Denoiser::Tv(DEFAULT_TV),
            TargetKind::Nlm => Denoiser::Nlm(NlmParams::new(DEFAULT_NLM_H)),
            TargetKind::Bm3d => Denoiser::Bm3d(Bm3dParams::default()),
            TargetKind::Ct => return Ok(None),
        };
        Ok(Some(DespeckleConfig::new(baseband_psf(probe)?, DEFAULT_WIENER_NOISE_RATIO, denoiser)))
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown target kind {s:?} (tv, nlm, bm3d, ct)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetMode {
    Despeckle(DespeckleConfig),
    Ct,
}

impl TargetMode {
    pub fn kind(&self) -> TargetKind {
        match self {
            TargetMode::Ct => TargetKind::Ct,
            TargetMode::Despeckle(cfg) => match cfg.denoiser {
                Denoiser::Tv(_) => TargetKind::Tv,
                Denoiser::Nlm(_) => TargetKind::Nlm,
                Denoiser::Bm3d(_) => TargetKind::Bm3d,
                // Bypass pipelines are labelled by the closest conventional method.
                Denoiser::Identity => TargetKind::Tv,
            },
        }
    }
}

/// Where a patch came from: slice index and top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub slice: usize,
    pub top: usize,
    pub left: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub inputs: Vec<ComplexGrid>,
    pub targets: Vec<RealGrid>,
    pub origins: Vec<PatchOrigin>,
    pub target_kind: TargetKind,
    /// Statistics over every pair; `train` recomputes them on its own split.
    pub norm_stats: NormStats,
    pub patch: usize,
    pub seed: u64,
}

/// Full-frame products of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceProducts {
    pub iq: ComplexGrid,
    pub target: RealGrid,
}

pub fn ct_target(slice: &HounsfieldSlice) -> Result<RealGrid> {
    let (lo, hi) = CT_WINDOW_HU;
    slice.grid.map(|hu| ((hu - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Simulate, demodulate and derive the target for one slice.
pub fn slice_products(slice: &HounsfieldSlice, probe: &ProbeSpec, mode: &TargetMode, seed: u64) -> Result<SliceProducts> {
    let map = hu_to_acoustic(slice);
    let scan = simulate_rf(&map, probe, seed)?;
    let iq = demodulate(&scan.rf, probe.carrier_cycles_per_sample)?;
    let target = match mode {
        TargetMode::Despeckle(cfg) => despeckle(&iq, cfg)?,
        TargetMode::Ct => ct_target(slice)?,
    };
    Ok(SliceProducts { iq: iq.grid, target })
}

pub fn slice_seed(root: u64, index: usize) -> u64 {
    derive(root, &format!("slice-{index}"))
}

fn tile_starts(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    if n < patch {
        return Vec::new();
    }
    (0..=n - patch).step_by(stride).collect()
}

pub fn build_dataset(
    slices: &[HounsfieldSlice],
    probe: &ProbeSpec,
    mode: &TargetMode,
    patch: usize,
    stride: usize,
    seed: u64,
) -> Result<PairedDataset> {
    if patch == 0 || patch % 4 != 0 {
        return Err(Error::Parameter(format!("patch {patch} must be a positive multiple of 4")));
    }
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if probe.axial_samples_per_pixel != 1 {
        return Err(Error::Parameter(
            "datasets need axial_samples_per_pixel = 1 so targets stay pixel-aligned".into(),
        ));
    }
    probe.validate()?;
    if let TargetMode::Despeckle(cfg) = mode {
        cfg.validate()?;
    }
    let products: Vec<SliceProducts> = slices
        .par_iter()
        .enumerate()
        .map(|(i, s)| slice_products(s, probe, mode, slice_seed(seed, i)))
        .collect::<Result<_>>()?;
    let mut ds = PairedDataset {
        inputs: Vec::new(),
        targets: Vec::new(),
        origins: Vec::new(),
        target_kind: mode.kind(),
        norm_stats: NormStats::identity(),
        patch,
        seed,
    };
    for (i, p) in products.iter().enumerate() {
        let (rows, cols) = p.iq.dims();
        for &top in &tile_starts(rows, patch, stride) {
            for &left in &tile_starts(cols, patch, stride) {
                ds.inputs.push(p.iq.extract_patch(top, left, patch, patch)?);
                ds.targets.push(extract_patch(&p.target, top, left, patch, patch)?);
                ds.origins.push(PatchOrigin { slice: i, top, left });
            }
        }
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    ds.norm_stats = ds.stats_over(&(0..ds.len()).collect::<Vec<_>>());
    Ok(ds)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    // A constant channel keeps unit scale so normalisation stays invertible.
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Normalisation statistics over the given pair indices.
    pub fn stats_over(&self, idx: &[usize]) -> NormStats {
        let re = idx.iter().flat_map(|&i| self.inputs[i].re().iter().copied());
        let im = idx.iter().flat_map(|&i| self.inputs[i].im().iter().copied());
        let t = idx.iter().flat_map(|&i| self.targets[i].values().iter().copied());
        let (mr, sr) = mean_std(re);
        let (mi, si) = mean_std(im);
        let (mt, st) = mean_std(t);
        NormStats {
            input_mean: [mr, mi],
            input_std: [sr, si],
            target_mean: mt,
            target_std: st,
        }
    }

    /// Seeded split into `(train, validation)` index lists, each sorted.
    pub fn split(&self, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let n = self.len();
        let n_val = if n < 2 { 0 } else { ((n as f64 * val_fraction).round() as usize).min(n - 1) };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, "split")));
        let (mut val, mut train) = (order[..n_val].to_vec(), order[n_val..].to_vec());
        val.sort_unstable();
        train.sort_unstable();
        (train, val)
    }

    /// Largest target minus smallest target over the whole dataset.
    pub fn target_range(&self) -> f64 {
        let (lo, hi) = self
            .targets
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    }

    /// Peak for PSNR: the dataset's target range, or the largest target
    /// magnitude when every target is the same constant.
    pub fn psnr_peak(&self) -> f64 {
        let range = self.target_range();
        if range > 0.0 {
            return range;
        }
        let m = self
            .targets
            .iter()
            .flat_map(|t| t.values().iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
            ..self.clone()
        }
    }

    fn input_tensor(&self, idx: &[usize], norm: &NormStats) -> Tensor4 {
        normalised_inputs(idx.iter().map(|&i| &self.inputs[i]), norm, self.patch, self.patch)
    }

    fn target_tensor(&self, idx: &[usize], norm: &NormStats) -> Tensor4 {
        let (m, s) = (norm.target_mean, norm.target_std);
        let vals = idx
            .iter()
            .flat_map(|&i| self.targets[i].values().iter().map(move |v| (v - m) / s))
            .collect();
        Tensor4::new(idx.len(), 1, self.patch, self.patch, vals).expect("finite targets")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let inputs: Vec<f64> = self
            .inputs
            .iter()
            .flat_map(|g| g.re().iter().chain(g.im()).copied())
            .collect();
        let targets: Vec<f64> = self.targets.iter().flat_map(|t| t.values().iter().copied()).collect();
        write_f32_blob(&dir.join(DATASET_INPUTS), &inputs)?;
        write_f32_blob(&dir.join(DATASET_TARGETS), &targets)?;
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            count: self.len(),
            patch: self.patch,
            target_kind: self.target_kind,
            norm_stats: self.norm_stats,
            seed: self.seed,
            origins: self.origins.clone(),
            inputs_layout: "per pair: real plane then imaginary plane, row-major f32-le".into(),
            targets_layout: "per pair: one plane, row-major f32-le".into(),
        };
        write_json(&dir.join(DATASET_MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(DATASET_MANIFEST);
        let m: DatasetManifest = read_json(&mpath)?;
        if m.format != DATASET_FORMAT {
            return Err(Error::file_format(&mpath, format!("unknown format {:?}", m.format)));
        }
        if m.origins.len() != m.count || m.patch == 0 {
            return Err(Error::file_format(&mpath, "inconsistent counts"));
        }
        let pp = m.patch * m.patch;
        let inputs = read_f32_blob(&dir.join(DATASET_INPUTS))?;
        let targets = read_f32_blob(&dir.join(DATASET_TARGETS))?;
        if inputs.len() != 2 * pp * m.count {
            return Err(Error::file_format(dir.join(DATASET_INPUTS), "length does not match manifest"));
        }
        if targets.len() != pp * m.count {
            return Err(Error::file_format(dir.join(DATASET_TARGETS), "length does not match manifest"));
        }
        let inputs = inputs
            .chunks_exact(2 * pp)
            .map(|c| ComplexGrid::new(m.patch, m.patch, c[..pp].to_vec(), c[pp..].to_vec()))
            .collect::<Result<_>>()?;
        let targets = targets
            .chunks_exact(pp)
            .map(|c| RealGrid::new(m.patch, m.patch, c.to_vec()))
            .collect::<Result<_>>()?;
        Ok(Self {
            inputs,
            targets,
            origins: m.origins,
            target_kind: m.target_kind,
            norm_stats: m.norm_stats,
            patch: m.patch,
            seed: m.seed,
        })
    }
}

pub const DATASET_MANIFEST: &str = "manifest.json";
pub const DATASET_INPUTS: &str = "inputs.f32";
pub const DATASET_TARGETS: &str = "targets.f32";
const DATASET_FORMAT: &str = "echoct-dataset/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    count: usize,
    patch: usize,
    target_kind: TargetKind,
    norm_stats: NormStats,
    seed: u64,
    origins: Vec<PatchOrigin>,
    inputs_layout: String,
    targets_layout: String,
}

fn normalised_inputs<'a>(grids: impl Iterator<Item = &'a ComplexGrid>, norm: &NormStats, h: usize, w: usize) -> Tensor4 {
    let mut vals = Vec::new();
    let mut n = 0;
    for g in grids {
        vals.extend(g.re().iter().map(|v| (v - norm.input_mean[0]) / norm.input_std[0]));
        vals.extend(g.im().iter().map(|v| (v - norm.input_mean[1]) / norm.input_std[1]));
        n += 1;
    }
    Tensor4::new(n, 2, h, w, vals).expect("finite inputs")
}

/// Run a checkpoint on full IQ frames (dims divisible by the network's
/// size multiple) and return outputs in target units. `fast` selects
/// single-precision inference.
pub fn apply_network(ck: &ModelCheckpoint, frames: &[ComplexGrid], fast: bool) -> Result<Vec<RealGrid>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = first.dims();
    if frames.iter().any(|f| f.dims() != (h, w)) {
        return Err(Error::Shape("frames differ in size".into()));
    }
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(8) {
        let x = normalised_inputs(chunk.iter(), &ck.norm, h, w);
        let y = if fast {
            ck.network.predict_f32(&x)?
        } else {
            ck.network.predict(&x)?
        };
        for i in 0..chunk.len() {
            let vals = y.sample(i).iter().map(|v| v * ck.norm.target_std + ck.norm.target_mean).collect();
            out.push(RealGrid::new(h, w, vals)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub seed: u64,
    /// Snapshot cadence in iterations; 0 disables intermediate snapshots.
    pub checkpoint_every: u64,
    /// Loss-curve cadence in iterations.
    pub log_every: u64,
    pub val_fraction: f64,
    /// Training pairs (at most) used for the train_mse column.
    pub train_eval_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            iterations: 5000,
            lr: 1e-4,
            seed: 1,
            checkpoint_every: 1000,
            log_every: 100,
            val_fraction: 0.05,
            train_eval_pairs: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(Error::Parameter("val_fraction must be in [0, 0.5)".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter("lr must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Parameter("log_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: u64,
    pub train_mse: f64,
    /// `None` when the validation split is empty.
    pub val_mse: Option<f64>,
}

pub fn loss_curve_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("iteration,train_mse,val_mse\n");
    for r in rows {
        let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.iteration, r.train_mse, val));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: ModelCheckpoint,
    /// Snapshot with the lowest validation loss seen at a log point.
    pub best: ModelCheckpoint,
    pub curve: Vec<LossRow>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Pair indices of mini-batch `iteration`: seeded permutations, one per
/// epoch, consumed `batch` at a time and wrapping across epochs.
pub fn batch_indices(train: &[usize], batch: usize, iteration: u64, seed: u64) -> Vec<usize> {
    let n = train.len() as u64;
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for k in 0..batch as u64 {
        let pos = iteration * batch as u64 + k;
        let (epoch, offset) = (pos / n, (pos % n) as usize);
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm = train.to_vec();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, &format!("epoch-{epoch}"))));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("just filled").1[offset]);
    }
    out
}

fn mean_mse(net: &Network, ds: &PairedDataset, idx: &[usize], norm: &NormStats) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for chunk in idx.chunks(16) {
        let y = net.predict(&ds.input_tensor(chunk, norm))?;
        let (loss, _) = mse_loss(&y, &ds.target_tensor(chunk, norm))?;
        total += loss * chunk.len() as f64;
    }
    Ok(Some(total / idx.len() as f64))
}

/// Train from scratch; see [`train_with`].
pub fn train(spec: NetworkSpec, data: &PairedDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(spec, data, cfg, None, |_, _| Ok(()))
}

/// Training loop. `resume` continues from a checkpoint (its step, weights
/// and Adam state); `on_snapshot` receives every `checkpoint_every`-th
/// checkpoint together with the loss curve so far.
pub fn train_with(
    spec: NetworkSpec,
    data: &PairedDataset,
    cfg: &TrainConfig,
    resume: Option<ModelCheckpoint>,
    mut on_snapshot: impl FnMut(&ModelCheckpoint, &[LossRow]) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_idx, val_idx) = data.split(cfg.val_fraction, cfg.seed);
    let norm = data.stats_over(&train_idx);
    let eval_idx: Vec<usize> = train_idx.iter().copied().take(cfg.train_eval_pairs.max(1)).collect();

    let (mut net, mut adam, mut step) = match resume {
        Some(ck) => {
            if ck.network.spec() != &spec {
                return Err(Error::Config("resume checkpoint has a different topology".into()));
            }
            let adam = ck.adam.unwrap_or_else(|| AdamState::new(spec.param_len(), cfg.lr));
            (ck.network, adam, ck.step)
        }
        None => {
            let net = Network::init(spec.clone(), derive(cfg.seed, "init"))?;
            let adam = AdamState::new(net.params().len(), cfg.lr);
            (net, adam, 0)
        }
    };
    adam.lr = cfg.lr;
    let snapshot = |net: &Network, adam: &AdamState, step: u64| ModelCheckpoint {
        network: net.clone(),
        adam: Some(adam.clone()),
        norm,
        step,
        seed: cfg.seed,
    };

    let log_point = |net: &Network, step: u64| -> Result<LossRow> {
        Ok(LossRow {
            iteration: step,
            train_mse: mean_mse(net, data, &eval_idx, &norm)?.expect("non-empty training split"),
            val_mse: mean_mse(net, data, &val_idx, &norm)?,
        })
    };
    let mut curve = vec![log_point(&net, step)?];
    let score = |r: &LossRow| r.val_mse.unwrap_or(r.train_mse);
    let mut best = (score(&curve[0]), snapshot(&net, &adam, step));

    let end = step + cfg.iterations;
    while step < end {
        let batch = batch_indices(&train_idx, cfg.batch_size, step, cfg.seed);
        let x = data.input_tensor(&batch, &norm);
        let t = data.target_tensor(&batch, &norm);
        let (y, cache) = net.forward(&x)?;
        let (loss, gy) = mse_loss(&y, &t)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: step,
                batch,
                max_activation: cache.max_activation(),
            });
        }
        let grads = net.backward(&cache, &gy)?;
        adam_step(net.params_mut(), &grads.params, &mut adam)?;
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: step,
                batch,
                max_activation: cache.max_activation(),
            });
        }
        step += 1;
        if step % cfg.log_every == 0 || step == end {
            let row = log_point(&net, step)?;
            log::info!(
                "iteration {step}: train_mse {:.5} val_mse {:?}",
                row.train_mse,
                row.val_mse
            );
            if score(&row) < best.0 {
                best = (score(&row), snapshot(&net, &adam, step));
            }
            curve.push(row);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < end {
            on_snapshot(&snapshot(&net, &adam, step), &curve)?;
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&net, &adam, step),
        best: best.1,
        curve,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_db: Vec<f64>,
    pub mean_psnr_db: f64,
    pub peak: f64,
}

/// Per-pair PSNR of network output against targets, in target units, with
/// the dataset's target range as peak.
pub fn evaluate(ck: &ModelCheckpoint, data: &PairedDataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let peak = data.psnr_peak();
    let outputs = apply_network(ck, &data.inputs, false)?;
    let psnr_db = outputs
        .iter()
        .zip(&data.targets)
        .map(|(o, t)| psnr(t, o, peak))
        .collect::<Result<Vec<_>>>()?;
    let mean_psnr_db = psnr_db.iter().sum::<f64>() / psnr_db.len() as f64;
    Ok(EvalReport {
        psnr_db,
        mean_psnr_db,
        peak,
    })
}

/// PSNR of arbitrary per-pair estimates against the dataset targets, same
/// peak convention as [`evaluate`].
pub fn evaluate_estimates(estimates: &[RealGrid], data: &PairedDataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if estimates.len() != data.len() {
        return Err(Error::LengthMismatch {
            expected: data.len(),
            found: estimates.len(),
        });
    }
    let peak = data.psnr_peak();
    let psnr_db = estimates
        .iter()
        .zip(&data.targets)
        .map(|(e, t)| psnr(t, e, peak))
        .collect::<Result<Vec<_>>>()?;
    let mean_psnr_db = psnr_db.iter().sum::<f64>() / psnr_db.len() as f64;
    Ok(EvalReport {
        psnr_db,
        mean_psnr_db,
        peak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomKind};

    fn water(rows: usize, cols: usize) -> HounsfieldSlice {
        HounsfieldSlice::new(RealGrid::filled(rows, cols, 0.0).unwrap(), (0.3, 0.3), "water").unwrap()
    }

    #[test]
    fn tiling_arithmetic() {
        let s = make_phantom(PhantomKind::Circles, 256, 256, 1).unwrap();
        let ds = build_dataset(&[s], &ProbeSpec::default(), &TargetMode::Ct, 64, 64, 3).unwrap();
        assert_eq!(ds.len(), 16);
        assert_eq!(tile_starts(256, 64, 32).len(), 7);
        assert!(tile_starts(60, 64, 1).is_empty());
    }

    #[test]
    fn ct_target_of_water_is_constant() {
        let ds = build_dataset(&[water(64, 128)], &ProbeSpec::default(), &TargetMode::Ct, 64, 32, 1).unwrap();
        assert_eq!(ds.len(), 3);
        for t in &ds.targets {
            assert!(t.values().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn bone_corner_stays_aligned() {
        let mut g = RealGrid::filled(128, 128, 40.0).unwrap().into_values();
        for r in 70..90 {
            for c in 75..100 {
                g[r * 128 + c] = 700.0;
            }
        }
        let slice = HounsfieldSlice::new(RealGrid::new(128, 128, g).unwrap(), (0.3, 0.3), "block").unwrap();
        let ds = build_dataset(&[slice], &ProbeSpec::default(), &TargetMode::Ct, 64, 32, 1).unwrap();
        let i = ds.origins.iter().position(|o| o.top == 64 && o.left == 64).unwrap();
        let bone = ct_target(&HounsfieldSlice::new(RealGrid::filled(1, 1, 700.0).unwrap(), (1.0, 1.0), "").unwrap())
            .unwrap()
            .get(0, 0);
        assert_eq!(ds.targets[i].get(70 - 64, 75 - 64), bone);
        assert_ne!(ds.targets[i].get(69 - 64, 75 - 64), bone);
        assert_ne!(ds.targets[i].get(70 - 64, 74 - 64), bone);
    }

    #[test]
    fn dataset_is_deterministic_and_aligned() {
        let slices: Vec<_> = (0..2)
            .map(|i| make_phantom(PhantomKind::AbdomenLike, 128, 128, i).unwrap())
            .collect();
        let probe = ProbeSpec::default();
        let mode = TargetMode::Despeckle(TargetKind::Tv.default_despeckle(&probe).unwrap().unwrap());
        let a = build_dataset(&slices, &probe, &mode, 64, 32, 9).unwrap();
        let b = build_dataset(&slices, &probe, &mode, 64, 32, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.target_kind, TargetKind::Tv);
        // Re-derive one patch from its source slice.
        let o = a.origins[7];
        let p = slice_products(&slices[o.slice], &probe, &mode, slice_seed(9, o.slice)).unwrap();
        assert_eq!(a.targets[7], extract_patch(&p.target, o.top, o.left, 64, 64).unwrap());
        assert_eq!(a.inputs[7], p.iq.extract_patch(o.top, o.left, 64, 64).unwrap());
    }

    #[test]
    fn dataset_errors() {
        let probe = ProbeSpec::default();
        assert!(matches!(
            build_dataset(&[water(32, 32)], &probe, &TargetMode::Ct, 64, 64, 1),
            Err(Error::EmptyDataset)
        ));
        assert!(matches!(
            build_dataset(&[water(64, 64)], &probe, &TargetMode::Ct, 30, 64, 1),
            Err(Error::Parameter(_))
        ));
        let coarse = ProbeSpec {
            axial_samples_per_pixel: 2,
            ..probe
        };
        assert!(build_dataset(&[water(64, 64)], &coarse, &TargetMode::Ct, 64, 64, 1).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let ds = build_dataset(
            &[make_phantom(PhantomKind::Layered, 64, 128, 2).unwrap()],
            &ProbeSpec::default(),
            &TargetMode::Ct,
            64,
            32,
            4,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = PairedDataset::load(dir.path()).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.origins, ds.origins);
        for (a, b) in back.targets.iter().zip(&ds.targets) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn split_and_stats_hygiene() {
        let ds = build_dataset(
            &[make_phantom(PhantomKind::Circles, 128, 128, 5).unwrap()],
            &ProbeSpec::default(),
            &TargetMode::Ct,
            64,
            16,
            5,
        )
        .unwrap();
        let (train, val) = ds.split(0.2, 3);
        assert_eq!(train.len() + val.len(), ds.len());
        assert!(val.iter().all(|v| !train.contains(v)));
        assert_eq!(ds.split(0.2, 3), (train.clone(), val.clone()));
        assert_eq!(ds.split(0.0, 3).1.len(), 0);
        let out = train_run(&ds, 0, 0.2);
        let (train1, _) = ds.split(0.2, TrainConfig::default().seed);
        assert_eq!(out.train_indices, train1);
        assert_eq!(out.checkpoint.norm, ds.stats_over(&train1));
    }

    #[test]
    fn batches_wrap_deterministically() {
        let train: Vec<usize> = (10..17).collect();
        let mut seen = Vec::new();
        for it in 0..7 {
            seen.extend(batch_indices(&train, 3, it, 5));
        }
        // 21 draws = exactly three epochs, each a permutation.
        for epoch in seen.chunks(7) {
            let mut e = epoch.to_vec();
            e.sort_unstable();
            assert_eq!(e, train);
        }
        assert_eq!(batch_indices(&train, 3, 4, 5), seen[12..15]);
    }

    fn train_run(ds: &PairedDataset, iterations: u64, val_fraction: f64) -> TrainOutcome {
        let cfg = TrainConfig {
            iterations,
            val_fraction,
            log_every: 10,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        train(NetworkSpec::standard(4), ds, &cfg).unwrap()
    }

    fn small_ct_dataset() -> PairedDataset {
        build_dataset(
            &[make_phantom(PhantomKind::Circles, 64, 64, 8).unwrap()],
            &ProbeSpec::default(),
            &TargetMode::Ct,
            32,
            16,
            8,
        )
        .unwrap()
    }

    #[test]
    fn zero_iterations_is_initialisation() {
        let ds = small_ct_dataset();
        let out = train_run(&ds, 0, 0.0);
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.curve[0].iteration, 0);
        let init = Network::init(NetworkSpec::standard(4), derive(1, "init")).unwrap();
        assert_eq!(out.checkpoint.network, init);
        assert_eq!(out.checkpoint.step, 0);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let ds = small_ct_dataset();
        let a = train_run(&ds, 12, 0.1);
        let b = train_run(&ds, 12, 0.1);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.curve, b.curve);
        assert_ne!(a.checkpoint.network.params(), train_run(&ds, 0, 0.1).checkpoint.network.params());
    }

    #[test]
    fn resume_continues_the_schedule() {
        let ds = small_ct_dataset();
        let cfg = TrainConfig {
            iterations: 6,
            log_every: 3,
            checkpoint_every: 0,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let spec = NetworkSpec::standard(4);
        let full = train(spec.clone(), &ds, &TrainConfig { iterations: 12, ..cfg.clone() }).unwrap();
        let half = train(spec.clone(), &ds, &cfg).unwrap();
        let rest = train_with(spec, &ds, &cfg, Some(half.checkpoint), |_, _| Ok(())).unwrap();
        assert_eq!(rest.checkpoint.step, 12);
        assert_eq!(rest.checkpoint, full.checkpoint);
    }

    #[test]
    fn snapshots_are_emitted() {
        let ds = small_ct_dataset();
        let cfg = TrainConfig {
            iterations: 9,
            log_every: 3,
            checkpoint_every: 4,
            val_fraction: 0.0,
            ..TrainConfig::default()
        };
        let mut steps = Vec::new();
        train_with(NetworkSpec::standard(4), &ds, &cfg, None, |ck, curve| {
            steps.push((ck.step, curve.len()));
            Ok(())
        })
        .unwrap();
        assert_eq!(steps, vec![(4, 2), (8, 3)]);
    }

    #[test]
    fn nan_inputs_abort_with_diagnostic() {
        let ds = small_ct_dataset();
        // A learning rate this large overflows the activations after one step.
        let cfg = TrainConfig {
            iterations: 20,
            lr: 1e200,
            batch_size: ds.len(),
            val_fraction: 0.0,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        match train(NetworkSpec::standard(4), &ds, &cfg) {
            Err(Error::NonFiniteLoss { iteration, batch, .. }) => {
                assert_eq!(iteration, 1);
                assert_eq!(batch.len(), ds.len());
            }
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn constant_targets_are_learned() {
        let ds = build_dataset(&[water(64, 64)], &ProbeSpec::default(), &TargetMode::Ct, 32, 16, 2).unwrap();
        let cfg = TrainConfig {
            iterations: 300,
            lr: 1e-3,
            val_fraction: 0.0,
            checkpoint_every: 0,
            log_every: 100,
            ..TrainConfig::default()
        };
        let out = train(NetworkSpec::standard(4), &ds, &cfg).unwrap();
        let rep = evaluate(&out.checkpoint, &ds).unwrap();
        assert!(rep.mean_psnr_db >= 40.0, "{}", rep.mean_psnr_db);
        let mean = rep.psnr_db.iter().sum::<f64>() / rep.psnr_db.len() as f64;
        assert_eq!(rep.mean_psnr_db, mean);
    }

    #[test]
    fn evaluate_errors() {
        let ds = small_ct_dataset();
        let out = train_run(&ds, 0, 0.0);
        let empty = ds.subset(&[]);
        assert!(matches!(evaluate(&out.checkpoint, &empty), Err(Error::EmptyDataset)));
        assert!(matches!(
            evaluate_estimates(&ds.targets[..1], &ds),
            Err(Error::LengthMismatch { .. })
        ));
        let perfect = evaluate_estimates(&ds.targets, &ds).unwrap();
        assert!(perfect.psnr_db.iter().all(|&p| p == crate::bench::PSNR_CAP_DB));
    }

    #[test]
    fn target_kind_parsing() {
        for k in TargetKind::ALL {
            assert_eq!(k.name().parse::<TargetKind>().unwrap(), k);
        }
        assert!("bogus".parse::<TargetKind>().is_err());
    }
}
