//! Scale presets and the experiment stages shared by the `reproduce`
//! pipeline and the acceptance checks: phantom sets, per-target train/test
//! splits, training with held-out evaluation, the conventional baselines,
//! the benchmark volume and figure panels.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::hu_to_acoustic;
use crate::bench::{BenchMethod, BenchReport};
use crate::cnn::{ModelCheckpoint, NetworkSpec, DEFAULT_WIDTH};
use crate::demod::{bmode, demodulate, IqImage};
use crate::dicom::HounsfieldSlice;
use crate::error::{Error, Result};
use crate::grid::{extract_patch, RealGrid};
use crate::io::encode_png16;
use crate::phantom::{make_phantom, PhantomKind};
use crate::seed::derive;
use crate::sim::{simulate_rf, ProbeSpec};
use crate::trainer::{
    build_dataset, evaluate, evaluate_estimates, slice_products, slice_seed, train, EvalReport, PairedDataset,
    SliceProducts, TargetKind, TargetMode, TrainConfig, TrainOutcome,
};

/// Log-compression range for displayed (B-mode) ultrasound images.
pub const DISPLAY_DYNAMIC_RANGE_DB: f64 = 60.0;
pub const MIN_CNN_TV_PSNR_DB: f64 = 28.0;
pub const MIN_GAIN_OVER_RAW_DB: f64 = 6.0;
pub const MIN_CT_GAIN_DB: f64 = 5.0;
pub const MIN_SPEEDUP: f64 = 5.0;
const PANEL_GAP_PX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Tiny,
    Small,
    Full,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Tiny => "tiny",
            Scale::Small => "small",
            Scale::Full => "full",
        }
    }

    pub fn preset(self) -> ScalePreset {
        match self {
            Scale::Tiny => ScalePreset {
                scale: self,
                phantom_size: 96,
                train_phantoms: 3,
                ct_train_phantoms: 3,
                test_phantoms: 1,
                patch: 32,
                stride: 32,
                test_stride: 32,
                test_pairs: 9,
                width: 4,
                despeckle_iterations: 20,
                ct_iterations: 20,
                lr: 1e-3,
                batch_size: 4,
                log_every: 10,
                bench_frames: 2,
                bench_size: 64,
                bench_repeats: 3,
                assert_thresholds: false,
            },
            Scale::Small => ScalePreset {
                scale: self,
                phantom_size: 256,
                train_phantoms: 20,
                ct_train_phantoms: 20,
                test_phantoms: 4,
                patch: 64,
                stride: 32,
                test_stride: 64,
                test_pairs: 50,
                width: DEFAULT_WIDTH,
                despeckle_iterations: 2000,
                ct_iterations: 2000,
                lr: 1e-3,
                batch_size: 6,
                log_every: 250,
                bench_frames: 64,
                bench_size: 256,
                bench_repeats: 3,
                assert_thresholds: true,
            },
            // 168 and 283 phantoms give 8232 and 13867 patches.
            Scale::Full => ScalePreset {
                scale: self,
                phantom_size: 256,
                train_phantoms: 168,
                ct_train_phantoms: 283,
                test_phantoms: 4,
                patch: 64,
                stride: 32,
                test_stride: 64,
                test_pairs: 50,
                width: 32,
                despeckle_iterations: 50_000,
                ct_iterations: 160_000,
                lr: 1e-4,
                batch_size: 6,
                log_every: 1000,
                bench_frames: 64,
                bench_size: 256,
                bench_repeats: 5,
                assert_thresholds: true,
            },
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Scale::Tiny),
            "small" => Ok(Scale::Small),
            "full" => Ok(Scale::Full),
            other => Err(Error::Parameter(format!("unknown scale {other:?} (tiny, small, full)"))),
        }
    }
}

/// Dataset, training and benchmark sizes for one scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePreset {
    pub scale: Scale,
    pub phantom_size: usize,
    pub train_phantoms: usize,
    pub ct_train_phantoms: usize,
    pub test_phantoms: usize,
    pub patch: usize,
    pub stride: usize,
    pub test_stride: usize,
    /// Held-out pairs kept (the first ones in tiling order).
    pub test_pairs: usize,
    pub width: usize,
    pub despeckle_iterations: u64,
    pub ct_iterations: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub log_every: u64,
    pub bench_frames: usize,
    pub bench_size: usize,
    pub bench_repeats: usize,
    /// Whether `reproduce` enforces the quality and run-time thresholds.
    pub assert_thresholds: bool,
}

impl ScalePreset {
    pub fn train_config(&self, kind: TargetKind, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            iterations: if kind == TargetKind::Ct {
                self.ct_iterations
            } else {
                self.despeckle_iterations
            },
            lr: self.lr,
            seed: derive(seed, &format!("train-{kind}")),
            checkpoint_every: 0,
            log_every: self.log_every,
            ..TrainConfig::default()
        }
    }
}

/// `count` phantoms cycling through the phantom kinds. Index `i` always
/// gets the same phantom, so a smaller set is a prefix of a larger one.
pub fn phantom_set(role: &str, count: usize, size: usize, seed: u64) -> Result<Vec<HounsfieldSlice>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let kind = PhantomKind::ALL[i % PhantomKind::ALL.len()];
            make_phantom(kind, size, size, derive(seed, &format!("{role}-phantom-{i}")))
        })
        .collect()
}

pub fn target_mode(kind: TargetKind, probe: &ProbeSpec) -> Result<TargetMode> {
    Ok(match kind.default_despeckle(probe)? {
        Some(cfg) => TargetMode::Despeckle(cfg),
        None => TargetMode::Ct,
    })
}

/// Training pairs and held-out pairs from disjoint phantom sets.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: PairedDataset,
    pub test: PairedDataset,
    pub test_slices: Vec<HounsfieldSlice>,
}

pub fn build_split(kind: TargetKind, preset: &ScalePreset, probe: &ProbeSpec, seed: u64) -> Result<Split> {
    let mode = target_mode(kind, probe)?;
    let n = if kind == TargetKind::Ct {
        preset.ct_train_phantoms
    } else {
        preset.train_phantoms
    };
    let size = preset.phantom_size;
    let train_slices = phantom_set("train", n, size, seed)?;
    let test_slices = phantom_set("test", preset.test_phantoms, size, seed)?;
    let train = build_dataset(&train_slices, probe, &mode, preset.patch, preset.stride, derive(seed, "train-scan"))?;
    let test = build_dataset(
        &test_slices,
        probe,
        &mode,
        preset.patch,
        preset.test_stride,
        derive(seed, "test-scan"),
    )?;
    let keep: Vec<usize> = (0..test.len().min(preset.test_pairs)).collect();
    Ok(Split {
        train,
        test: test.subset(&keep),
        test_slices,
    })
}

/// Full-frame products of held-out slice `index`, scanned exactly as its
/// test patches were.
pub fn test_frame(kind: TargetKind, split: &Split, probe: &ProbeSpec, index: usize) -> Result<SliceProducts> {
    let slice = split
        .test_slices
        .get(index)
        .ok_or_else(|| Error::Bounds(format!("test slice {index} of {}", split.test_slices.len())))?;
    slice_products(slice, probe, &target_mode(kind, probe)?, slice_seed(split.test.seed, index))
}

/// B-mode display image in `[0, 1]`.
pub fn display(envelope: &RealGrid) -> Result<RealGrid> {
    bmode(&envelope.map(|v| v.max(0.0))?, DISPLAY_DYNAMIC_RANGE_DB)
}

/// Cut each pair's patch out of its full frame.
pub fn patches_at(frames: &[RealGrid], data: &PairedDataset) -> Result<Vec<RealGrid>> {
    data.origins
        .iter()
        .map(|o| {
            let frame = frames
                .get(o.slice)
                .ok_or_else(|| Error::Bounds(format!("no frame for slice {}", o.slice)))?;
            extract_patch(frame, o.top, o.left, data.patch, data.patch)
        })
        .collect()
}

/// Envelope of each input pair, the "no processing" estimate.
pub fn raw_envelope_estimates(data: &PairedDataset) -> Result<Vec<RealGrid>> {
    data.inputs
        .iter()
        .map(|g| {
            let vals = g.re().iter().zip(g.im()).map(|(r, i)| r.hypot(*i)).collect();
            RealGrid::new(g.rows(), g.cols(), vals)
        })
        .collect()
}

/// TV-despeckled ultrasound shown as a B-mode image, per test patch: the
/// conventional image a CT-quality network is compared with.
pub fn conventional_ct_estimates(split: &Split, probe: &ProbeSpec) -> Result<Vec<RealGrid>> {
    let frames: Vec<RealGrid> = (0..split.test_slices.len())
        .into_par_iter()
        .map(|i| display(&test_frame(TargetKind::Tv, split, probe, i)?.target))
        .collect::<Result<_>>()?;
    patches_at(&frames, &split.test)
}

#[derive(Debug, Clone)]
pub struct KindOutcome {
    pub kind: TargetKind,
    pub training: TrainOutcome,
    /// Held-out PSNR of the best checkpoint.
    pub cnn: EvalReport,
    pub baseline_name: &'static str,
    pub baseline: EvalReport,
}

/// Train one network on `split` and score it and its baseline on the
/// held-out pairs: raw envelope for despeckling targets, TV B-mode for CT.
pub fn train_and_evaluate(
    kind: TargetKind,
    split: &Split,
    preset: &ScalePreset,
    probe: &ProbeSpec,
    seed: u64,
) -> Result<KindOutcome> {
    let cfg = preset.train_config(kind, seed);
    let training = train(NetworkSpec::standard(preset.width), &split.train, &cfg)?;
    let cnn = evaluate(&training.best, &split.test)?;
    let (baseline_name, estimates) = if kind == TargetKind::Ct {
        ("tv-bmode", conventional_ct_estimates(split, probe)?)
    } else {
        ("raw-envelope", raw_envelope_estimates(&split.test)?)
    };
    let baseline = evaluate_estimates(&estimates, &split.test)?;
    Ok(KindOutcome {
        kind,
        training,
        cnn,
        baseline_name,
        baseline,
    })
}

/// Simulated IQ frames for the run-time benchmark.
pub fn bench_volume(preset: &ScalePreset, probe: &ProbeSpec, seed: u64) -> Result<Vec<IqImage>> {
    let slices = phantom_set("bench", preset.bench_frames, preset.bench_size, seed)?;
    let scan_root = derive(seed, "bench-scan");
    slices
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let scan = simulate_rf(&hu_to_acoustic(s), probe, slice_seed(scan_root, i))?;
            demodulate(&scan.rf, probe.carrier_cycles_per_sample)
        })
        .collect()
}

/// Conventional pipelines for TV, NLM and BM3D, then one `cnn-<kind>` row
/// per checkpoint whose PSNR column compares against that conventional row.
pub fn bench_methods(probe: &ProbeSpec, networks: &[(TargetKind, ModelCheckpoint)]) -> Result<Vec<BenchMethod>> {
    let mut methods = Vec::new();
    for kind in [TargetKind::Tv, TargetKind::Nlm, TargetKind::Bm3d] {
        let config = kind.default_despeckle(probe)?.expect("despeckling kind");
        methods.push(BenchMethod::Despeckle {
            name: kind.name().to_string(),
            config,
        });
    }
    for (kind, ck) in networks {
        let reference = (*kind != TargetKind::Ct).then(|| kind.name().to_string());
        methods.push(BenchMethod::Cnn {
            name: format!("cnn-{kind}"),
            checkpoint: Some(ck.clone()),
            reference,
        });
    }
    Ok(methods)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

pub fn check_despeckle_quality(cnn_db: f64, raw_db: f64) -> Check {
    let passed = cnn_db >= MIN_CNN_TV_PSNR_DB && cnn_db - raw_db >= MIN_GAIN_OVER_RAW_DB;
    Check {
        name: "cnn-tv quality".into(),
        passed,
        detail: format!(
            "CNN {cnn_db:.2} dB (need >= {MIN_CNN_TV_PSNR_DB}), raw envelope {raw_db:.2} dB, gain {:.2} dB (need >= {MIN_GAIN_OVER_RAW_DB})",
            cnn_db - raw_db
        ),
    }
}

pub fn check_ct_quality(cnn_db: f64, conventional_db: f64) -> Check {
    let gain = cnn_db - conventional_db;
    Check {
        name: "cnn-ct quality".into(),
        passed: gain >= MIN_CT_GAIN_DB,
        detail: format!(
            "CNN {cnn_db:.2} dB, TV B-mode {conventional_db:.2} dB, gain {gain:.2} dB (need >= {MIN_CT_GAIN_DB})"
        ),
    }
}

/// `cnn < tv < min(nlm, bm3d)` and at least [`MIN_SPEEDUP`] against both
/// NLM and BM3D.
pub fn check_runtime(report: &BenchReport, cnn: &str) -> Result<Check> {
    let (c, tv, nlm, bm3d) = (
        report.seconds(cnn)?,
        report.seconds("tv")?,
        report.seconds("nlm")?,
        report.seconds("bm3d")?,
    );
    let passed = c < tv && tv < nlm.min(bm3d) && nlm / c >= MIN_SPEEDUP && bm3d / c >= MIN_SPEEDUP;
    Ok(Check {
        name: "run-time ordering".into(),
        passed,
        detail: format!(
            "{cnn} {c:.3} s, tv {tv:.3} s, nlm {nlm:.3} s, bm3d {bm3d:.3} s; speed-up x{:.1} vs nlm, x{:.1} vs bm3d (need >= {MIN_SPEEDUP})",
            nlm / c,
            bm3d / c
        ),
    })
}

/// Side-by-side 16-bit PNG. Each tile is `(image, lo, hi)`, rescaled from
/// `[lo, hi]`; tiles must share a height.
pub fn panel_png(tiles: &[(&RealGrid, f64, f64)]) -> Result<Vec<u8>> {
    let Some((first, _, _)) = tiles.first() else {
        return Err(Error::Parameter("a panel needs at least one tile".into()));
    };
    let h = first.rows();
    if tiles.iter().any(|(g, _, _)| g.rows() != h) {
        return Err(Error::Shape("panel tiles differ in height".into()));
    }
    let w = tiles.iter().map(|(g, _, _)| g.cols()).sum::<usize>() + PANEL_GAP_PX * (tiles.len() - 1);
    let mut px = vec![0u16; w * h];
    let mut left = 0;
    for (g, lo, hi) in tiles {
        let tile = crate::io::to_u16_display(g, *lo, *hi);
        for r in 0..h {
            px[r * w + left..r * w + left + g.cols()].copy_from_slice(&tile[r * g.cols()..(r + 1) * g.cols()]);
        }
        left += g.cols() + PANEL_GAP_PX;
    }
    encode_png16(w, h, &px)
}
