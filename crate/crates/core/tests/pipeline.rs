//! Cross-module runs: phantom to despeckled frame, dataset to trained
//! network, and on-disk round trips of both.

use echoct::acoustic::hu_to_acoustic;
use echoct::cnn::{ModelCheckpoint, NetworkSpec};
use echoct::demod::{demodulate, envelope};
use echoct::experiment::{phantom_set, target_mode};
use echoct::homomorphic::despeckle;
use echoct::phantom::{make_phantom, PhantomKind};
use echoct::sim::{simulate_rf, ProbeSpec};
use echoct::trainer::{apply_network, build_dataset, evaluate, train, PairedDataset, TargetKind, TrainConfig};
use echoct::RealGrid;

fn total_variation(g: &RealGrid) -> f64 {
    let (rows, cols) = g.dims();
    let mut tv = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            if r + 1 < rows {
                tv += (g.get(r + 1, c) - g.get(r, c)).abs();
            }
            if c + 1 < cols {
                tv += (g.get(r, c + 1) - g.get(r, c)).abs();
            }
        }
    }
    tv
}

fn tiny_dataset(kind: TargetKind, seed: u64) -> PairedDataset {
    let probe = ProbeSpec::default();
    let slices = phantom_set("train", 2, 48, seed).unwrap();
    build_dataset(&slices, &probe, &target_mode(kind, &probe).unwrap(), 16, 16, seed).unwrap()
}

#[test]
fn despeckled_frame_is_smoother_than_envelope() {
    let probe = ProbeSpec::default();
    let slice = make_phantom(PhantomKind::Layered, 64, 64, 11).unwrap();
    let scan = simulate_rf(&hu_to_acoustic(&slice), &probe, 12).unwrap();
    let iq = demodulate(&scan.rf, probe.carrier_cycles_per_sample).unwrap();
    let cfg = TargetKind::Tv.default_despeckle(&probe).unwrap().unwrap();
    let out = despeckle(&iq, &cfg).unwrap();
    let env = envelope(&iq);
    assert_eq!(out.dims(), env.dims());
    assert!(out.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    // Compare at matched mean so the ratio reflects texture, not gain.
    let scale = |g: &RealGrid| g.values().iter().sum::<f64>() / g.values().len() as f64;
    let rough_out = total_variation(&out) / scale(&out);
    let rough_env = total_variation(&env) / scale(&env);
    assert!(rough_out < 0.8 * rough_env, "{rough_out} vs {rough_env}");
}

#[test]
fn datasets_are_seeded() {
    let a = tiny_dataset(TargetKind::Tv, 4);
    let b = tiny_dataset(TargetKind::Tv, 4);
    let c = tiny_dataset(TargetKind::Tv, 5);
    assert_eq!(a, b);
    assert_eq!(a.len(), 2 * 9);
    assert_ne!(a.inputs, c.inputs);
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(TargetKind::Ct, 2);
    ds.save(dir.path()).unwrap();
    let once = PairedDataset::load(dir.path()).unwrap();
    assert_eq!(once.len(), ds.len());
    assert_eq!(once.target_kind, TargetKind::Ct);
    assert_eq!(once.origins, ds.origins);
    for (x, y) in once.targets.iter().zip(&ds.targets) {
        for (p, q) in x.values().iter().zip(y.values()) {
            assert!((p - q).abs() <= 1e-6 * q.abs().max(1.0));
        }
    }
    // Stored precision is f32; a second pass must be lossless.
    let again = tempfile::tempdir().unwrap();
    once.save(again.path()).unwrap();
    assert_eq!(PairedDataset::load(again.path()).unwrap(), once);
}

#[test]
fn short_training_lowers_loss_and_survives_reload() {
    let ds = tiny_dataset(TargetKind::Tv, 8);
    let cfg = TrainConfig {
        batch_size: 4,
        iterations: 40,
        lr: 1e-3,
        seed: 8,
        checkpoint_every: 0,
        log_every: 20,
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let outcome = train(NetworkSpec::standard(4), &ds, &cfg).unwrap();
    let first = outcome.curve.first().unwrap().train_mse;
    let last = outcome.curve.last().unwrap().train_mse;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(outcome.checkpoint.step, 40);

    let dir = tempfile::tempdir().unwrap();
    outcome.checkpoint.save(dir.path()).unwrap();
    let loaded = ModelCheckpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.step, 40);
    let frames = &ds.inputs[..2];
    let before = apply_network(&outcome.checkpoint, frames, false).unwrap();
    let after = apply_network(&loaded, frames, false).unwrap();
    for (x, y) in before.iter().zip(&after) {
        for (p, q) in x.values().iter().zip(y.values()) {
            assert!((p - q).abs() <= 1e-4 * q.abs().max(1.0), "{p} vs {q}");
        }
    }
    let report = evaluate(&loaded, &ds).unwrap();
    assert_eq!(report.psnr_db.len(), ds.len());
    assert!(report.mean_psnr_db.is_finite());
}
