//! End-to-end run: phantoms, one dataset and network per target kind,
//! held-out evaluation, the run-time benchmark and figure panels, all
//! written to one report directory.
//!
//! `table1_runtime.*` carry wall-clock times; every other artifact is a
//! pure function of the scale and seed and is hashed into `run.json`.

use std::fmt::Write as _;
use std::path::Path;

use echoct::bench::run_bench;
use echoct::cnn::ModelCheckpoint;
use echoct::experiment::{
    bench_methods, bench_volume, build_split, check_ct_quality, check_despeckle_quality, check_runtime, display,
    panel_png, test_frame, train_and_evaluate, KindOutcome, Scale, Split,
};
use echoct::io::{read_bytes, write_bytes};
use echoct::seed::sha256_hex;
use echoct::sim::ProbeSpec;
use echoct::trainer::{apply_network, loss_curve_csv, TargetKind};
use echoct::RealGrid;
use serde_json::json;

use crate::manifest::RunManifest;
use crate::{CliResult, Failure};

pub const TIMING_FILES: [&str; 2] = ["table1_runtime.csv", "table1_runtime.txt"];
pub const CHECKS_FILE: &str = "acceptance.txt";

pub fn run(scale: Scale, seed: u64, out: &Path) -> CliResult<()> {
    let preset = scale.preset();
    let probe = ProbeSpec::default();
    std::fs::create_dir_all(out).map_err(|e| echoct::Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut artifacts: Vec<String> = Vec::new();
    let mut outcomes: Vec<KindOutcome> = Vec::new();

    for kind in TargetKind::ALL {
        log::info!("[{kind}] building datasets");
        let split = build_split(kind, &preset, &probe, seed)?;
        log::info!(
            "[{kind}] training on {} pairs, testing on {}",
            split.train.len(),
            split.test.len()
        );
        let outcome = train_and_evaluate(kind, &split, &preset, &probe, seed)?;
        log::info!(
            "[{kind}] CNN {:.2} dB, {} {:.2} dB",
            outcome.cnn.mean_psnr_db,
            outcome.baseline_name,
            outcome.baseline.mean_psnr_db
        );
        let model_dir = format!("models/{kind}");
        outcome.training.best.save(&out.join(&model_dir))?;
        write_bytes(
            &out.join(format!("{model_dir}/loss.csv")),
            loss_curve_csv(&outcome.training.curve).as_bytes(),
        )?;
        for f in ["manifest.json", "weights.f32", "adam_m.f32", "adam_v.f32", "loss.csv"] {
            artifacts.push(format!("{model_dir}/{f}"));
        }
        let fig = figure(kind, &split, &probe, &outcome.training.best)?;
        write_bytes(&out.join(&fig.0), &fig.1)?;
        artifacts.push(fig.0);
        outcomes.push(outcome);
    }

    write_bytes(&out.join("table2_psnr.csv"), table2(&outcomes).as_bytes())?;
    artifacts.push("table2_psnr.csv".into());

    let find = |k: TargetKind| outcomes.iter().find(|o| o.kind == k).expect("every kind trained");
    let (tv, ct) = (find(TargetKind::Tv), find(TargetKind::Ct));
    let mut checks = vec![
        check_despeckle_quality(tv.cnn.mean_psnr_db, tv.baseline.mean_psnr_db),
        check_ct_quality(ct.cnn.mean_psnr_db, ct.baseline.mean_psnr_db),
    ];
    let mut text = format!(
        "scale {scale}, seed {seed}, thresholds {}\n",
        if preset.assert_thresholds { "enforced" } else { "reported only" }
    );
    for c in &checks {
        let _ = writeln!(text, "{c}");
    }
    write_bytes(&out.join(CHECKS_FILE), text.as_bytes())?;
    artifacts.push(CHECKS_FILE.into());

    log::info!("benchmarking {} frames", preset.bench_frames);
    let volume = bench_volume(&preset, &probe, seed)?;
    let networks: Vec<(TargetKind, ModelCheckpoint)> =
        outcomes.iter().map(|o| (o.kind, o.training.best.clone())).collect();
    let report = run_bench(&volume, &bench_methods(&probe, &networks)?, preset.bench_repeats)?;
    let runtime = check_runtime(&report, "cnn-tv")?;
    write_bytes(&out.join(TIMING_FILES[0]), report.to_csv()?.as_bytes())?;
    write_bytes(
        &out.join(TIMING_FILES[1]),
        format!("{}\n{runtime}\n", report.to_table()).as_bytes(),
    )?;
    print!("{}", report.to_table());
    checks.push(runtime);

    let mut hashes = serde_json::Map::new();
    for a in &artifacts {
        hashes.insert(a.clone(), json!(sha256_hex(&read_bytes(&out.join(a))?)));
    }
    let train_configs: serde_json::Map<String, serde_json::Value> = TargetKind::ALL
        .iter()
        .map(|k| (k.name().to_string(), json!(preset.train_config(*k, seed))))
        .collect();
    RunManifest::new(
        "reproduce",
        seed,
        json!({
            "scale": scale, "preset": preset, "probe": probe, "train": train_configs,
            "artifacts": hashes, "timing_files": TIMING_FILES,
        }),
    )
    .write_for_dir(out)?;

    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    if preset.assert_thresholds && !failed.is_empty() {
        return Err(Failure::Assertion(failed));
    }
    Ok(())
}

fn table2(outcomes: &[KindOutcome]) -> String {
    let mut s = String::from("method,reference,psnr_db,baseline,baseline_psnr_db\n");
    for o in outcomes {
        let _ = writeln!(
            s,
            "cnn-{},{},{:.4},{},{:.4}",
            o.kind,
            o.kind,
            o.cnn.mean_psnr_db,
            o.baseline_name,
            o.baseline.mean_psnr_db
        );
    }
    s
}

/// Panel for the first held-out slice: input | conventional | CNN for
/// despeckling kinds, input | TV B-mode | CNN | CT for the CT network.
fn figure(kind: TargetKind, split: &Split, probe: &ProbeSpec, ck: &ModelCheckpoint) -> CliResult<(String, Vec<u8>)> {
    let frame = test_frame(kind, split, probe, 0)?;
    let cnn = apply_network(ck, std::slice::from_ref(&frame.iq), false)?.remove(0);
    let env = RealGrid::from_fn(frame.iq.rows(), frame.iq.cols(), |r, c| {
        let i = r * frame.iq.cols() + c;
        frame.iq.re()[i].hypot(frame.iq.im()[i])
    })?;
    let input = display(&env)?;
    if kind == TargetKind::Ct {
        let conventional = display(&test_frame(TargetKind::Tv, split, probe, 0)?.target)?;
        let png = panel_png(&[
            (&input, 0.0, 1.0),
            (&conventional, 0.0, 1.0),
            (&cnn, 0.0, 1.0),
            (&frame.target, 0.0, 1.0),
        ])?;
        Ok(("fig2_ct.png".into(), png))
    } else {
        let (lo, hi) = (frame.target.min(), frame.target.max());
        let png = panel_png(&[(&input, 0.0, 1.0), (&frame.target, lo, hi), (&cnn, lo, hi)])?;
        Ok((format!("fig1_{kind}.png"), png))
    }
}
