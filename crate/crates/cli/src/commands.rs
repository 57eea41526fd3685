//! Subcommand bodies. Each checks its inputs exist, does its work, writes
//! under `-o` and leaves a run manifest there.

use std::fs;
use std::path::{Path, PathBuf};

use echoct::acoustic::{hu_to_acoustic, AcousticMap};
use echoct::bench::{run_bench, BenchMethod};
use echoct::cnn::{ModelCheckpoint, NetworkSpec, MANIFEST};
use echoct::demod::{demodulate, IqImage};
use echoct::denoise::{Bm3dParams, Denoiser, NlmParams, TvParams};
use echoct::dicom::{ingest_file, HounsfieldSlice};
use echoct::experiment::{bench_volume, phantom_set};
use echoct::homomorphic::{despeckle, DespeckleConfig};
use echoct::io::{read_c64, read_json, read_pfm, write_bytes, write_c64, write_json, write_pfm};
use echoct::phantom::{make_phantom, PhantomKind, PHANTOM_SPACING_MM};
use echoct::seed::derive;
use echoct::sim::{simulate_rf, ProbeSpec};
use echoct::trainer::{apply_network, build_dataset, loss_curve_csv, train_with, PairedDataset, TargetKind, TrainConfig};
use echoct::{Error, RealGrid};
use serde_json::json;

use crate::manifest::{manifest_of, RunManifest};
use crate::{require, Cli, CliResult, Command, Failure};

const DEFAULT_CARRIER: f64 = 0.25;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Ingest { input, meta } => ingest(cli, input, meta.as_deref()),
        Command::MakePhantom { kind, size, rows, cols } => {
            make_phantom_cmd(cli, kind, rows.unwrap_or(*size), cols.unwrap_or(*size))
        }
        Command::AcousticMap { input, spacing_mm } => acoustic_map(cli, input, *spacing_mm),
        Command::Simulate { map, probe } => simulate(cli, map, probe.as_deref()),
        Command::Demod { input, carrier } => demod(cli, input, *carrier),
        Command::Despeckle { input, config } => despeckle_cmd(cli, input, config.as_deref()),
        Command::Denoise {
            input,
            kind,
            sigma,
            lambda,
            iters,
            h,
        } => {
            let denoiser = match kind.as_str() {
                "tv" => Denoiser::Tv(TvParams::new(*lambda, *iters)),
                "nlm" => Denoiser::Nlm(NlmParams::new(*h)),
                "bm3d" => Denoiser::Bm3d(Bm3dParams {
                    sigma: *sigma,
                    ..Bm3dParams::default()
                }),
                other => return Err(Failure::Usage(format!("unknown denoiser {other:?} (tv, nlm, bm3d)"))),
            };
            denoise(cli, input, denoiser)
        }
        Command::BuildDataset {
            phantoms,
            target,
            size,
            patch,
            stride,
            probe,
        } => build_dataset_cmd(cli, *phantoms, *target, *size, *patch, *stride, probe.as_deref()),
        Command::Train {
            dataset,
            iters,
            lr,
            batch,
            width,
            checkpoint_every,
            log_every,
            val_fraction,
            resume,
        } => {
            let cfg = TrainConfig {
                batch_size: *batch,
                iterations: *iters,
                lr: *lr,
                seed: cli.seed,
                checkpoint_every: *checkpoint_every,
                log_every: *log_every,
                val_fraction: *val_fraction,
                ..TrainConfig::default()
            };
            train_cmd(cli, dataset, cfg, *width, resume.as_deref())
        }
        Command::Infer { ckpt, input, exact } => infer(cli, ckpt, input, *exact),
        Command::Bench {
            volume,
            methods,
            ckpt,
            reference,
            repeats,
        } => bench(cli, volume.as_deref(), methods, ckpt.as_deref(), reference.clone(), *repeats),
        Command::Reproduce => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            crate::reproduce::run(cli.scale, cli.seed, &out)
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Failure::Core(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn load_probe(path: Option<&Path>) -> CliResult<ProbeSpec> {
    let probe = match path {
        Some(p) => {
            require(p)?;
            read_json(p)?
        }
        None => ProbeSpec::default(),
    };
    probe.validate()?;
    Ok(probe)
}

/// Spacing recorded by whichever command produced `input`.
fn recorded_spacing(input: &Path) -> Option<(f64, f64)> {
    let m = manifest_of(input)?;
    serde_json::from_value(m.config.get("spacing_mm")?.clone()).ok()
}

fn ingest(cli: &Cli, input: &Path, meta: Option<&Path>) -> CliResult<()> {
    require(input)?;
    let out = cli.out()?;
    let (header, slice) = ingest_file(input)?;
    write_pfm(out, &slice.grid)?;
    if let Some(meta) = meta {
        write_json(
            meta,
            &json!({ "header": header, "source_id": slice.source_id, "pixel_spacing_mm": slice.pixel_spacing_mm }),
        )?;
    }
    RunManifest::new("ingest", cli.seed, json!({ "spacing_mm": slice.pixel_spacing_mm, "source_id": slice.source_id }))
        .input(input)?
        .write_for_file(out)?;
    Ok(())
}

fn make_phantom_cmd(cli: &Cli, kind: &str, rows: usize, cols: usize) -> CliResult<()> {
    let out = cli.out()?;
    let kind: PhantomKind = kind.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let slice = make_phantom(kind, rows, cols, cli.seed)?;
    write_pfm(out, &slice.grid)?;
    RunManifest::new(
        "make-phantom",
        cli.seed,
        json!({ "kind": kind, "rows": rows, "cols": cols, "spacing_mm": slice.pixel_spacing_mm }),
    )
    .write_for_file(out)?;
    Ok(())
}

fn acoustic_map(cli: &Cli, input: &Path, spacing: Option<f64>) -> CliResult<()> {
    require(input)?;
    let out = cli.out()?;
    let spacing_mm = spacing
        .map(|s| (s, s))
        .or_else(|| recorded_spacing(input))
        .unwrap_or(PHANTOM_SPACING_MM);
    let slice = HounsfieldSlice::new(read_pfm(input)?, spacing_mm, input.display().to_string())?;
    let map = hu_to_acoustic(&slice);
    create_dir(out)?;
    for (name, grid) in map.named_grids() {
        write_pfm(&out.join(format!("{name}.pfm")), grid)?;
    }
    RunManifest::new("acoustic-map", cli.seed, json!({ "spacing_mm": spacing_mm }))
        .input(input)?
        .write_for_dir(out)?;
    Ok(())
}

fn read_map(dir: &Path) -> CliResult<AcousticMap> {
    let spacing = recorded_spacing(dir).unwrap_or(PHANTOM_SPACING_MM);
    let load = |name: &str| -> CliResult<RealGrid> {
        let p = dir.join(format!("{name}.pfm"));
        require(&p)?;
        Ok(read_pfm(&p)?.with_spacing(Some(spacing)))
    };
    let map = AcousticMap {
        density: load("density")?,
        speed: load("speed")?,
        impedance: load("impedance")?,
        attenuation: load("attenuation")?,
        echogenicity: load("echogenicity")?,
    };
    map.validate()?;
    Ok(map)
}

fn simulate(cli: &Cli, map_dir: &Path, probe: Option<&Path>) -> CliResult<()> {
    require(map_dir)?;
    let out = cli.out()?;
    let probe = load_probe(probe)?;
    let map = read_map(map_dir)?;
    let scan = simulate_rf(&map, &probe, cli.seed)?;
    create_dir(out)?;
    write_pfm(&out.join("reflectivity.pfm"), &scan.reflectivity)?;
    write_pfm(&out.join("transmission.pfm"), &scan.transmission)?;
    write_pfm(&out.join("rf.pfm"), &scan.rf)?;
    RunManifest::new(
        "simulate",
        cli.seed,
        json!({ "probe": probe, "spacing_mm": map.spacing_mm() }),
    )
    .input(map_dir)?
    .write_for_dir(out)?;
    Ok(())
}

fn demod(cli: &Cli, input: &Path, carrier: f64) -> CliResult<()> {
    require(input)?;
    let out = cli.out()?;
    let rf = read_pfm(input)?;
    let iq = demodulate(&rf, carrier)?;
    write_c64(out, &iq.grid, Some(carrier))?;
    RunManifest::new("demod", cli.seed, json!({ "carrier_cycles_per_sample": carrier }))
        .input(input)?
        .write_for_file(out)?;
    Ok(())
}

fn read_iq(path: &Path) -> CliResult<IqImage> {
    require(path)?;
    let (grid, meta) = read_c64(path)?;
    Ok(IqImage::new(grid, meta.carrier_cycles_per_sample.unwrap_or(DEFAULT_CARRIER))?)
}

fn despeckle_cmd(cli: &Cli, input: &Path, config: Option<&Path>) -> CliResult<()> {
    let iq = read_iq(input)?;
    let out = cli.out()?;
    let cfg: DespeckleConfig = match config {
        Some(p) => {
            require(p)?;
            read_json(p)?
        }
        None => TargetKind::Tv
            .default_despeckle(&ProbeSpec::default())?
            .expect("tv is a despeckling target"),
    };
    let env = despeckle(&iq, &cfg)?;
    write_pfm(out, &env)?;
    let mut m = RunManifest::new("despeckle", cli.seed, serde_json::to_value(&cfg).map_err(Error::from)?).input(input)?;
    if let Some(p) = config {
        m = m.input(p)?;
    }
    m.write_for_file(out)?;
    Ok(())
}

fn denoise(cli: &Cli, input: &Path, denoiser: Denoiser) -> CliResult<()> {
    require(input)?;
    let out = cli.out()?;
    denoiser.validate()?;
    let result = denoiser.apply(&read_pfm(input)?)?;
    write_pfm(out, &result)?;
    RunManifest::new("denoise", cli.seed, serde_json::to_value(&denoiser).map_err(Error::from)?)
        .input(input)?
        .write_for_file(out)?;
    Ok(())
}

fn build_dataset_cmd(
    cli: &Cli,
    phantoms: usize,
    target: TargetKind,
    size: usize,
    patch: usize,
    stride: usize,
    probe_path: Option<&Path>,
) -> CliResult<()> {
    let out = cli.out()?;
    let probe = load_probe(probe_path)?;
    let mode = echoct::experiment::target_mode(target, &probe)?;
    let slices = phantom_set("train", phantoms, size, cli.seed)?;
    log::info!("simulating {phantoms} phantoms for {target} targets");
    let ds = build_dataset(&slices, &probe, &mode, patch, stride, derive(cli.seed, "train-scan"))?;
    ds.save(out)?;
    log::info!("{} pairs written to {}", ds.len(), out.display());
    let mut m = RunManifest::new(
        "build-dataset",
        cli.seed,
        json!({
            "phantoms": phantoms, "target": target, "size": size, "patch": patch,
            "stride": stride, "probe": probe, "pairs": ds.len(),
        }),
    );
    if let Some(p) = probe_path {
        m = m.input(p)?;
    }
    m.write_for_dir(out)?;
    Ok(())
}

/// A checkpoint directory, or a training output holding `best/`.
fn resolve_checkpoint(path: &Path, prefer: &str) -> CliResult<PathBuf> {
    require(path)?;
    if path.join(MANIFEST).exists() {
        return Ok(path.to_path_buf());
    }
    let sub = path.join(prefer);
    if sub.join(MANIFEST).exists() {
        return Ok(sub);
    }
    Err(Failure::NotFound(path.join(MANIFEST)))
}

fn train_cmd(cli: &Cli, dataset: &Path, cfg: TrainConfig, width: usize, resume: Option<&Path>) -> CliResult<()> {
    require(dataset)?;
    let out = cli.out()?.to_path_buf();
    let data = PairedDataset::load(dataset)?;
    let resume_ck = match resume {
        Some(p) => Some(ModelCheckpoint::load(&resolve_checkpoint(p, "last")?)?),
        None => None,
    };
    let spec = match &resume_ck {
        Some(ck) => ck.network.spec().clone(),
        None => NetworkSpec::standard(width),
    };
    create_dir(&out)?;
    log::info!(
        "training on {} pairs for {} iterations ({} parameters)",
        data.len(),
        cfg.iterations,
        spec.param_len()
    );
    let outcome = train_with(spec.clone(), &data, &cfg, resume_ck, |ck, curve| {
        let dir = out.join(format!("step-{}", ck.step));
        ck.save(&dir)?;
        write_bytes(&dir.join("loss.csv"), loss_curve_csv(curve).as_bytes())
    })?;
    outcome.checkpoint.save(&out.join("last"))?;
    outcome.best.save(&out.join("best"))?;
    write_bytes(&out.join("loss.csv"), loss_curve_csv(&outcome.curve).as_bytes())?;
    let mut m = RunManifest::new(
        "train",
        cli.seed,
        json!({
            "train": cfg, "topology": spec, "target": data.target_kind,
            "best_step": outcome.best.step, "final_step": outcome.checkpoint.step,
        }),
    )
    .input(&dataset.join(echoct::trainer::DATASET_MANIFEST))?;
    if let Some(p) = resume {
        m = m.input(p)?;
    }
    m.write_for_dir(&out)?;
    Ok(())
}

fn infer(cli: &Cli, ckpt: &Path, input: &Path, exact: bool) -> CliResult<()> {
    let dir = resolve_checkpoint(ckpt, "best")?;
    let iq = read_iq(input)?;
    let out = cli.out()?;
    let ck = ModelCheckpoint::load(&dir)?;
    let y = apply_network(&ck, std::slice::from_ref(&iq.grid), !exact)?;
    write_pfm(out, &y[0])?;
    RunManifest::new("infer", cli.seed, json!({ "exact": exact, "checkpoint_step": ck.step }))
        .input(&dir)?
        .input(input)?
        .write_for_file(out)?;
    Ok(())
}

fn read_volume(dir: &Path) -> CliResult<Vec<IqImage>> {
    require(dir)?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "c64"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Usage(format!("{} holds no .c64 frames", dir.display())));
    }
    files.iter().map(|f| read_iq(f)).collect()
}

fn bench(
    cli: &Cli,
    volume_dir: Option<&Path>,
    methods: &[String],
    ckpt: Option<&Path>,
    reference: Option<String>,
    repeats: usize,
) -> CliResult<()> {
    let out = cli.out()?;
    let probe = ProbeSpec::default();
    let volume = match volume_dir {
        Some(d) => read_volume(d)?,
        None => {
            let preset = cli.scale.preset();
            log::info!(
                "synthesizing a {}x{}x{} volume",
                preset.bench_size,
                preset.bench_size,
                preset.bench_frames
            );
            bench_volume(&preset, &probe, cli.seed)?
        }
    };
    let checkpoint = match ckpt {
        Some(p) => Some(ModelCheckpoint::load(&resolve_checkpoint(p, "best")?)?),
        None => None,
    };
    let mut list = Vec::new();
    for name in methods {
        let method = match name.as_str() {
            "cnn" => BenchMethod::Cnn {
                name: "cnn".into(),
                checkpoint: checkpoint.clone(),
                reference: reference.clone(),
            },
            other => {
                let kind: TargetKind = other.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
                let config = kind
                    .default_despeckle(&probe)?
                    .ok_or_else(|| Failure::Usage(format!("{other} is not a despeckling method")))?;
                BenchMethod::Despeckle {
                    name: other.to_string(),
                    config,
                }
            }
        };
        list.push(method);
    }
    let report = run_bench(&volume, &list, repeats)?;
    write_bytes(out, report.to_csv()?.as_bytes())?;
    let table = report.to_table();
    write_bytes(&out.with_extension("txt"), table.as_bytes())?;
    print!("{table}");
    let mut m = RunManifest::new(
        "bench",
        cli.seed,
        json!({ "methods": methods, "repeats": repeats, "reference": reference, "scale": cli.scale }),
    );
    if let Some(d) = volume_dir {
        m = m.input(d)?;
    }
    if let Some(p) = ckpt {
        m = m.input(&resolve_checkpoint(p, "best")?)?;
    }
    m.write_for_file(out)?;
    Ok(())
}
