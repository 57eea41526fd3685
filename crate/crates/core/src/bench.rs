//! PSNR and the run-time harness: warm-up, then the median of timed repeats
//! per method over a volume of IQ frames.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cnn::ModelCheckpoint;
use crate::demod::IqImage;
use crate::error::{Error, Result};
use crate::grid::RealGrid;
use crate::homomorphic::{despeckle, DespeckleConfig};
use crate::trainer::apply_network;

/// Reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const MIN_REPEATS: usize = 3;

pub fn psnr(a: &RealGrid, b: &RealGrid, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Parameter(format!("psnr peak must be positive, got {peak}")));
    }
    let mse = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// PSNR with the reference's dynamic range as peak.
pub fn psnr_range(reference: &RealGrid, test: &RealGrid) -> Result<f64> {
    let range = reference.max() - reference.min();
    let peak = if range > 0.0 { range } else { reference.max().abs().max(1.0) };
    psnr(reference, test, peak)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub cpu_seconds: f64,
    pub threads: usize,
    pub psnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(frames, rows, cols)`.
    pub volume_shape: (usize, usize, usize),
    pub environment: String,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn seconds(&self, method: &str) -> Result<f64> {
        self.row(method)
            .map(|r| r.cpu_seconds)
            .ok_or_else(|| Error::Config(format!("no benchmark row for {method}")))
    }

    /// Two `#` metadata lines, then `method,cpu_seconds,threads,psnr_db`.
    pub fn to_csv(&self) -> Result<String> {
        let (f, r, c) = self.volume_shape;
        let mut out = format!("# volume_shape={f}x{r}x{c}\n# environment={}\n", self.environment);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["method", "cpu_seconds", "threads", "psnr_db"])
            .map_err(csv_err)?;
        for row in &self.rows {
            let psnr = row.psnr_db.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([row.method.clone(), row.cpu_seconds.to_string(), row.threads.to_string(), psnr])
                .map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut shape = None;
        let mut environment = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(v) = line.strip_prefix("# volume_shape=") {
                let dims: Vec<usize> = v
                    .split('x')
                    .map(|d| d.parse().map_err(|_| Error::Format(format!("bad volume shape {v:?}"))))
                    .collect::<Result<_>>()?;
                if dims.len() != 3 {
                    return Err(Error::Format(format!("bad volume shape {v:?}")));
                }
                shape = Some((dims[0], dims[1], dims[2]));
            } else if let Some(v) = line.strip_prefix("# environment=") {
                environment = Some(v.to_string());
            }
        }
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 4 {
                return Err(Error::Format(format!("expected 4 fields, found {}", rec.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
            rows.push(BenchRow {
                method: rec[0].to_string(),
                cpu_seconds: num(&rec[1])?,
                threads: rec[2].parse().map_err(|_| Error::Format(format!("bad thread count {:?}", &rec[2])))?,
                psnr_db: if rec[3].is_empty() { None } else { Some(num(&rec[3])?) },
            });
        }
        Ok(Self {
            rows,
            volume_shape: shape.ok_or_else(|| Error::Format("missing volume_shape".into()))?,
            environment: environment.ok_or_else(|| Error::Format("missing environment".into()))?,
        })
    }

    /// Fixed-width table: one row per method with time, threads and PSNR.
    pub fn to_table(&self) -> String {
        let (f, r, c) = self.volume_shape;
        let mut out = format!("Run time on a {r}x{c}x{f} volume ({})\n", self.environment);
        let _ = writeln!(out, "{:<12} {:>12} {:>8} {:>10}", "method", "seconds", "threads", "psnr_db");
        for row in &self.rows {
            let psnr = row.psnr_db.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(out, "{:<12} {:>12.3} {:>8} {:>10}", row.method, row.cpu_seconds, row.threads, psnr);
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Hardware descriptor: CPU model (when readable), core count and OS.
pub fn describe_environment() -> String {
    let model = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{model}; {cores} cores; {}-{}", std::env::consts::OS, std::env::consts::ARCH).replace(['\n', '\r'], " ")
}

pub enum BenchMethod {
    /// Full homomorphic pipeline per frame.
    Despeckle { name: String, config: DespeckleConfig },
    /// Network inference only; `reference` names the method whose output
    /// the PSNR column compares against.
    Cnn {
        name: String,
        checkpoint: Option<ModelCheckpoint>,
        reference: Option<String>,
    },
    /// Does nothing; exercises the harness.
    Noop { name: String },
}

impl BenchMethod {
    pub fn name(&self) -> &str {
        match self {
            BenchMethod::Despeckle { name, .. } | BenchMethod::Cnn { name, .. } | BenchMethod::Noop { name } => name,
        }
    }

    fn run(&self, volume: &[IqImage]) -> Result<Vec<RealGrid>> {
        match self {
            BenchMethod::Despeckle { config, .. } => volume.iter().map(|iq| despeckle(iq, config)).collect(),
            BenchMethod::Cnn { checkpoint, name, .. } => {
                let ck = checkpoint
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("method {name} needs a checkpoint")))?;
                let frames: Vec<_> = volume.iter().map(|iq| iq.grid.clone()).collect();
                apply_network(ck, &frames, true)
            }
            BenchMethod::Noop { .. } => Ok(Vec::new()),
        }
    }
}

/// Median of `times` (upper median for even counts is never used: callers
/// pass odd counts, but even counts average the middle pair).
pub fn median(times: &[f64]) -> f64 {
    let mut v = times.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Warm-up call (result returned), then the median wall time of `repeats`.
pub fn time_median<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let warm = f()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    Ok((median(&times), warm))
}

pub fn run_bench(volume: &[IqImage], methods: &[BenchMethod], repeats: usize) -> Result<BenchReport> {
    if repeats < MIN_REPEATS {
        return Err(Error::Parameter(format!("repeats must be >= {MIN_REPEATS}")));
    }
    let first = volume.first().ok_or(Error::EmptyDataset)?;
    let (rows, cols) = first.dims();
    if volume.iter().any(|f| f.dims() != (rows, cols)) {
        return Err(Error::Shape("benchmark frames differ in size".into()));
    }
    for m in methods {
        if let BenchMethod::Cnn {
            checkpoint: None, name, ..
        } = m
        {
            return Err(Error::Config(format!("method {name} needs a checkpoint")));
        }
    }
    let threads = rayon::current_num_threads();
    let mut outputs: Vec<(String, Vec<RealGrid>)> = Vec::new();
    let mut report_rows = Vec::new();
    for m in methods {
        log::info!("benchmarking {} on {} frames", m.name(), volume.len());
        let (secs, out) = time_median(repeats, || m.run(volume))?;
        report_rows.push(BenchRow {
            method: m.name().to_string(),
            cpu_seconds: secs,
            threads,
            psnr_db: None,
        });
        outputs.push((m.name().to_string(), out));
    }
    for (i, m) in methods.iter().enumerate() {
        let BenchMethod::Cnn {
            reference: Some(reference),
            ..
        } = m
        else {
            continue;
        };
        let Some((_, ref_frames)) = outputs.iter().find(|(n, _)| n == reference) else {
            return Err(Error::Config(format!("reference method {reference} was not benchmarked")));
        };
        let mut total = 0.0;
        for (r, t) in ref_frames.iter().zip(&outputs[i].1) {
            total += psnr_range(r, t)?;
        }
        report_rows[i].psnr_db = Some(total / ref_frames.len().max(1) as f64);
    }
    Ok(BenchReport {
        rows: report_rows,
        volume_shape: (volume.len(), rows, cols),
        environment: describe_environment(),
    })
}
