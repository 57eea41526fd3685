//! `echoct` command-line entry point: one subcommand per pipeline stage
//! plus `reproduce`, which chains them end to end.

mod commands;
mod manifest;
mod reproduce;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use echoct::cnn::DEFAULT_WIDTH;
use echoct::experiment::Scale;
use echoct::trainer::TargetKind;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "echoct", version, about = "Ultrasound simulation from CT, despeckling and CNN approximation")]
pub struct Cli {
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Dataset, training and benchmark sizes for `reproduce` and synthesized volumes.
    #[arg(long, global = true, default_value = "tiny")]
    pub scale: Scale,
    /// Output file or directory.
    #[arg(short = 'o', long = "out", visible_alias = "output", global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// DICOM CT slice to a Hounsfield PFM.
    Ingest {
        input: PathBuf,
        /// Header and provenance as JSON.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Synthetic Hounsfield phantom.
    MakePhantom {
        #[arg(long, default_value = "layered")]
        kind: String,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Hounsfield PFM to a directory of acoustic property grids.
    AcousticMap {
        input: PathBuf,
        /// Pixel spacing in mm (default: from the input's run manifest, else 0.3).
        #[arg(long)]
        spacing_mm: Option<f64>,
    },
    /// Acoustic map directory to reflectivity, transmission and RF frames.
    Simulate {
        map: PathBuf,
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// RF PFM to an interleaved complex IQ raster.
    Demod {
        input: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        carrier: f64,
    },
    /// Homomorphic despeckling of an IQ raster.
    Despeckle {
        input: PathBuf,
        /// Pipeline JSON; defaults to Wiener + TV with the default probe PSF.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one denoiser on a real-valued PFM.
    Denoise {
        input: PathBuf,
        #[arg(long)]
        kind: String,
        /// BM3D noise level (default: estimated).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0.3)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 0.8)]
        h: f64,
    },
    /// Simulate phantoms and cut paired IQ/target patches.
    BuildDataset {
        #[arg(long, default_value_t = 40)]
        phantoms: usize,
        #[arg(long, default_value = "tv")]
        target: TargetKind,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        patch: usize,
        #[arg(long, default_value_t = 32)]
        stride: usize,
        #[arg(long)]
        probe: Option<PathBuf>,
    },
    /// Train a network on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5000)]
        iters: u64,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 6)]
        batch: usize,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: usize,
        #[arg(long, default_value_t = 1000)]
        checkpoint_every: u64,
        #[arg(long, default_value_t = 100)]
        log_every: u64,
        #[arg(long, default_value_t = 0.05)]
        val_fraction: f64,
        /// Checkpoint directory to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run a checkpoint on an IQ raster.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Double-precision inference instead of single.
        #[arg(long)]
        exact: bool,
    },
    /// Time despeckling methods and network inference over a volume.
    Bench {
        /// Directory of .c64 frames (default: a synthesized volume).
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long, default_value = "tv,nlm,bm3d,cnn", value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Conventional method the `cnn` row is compared against.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Phantoms, datasets, four networks, evaluation, benchmark and figures.
    Reproduce,
}

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error(transparent)]
    Core(#[from] echoct::Error),
    #[error("acceptance assertions failed: {}", .0.join("; "))]
    Assertion(Vec<String>),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::NotFound(_) => 2,
            Failure::Core(echoct::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => 2,
            Failure::Core(_) | Failure::Assertion(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Inputs must exist before any work starts.
pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::NotFound(path.to_path_buf()))
    }
}

impl Cli {
    pub fn out(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::Usage("this subcommand needs an output path (-o)".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
