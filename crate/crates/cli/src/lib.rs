//! The `lanegraph` command-line tool: scene generation, extraction, the
//! dense-detection baseline, evaluation, the annotation service and a
//! polyline fitting utility.
//!
//! Settings resolve as defaults < JSON config file (`--config`) < flags.

pub mod commands;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lanegraph_core::baseline::{DetectorSim, VectorizeParams};
use lanegraph_core::raster_io::RasterFormat;
use lanegraph_core::{ExtractionParams, SceneConfig};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "lanegraph", version, about = "Lane-graph extraction from bird's-eye-view rasters")]
pub struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for scene-level parallelism; outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes and a manifest.
    Generate(GenerateArgs),
    /// Extract a lane graph from every scene.
    Extract(ExtractArgs),
    /// Run the threshold-skeletonize baseline on simulated detection maps.
    Baseline(BaselineArgs),
    /// Score prediction directories against ground truth.
    Eval(EvalArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Fit one polyline to another by gradient descent on the polyline loss.
    Fit(FitArgs),
    /// Measure clicks-to-fix with a scripted annotator.
    Annotate(AnnotateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes; scene i uses seed + i.
    #[arg(long, default_value_t = 5, conflicts_with = "corpus")]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus file listing a scene config and explicit seeds.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Raster file format: pgm or f32.
    #[arg(long)]
    pub format: Option<RasterFormat>,
}

/// Extraction parameter overrides shared by several commands.
#[derive(Debug, Args, Default, Clone)]
pub struct ExtractionFlags {
    /// Bins per side of the starting-region grid.
    #[arg(long)]
    pub k_grid: Option<usize>,
    /// Evidence threshold on raster intensity.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Crop size in pixels, `N` or `HxW`.
    #[arg(long, value_parser = parse_crop)]
    pub crop: Option<(usize, usize)>,
    /// Curvature weight of the refinement.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ExtractionFlags,
    /// Also write `<id>.overlay.pgm` with the lanes drawn on the raster.
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated thresholds; defaults to 0.3,0.5,0.7,0.9.
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// `name=dir` of a prediction directory holding `<id>.json` per scene;
    /// repeatable.
    #[arg(long = "method", required = true, value_parser = parse_method)]
    pub methods: Vec<(String, PathBuf)>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated distance thresholds in centimeters.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory for JSON-lines session logs.
    #[arg(long)]
    pub logs: Option<PathBuf>,
    #[command(flatten)]
    pub params: ExtractionFlags,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON polyline `[[x, y], ...]` to start from.
    #[arg(long)]
    pub init: PathBuf,
    /// JSON polyline to fit.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Output directory for `fit.json` and `trace.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub scenes: PathBuf,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: ExtractionFlags,
}

fn parse_crop(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad crop size `{s}`: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn parse_method(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected name=dir, got `{s}`")),
    }
}

/// Contents of a `--config` file. Every field is optional, and nested
/// configs fill unspecified fields with their defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scene: Option<SceneConfig>,
    pub extraction: Option<ExtractionParams>,
    pub detector: Option<DetectorSim>,
    pub vectorize: Option<VectorizeParams>,
    pub taus: Option<Vec<f64>>,
    pub thresholds: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub format: Option<RasterFormat>,
    pub port: Option<u16>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Extraction parameters after applying `flags`.
    pub fn extraction(&self, flags: &ExtractionFlags) -> Result<ExtractionParams, CliError> {
        let mut p = self.extraction.clone().unwrap_or_default();
        if let Some(k) = flags.k_grid {
            p.k_grid = k;
        }
        if let Some(t) = flags.tau {
            p.tau = t;
        }
        if let Some((h, w)) = flags.crop {
            p.crop_h = h;
            p.crop_w = w;
        }
        if let Some(l) = flags.lambda {
            p.lambda = l;
        }
        p.validate().map_err(CliError::from)?;
        Ok(p)
    }
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or parameter values (exit 1).
    Usage(String),
    /// Missing, malformed or inconsistent input data and I/O failures (exit 2).
    Data(String),
    /// Anything else (exit 3).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<lanegraph_core::Error> for CliError {
    fn from(e: lanegraph_core::Error) -> Self {
        use lanegraph_core::Error as E;
        match e {
            E::InvalidParameter { .. } => CliError::Usage(e.to_string()),
            E::Io { .. } | E::Format { .. } | E::TooFewVertices(_) | E::RepeatedVertex(_) | E::NonFinite(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_ref())?;
    let workers = cli.workers.or(file.workers);
    if workers == Some(0) {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = workers {
            b = b.num_threads(w);
        }
        b.build().map_err(|e| CliError::Internal(e.to_string()))?
    };
    match cli.command {
        Command::Generate(a) => pool.install(|| commands::generate(&a, &file)),
        Command::Extract(a) => pool.install(|| commands::extract(&a, &file)),
        Command::Baseline(a) => pool.install(|| commands::baseline(&a, &file)),
        Command::Eval(a) => pool.install(|| commands::eval(&a, &file)),
        Command::Serve(a) => commands::serve(&a, &file, workers),
        Command::Fit(a) => commands::fit(&a),
        Command::Annotate(a) => pool.install(|| commands::annotate(&a, &file)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_method_parsing() {
        assert_eq!(parse_crop("60"), Ok((60, 60)));
        assert_eq!(parse_crop("40x80"), Ok((40, 80)));
        assert!(parse_crop("ax3").is_err());
        assert_eq!(parse_method("ours=preds/x"), Ok(("ours".into(), PathBuf::from("preds/x"))));
        assert!(parse_method("=x").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file: FileConfig = serde_json::from_str(r#"{"extraction": {"k_grid": 12, "lambda": 0.5}}"#).unwrap();
        let flags = ExtractionFlags {
            lambda: Some(0.1),
            ..ExtractionFlags::default()
        };
        let p = file.extraction(&flags).unwrap();
        assert_eq!((p.k_grid, p.lambda), (12, 0.1));
        assert_eq!(p.crop_h, ExtractionParams::default().crop_h);
        assert!(serde_json::from_str::<FileConfig>(r#"{"typo": 1}"#).is_err());
        let bad = ExtractionFlags {
            k_grid: Some(1),
            ..ExtractionFlags::default()
        };
        assert_eq!(file.extraction(&bad).unwrap_err().exit_code(), 1);
    }
}
