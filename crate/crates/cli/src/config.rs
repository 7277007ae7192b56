//! Command-line flags, the optional TOML config file, and their merge.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cloudvol_core::manifest::{SceneKind, Split};
use cloudvol_core::norm::{Variable, PROFILE_VARS};
use cloudvol_models::Architecture;
use serde::Deserialize;

use crate::error::{io_at, CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "cloudvol", version, about = "Satellite imagery to 3D cloud volumes")]
pub struct Cli {
    /// TOML file with settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scenes, curtains and colocated samples.
    Generate(RunConfig),
    /// Masked-image pre-training of a Swin encoder.
    Pretrain(RunConfig),
    /// Train an image-to-volume model on colocated samples.
    Finetune(RunConfig),
    /// Metric report of a fine-tuned checkpoint on a held-out split.
    Evaluate(RunConfig),
    /// Full 3D volume for a patch, with or without a track.
    Predict {
        #[command(flatten)]
        run: RunConfig,
        #[command(flatten)]
        input: PredictInput,
    },
    /// Curtain comparison strips and max-column composites.
    Render {
        #[command(flatten)]
        run: RunConfig,
        /// Sample ids; defaults to the first few of the split.
        #[arg(long = "sample")]
        samples: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unet,
    Swinmae,
    Swinsatmae,
}

impl From<ModelKind> for Architecture {
    fn from(m: ModelKind) -> Self {
        match m {
            ModelKind::Unet => Architecture::Unet,
            ModelKind::Swinmae => Architecture::Swinmae,
            ModelKind::Swinsatmae => Architecture::Swinsatmae,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarSet {
    Z,
    Iwc,
    Re,
    All,
}

impl VarSet {
    pub fn variables(self) -> Vec<Variable> {
        match self {
            Self::Z => vec![Variable::Z],
            Self::Iwc => vec![Variable::Iwc],
            Self::Re => vec![Variable::Re],
            Self::All => PROFILE_VARS.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Which scene kinds an evaluation covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    All,
    General,
    Storm,
}

impl KindArg {
    pub fn kind(self) -> Option<SceneKind> {
        match self {
            Self::All => None,
            Self::General => Some(SceneKind::General),
            Self::Storm => Some(SceneKind::Storm),
        }
    }
}

/// Settings shared by all subcommands. Every field may also come from the
/// config file under the same (snake_case) name.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory (manifest.json and scene/sample folders).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Checkpoint directory written by training and read by evaluation.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Directory for logs, reports and renders.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single worker and synchronous loading.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Worker threads for generation and evaluation.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum)]
    pub vars: Option<VarSet>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Pre-training checkpoint to start fine-tuning from.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Scenes to generate.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Fraction of generated scenes that are storms.
    #[arg(long)]
    pub storm_fraction: Option<f64>,
    /// Split to evaluate, predict or render.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Scene kinds to evaluate.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Spatial RMSE bin size, degrees.
    #[arg(long)]
    pub bin_deg: Option<f64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct PredictInput {
    /// Predict for a stored sample of the dataset.
    #[arg(long, conflicts_with = "image")]
    pub sample: Option<String>,
    /// Normalised `[11, S, S]` CVT1 patch.
    #[arg(long, requires_all = ["lat", "lon", "time"])]
    pub image: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub lon: Option<f64>,
    /// Acquisition time, RFC 3339.
    #[arg(long)]
    pub time: Option<String>,
    #[arg(long, default_value = "msg")]
    pub satellite: String,
    /// Output CVT1 file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($a:expr, $b:expr, $($f:ident),*) => {
        RunConfig { $($f: $a.$f.or($b.$f)),* }
    };
}

impl RunConfig {
    /// `self` (flags) wins field by field over `file`.
    pub fn merged(self, file: RunConfig) -> RunConfig {
        merge_fields!(
            self,
            file,
            data_dir,
            checkpoint_dir,
            report_dir,
            scale,
            seed,
            deterministic,
            workers,
            vars,
            model,
            pretrained,
            epochs,
            batch_size,
            lr,
            scenes,
            storm_fraction,
            split,
            kind,
            bin_deg
        )
    }

    pub fn load_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| "data".into())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.report_dir.clone().unwrap_or_else(|| "reports".into())
    }

    pub fn scale(&self) -> Scale {
        self.scale.unwrap_or(Scale::Desk)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn deterministic(&self) -> bool {
        self.deterministic.unwrap_or(false)
    }

    pub fn workers(&self) -> usize {
        if self.deterministic() {
            return 1;
        }
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    pub fn variables(&self) -> Vec<Variable> {
        self.vars.unwrap_or(VarSet::All).variables()
    }

    pub fn architecture(&self) -> Architecture {
        self.model.unwrap_or(ModelKind::Swinsatmae).into()
    }

    pub fn split(&self) -> Split {
        self.split.unwrap_or(SplitArg::Test).into()
    }

    pub fn kind(&self) -> KindArg {
        self.kind.unwrap_or(KindArg::All)
    }

    pub fn bin_deg(&self) -> f64 {
        self.bin_deg.unwrap_or(1.0)
    }

    /// Checkpoint directory, defaulting to `checkpoints/<phase>-<model>`.
    pub fn checkpoint_dir(&self, phase: &str) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| Path::new("checkpoints").join(format!("{phase}-{}", self.architecture().name())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == Some(0) {
            return Err(CliError::Config("epochs must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(CliError::Config("batch size must be at least 1".into()));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(CliError::Config(format!("learning rate {lr} is not positive")));
            }
        }
        if let Some(f) = self.storm_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::Config(format!("storm fraction {f} outside [0, 1]")));
            }
        }
        if let Some(b) = self.bin_deg {
            if !(b > 0.0 && b.is_finite()) {
                return Err(CliError::Config(format!("bin size {b} is not positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_the_file() {
        let file: RunConfig = toml::from_str("seed = 3\nepochs = 7\nmodel = \"unet\"\nvars = \"z\"").unwrap();
        let flags = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let m = flags.merged(file);
        assert_eq!(m.seed(), 9);
        assert_eq!(m.epochs, Some(7));
        assert_eq!(m.architecture(), Architecture::Unet);
        assert_eq!(m.variables(), vec![Variable::Z]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
    }

    #[test]
    fn deterministic_forces_one_worker() {
        let c = RunConfig {
            deterministic: Some(true),
            workers: Some(8),
            ..Default::default()
        };
        assert_eq!(c.workers(), 1);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "cloudvol",
            "finetune",
            "--model",
            "unet",
            "--vars",
            "all",
            "--deterministic",
        ])
        .unwrap();
        let Command::Finetune(run) = cli.command else { panic!() };
        assert_eq!(run.deterministic, Some(true));
    }
}
