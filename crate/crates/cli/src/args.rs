use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mishape::Precision;

#[derive(Debug, Parser)]
#[command(name = "mishape", version, about = "Neural MI estimation and information-shaping encoders")]
pub struct Cli {
    /// Master seed; overrides seeds from config files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Floating-point width for training and inference.
    #[arg(long, global = true, value_enum, default_value = "32")]
    pub precision: PrecisionArg,

    /// Accepted for explicitness; every command is single-threaded and
    /// seeded, so runs are always reproducible.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Directory for all output artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    #[value(name = "32")]
    Single,
    #[value(name = "64")]
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Estimate MI between two column groups or between vectors and a label.
    Estimate(EstimateArgs),
    /// Train a shaping encoder from a TOML config.
    Shape(ShapeArgs),
    /// Apply an encoder checkpoint to a dataset.
    Encode(EncodeArgs),
    /// Compare embeddings on downstream tasks.
    Eval(EvalArgs),
    /// Run the built-in numerical self-checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(subcommand)]
    pub kind: GenKind,
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    /// Correlated Gaussian pairs stored as `[A | B]` rows.
    Gaussian {
        #[arg(long, allow_negative_numbers = true)]
        rho: f64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "gaussian.isvd")]
        out: PathBuf,
    },
    /// Gaussian vectors with `public` and `sensitive` halfspace labels.
    LabeledSynth {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        /// Inner product of the public and sensitive label axes.
        #[arg(long, default_value_t = 0.3, allow_negative_numbers = true)]
        axis_corr: f64,
        /// Independent flip probability of each label.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Number of leading high-variance coordinates.
        #[arg(long, requires = "latent_std")]
        latent_rank: Option<usize>,
        /// Standard deviation of the leading coordinates.
        #[arg(long, requires = "latent_rank")]
        latent_std: Option<f64>,
        #[arg(long, default_value = "labeled.isvd")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Left stream as a half-open column range `START..END`.
    #[arg(long, requires = "right_cols", conflicts_with = "label")]
    pub left_cols: Option<String>,
    /// Right stream as a half-open column range `START..END`.
    #[arg(long, requires = "left_cols")]
    pub right_cols: Option<String>,
    /// Pair all vector columns with this label column.
    #[arg(long, required_unless_present = "left_cols")]
    pub label: Option<String>,
    /// Permute the label column first (independence control).
    #[arg(long, requires = "label")]
    pub shuffle_label: bool,
    /// Estimator settings as TOML; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub no_early_stop: bool,
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Shaping config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    /// Checkpoint file name inside the output directory.
    #[arg(long, default_value = "encoder.ismlp")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub encoder: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "encoded.isvd")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Original,
    Random,
    Noisy,
    #[value(alias = "texshape")]
    Shaped,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Original => "original",
            Baseline::Random => "random",
            Baseline::Noisy => "noisy",
            Baseline::Shaped => "shaped",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Label columns to train downstream classifiers on.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tasks: Vec<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "original")]
    pub baselines: Vec<Baseline>,
    /// Trained encoder for the `shaped` baseline.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Noise standard deviation for the `noisy` baseline.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Output dimension of the `random` baseline encoder.
    #[arg(long)]
    pub random_dim: Option<usize>,
    /// Measure MI between each embedding and this label.
    #[arg(long)]
    pub bias_label: Option<String>,
    /// Z-score embeddings before fitting classifiers.
    #[arg(long)]
    pub standardize: bool,
    /// Write one ROC CSV per binary task and embedding.
    #[arg(long)]
    pub roc: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Perturb analytic gradients before checking (negative control).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("mishape").chain(args.iter().copied()))
    }

    #[test]
    fn globals_default_and_parse_anywhere() {
        let cli = parse(&["verify"]).unwrap();
        assert_eq!((cli.seed, cli.precision, cli.deterministic), (None, PrecisionArg::Single, false));
        assert_eq!(cli.out_dir, PathBuf::from("."));
        let cli = parse(&["verify", "--seed", "4", "--precision", "64", "--deterministic"]).unwrap();
        assert_eq!((cli.seed, Precision::from(cli.precision), cli.deterministic), (Some(4), Precision::Double, true));
    }

    #[test]
    fn precision_accepts_only_32_and_64() {
        assert!(parse(&["--precision", "16", "verify"]).is_err());
    }

    #[test]
    fn negative_rho_is_a_value() {
        let cli = parse(&["gen", "gaussian", "--rho", "-0.5", "--dim", "2", "--n", "10"]).unwrap();
        let Command::Gen(GenArgs {
            kind: GenKind::Gaussian { rho, .. },
        }) = cli.command
        else {
            panic!("expected gen gaussian");
        };
        assert_eq!(rho, -0.5);
    }

    #[test]
    fn latent_flags_come_in_pairs() {
        assert!(parse(&["gen", "labeled-synth", "--dim", "8", "--n", "10", "--latent-rank", "2"]).is_err());
    }

    #[test]
    fn estimate_needs_exactly_one_pairing() {
        assert!(parse(&["estimate", "--data", "d.isvd"]).is_err());
        assert!(parse(&["estimate", "--data", "d.isvd", "--left-cols", "0..1"]).is_err());
        assert!(parse(&["estimate", "--data", "d.isvd", "--label", "y", "--left-cols", "0..1", "--right-cols", "1..2"]).is_err());
        assert!(parse(&["estimate", "--data", "d.isvd", "--left-cols", "0..1", "--right-cols", "1..2"]).is_ok());
    }

    #[test]
    fn baseline_list_and_alias() {
        let cli = parse(&["eval", "--train", "a", "--valid", "b", "--tasks", "y", "--baselines", "original,texshape,random"]).unwrap();
        let Command::Eval(args) = cli.command else {
            panic!("expected eval");
        };
        assert_eq!(args.baselines, [Baseline::Original, Baseline::Shaped, Baseline::Random]);
        assert!(parse(&["eval", "--train", "a", "--valid", "b", "--tasks", "y", "--baselines", "pca"]).is_err());
    }
}
