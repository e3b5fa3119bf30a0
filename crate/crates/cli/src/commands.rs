use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mishape::data::{
    gen_gaussian_pairs, gen_labeled_synth, load_dataset, save_dataset, LabelColumn, LabeledSynthSpec, LatentStructure,
};
use mishape::eval::{bias_measure, build_report, evaluate_tasks, ClassifierConfig, ReportEntry};
use mishape::fingerprint::fingerprint;
use mishape::mi::{estimate_mi, EstimatorConfig, PairedBatch};
use mishape::nn::{read_checkpoint, write_checkpoint, AnyMlp};
use mishape::shaping::{
    baseline_noisy, baseline_random_encoder, encode_dataset, train_shaping, EncoderModel, ShapingConfig,
};
use mishape::{Error, Precision, Result, Scalar, VectorDataset};

use crate::args::{Baseline, Cli, Command, EncodeArgs, EstimateArgs, EvalArgs, GenKind, ShapeArgs, VerifyArgs};
use crate::verify;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct Globals {
    pub seed: Option<u64>,
    pub precision: Precision,
    pub deterministic: bool,
    pub out_dir: PathBuf,
}

impl Globals {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn output(&self, name: &Path) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let globals = Globals {
        seed: cli.seed,
        precision: cli.precision.into(),
        deterministic: cli.deterministic,
        out_dir: cli.out_dir,
    };
    std::fs::create_dir_all(&globals.out_dir).map_err(|e| Error::Io {
        path: globals.out_dir.clone(),
        source: e,
    })?;
    match cli.command {
        Command::Gen(args) => cmd_gen(&globals, args.kind),
        Command::Estimate(args) => cmd_estimate(&globals, &args),
        Command::Shape(args) => cmd_shape(&globals, &args),
        Command::Encode(args) => cmd_encode(&globals, &args),
        Command::Eval(args) => cmd_eval(&globals, &args),
        Command::Verify(args) => cmd_verify(&globals, &args),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("plain record") + "\n"))
}

/// `<file>.json` next to a dataset.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct GenRecord<P: Serialize> {
    command: &'static str,
    kind: &'static str,
    params: P,
    rows: usize,
    dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth_nats: Option<f64>,
    config_fingerprint: String,
}

#[derive(Serialize)]
struct GaussianParams {
    rho: f64,
    dim: usize,
    n: usize,
    seed: u64,
}

pub fn cmd_gen(g: &Globals, kind: GenKind) -> Result<()> {
    let seed = g.seed();
    match kind {
        GenKind::Gaussian { rho, dim, n, out } => {
            let params = GaussianParams { rho, dim, n, seed };
            let fp = fingerprint(&params);
            let pairs = gen_gaussian_pairs(rho, dim, n, seed)?;
            let mut ds = pairs.to_dataset(seed);
            ds.metadata.source = format!("{} fingerprint={fp}", ds.metadata.source);
            let path = g.output(&out);
            save_dataset(&ds, &path)?;
            info!("wrote {} ({} rows); ground truth {:.5} nats", path.display(), n, pairs.ground_truth_nats);
            write_json(
                &sidecar(&path),
                &GenRecord {
                    command: "gen",
                    kind: "gaussian",
                    params,
                    rows: ds.len(),
                    dim: ds.dim(),
                    ground_truth_nats: Some(pairs.ground_truth_nats),
                    config_fingerprint: fp,
                },
            )
        }
        GenKind::LabeledSynth {
            dim,
            n,
            axis_corr,
            noise,
            latent_rank,
            latent_std,
            out,
        } => {
            let mut spec = LabeledSynthSpec::with_axis_correlation(dim, n, axis_corr, noise, seed)?;
            if let (Some(rank), Some(signal_std)) = (latent_rank, latent_std) {
                spec.latent = Some(LatentStructure { rank, signal_std });
            }
            let fp = fingerprint(&spec);
            let mut ds = gen_labeled_synth(&spec)?;
            ds.metadata.source = format!("{} fingerprint={fp}", ds.metadata.source);
            let path = g.output(&out);
            save_dataset(&ds, &path)?;
            info!("wrote {} ({} rows, labels public and sensitive)", path.display(), n);
            write_json(
                &sidecar(&path),
                &GenRecord {
                    command: "gen",
                    kind: "labeled-synth",
                    params: spec,
                    rows: ds.len(),
                    dim: ds.dim(),
                    ground_truth_nats: None,
                    config_fingerprint: fp,
                },
            )
        }
    }
}

fn parse_range(text: &str, dim: usize) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("column range must look like START..END within 0..{dim}, got {text:?}"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let start: usize = a.trim().parse().map_err(|_| bad())?;
    let end: usize = b.trim().parse().map_err(|_| bad())?;
    if start >= end || end > dim {
        return Err(bad());
    }
    Ok((start, end))
}

fn estimator_config(args: &EstimateArgs, g: &Globals) -> Result<EstimatorConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => EstimatorConfig::default(),
    };
    if let Some(v) = args.iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if args.batch_size.is_some() {
        cfg.batch_size = args.batch_size;
    }
    if args.no_early_stop {
        cfg.early_stopping = false;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn estimate_pairs(ds: &VectorDataset, args: &EstimateArgs, seed: u64) -> Result<(Array2<f64>, Array2<f64>)> {
    let x = ds.vectors_as::<f64>();
    if let Some(name) = &args.label {
        let column = ds.label(name)?;
        let column = if args.shuffle_label {
            let mut values = column.values.clone();
            values.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
            LabelColumn::new(column.name.clone(), column.kind, values)?
        } else {
            column.clone()
        };
        return Ok((x, column.features()));
    }
    let (ls, le) = parse_range(args.left_cols.as_deref().unwrap_or_default(), ds.dim())?;
    let (rs, re) = parse_range(args.right_cols.as_deref().unwrap_or_default(), ds.dim())?;
    Ok((x.slice(s![.., ls..le]).to_owned(), x.slice(s![.., rs..re]).to_owned()))
}

pub fn cmd_estimate(g: &Globals, args: &EstimateArgs) -> Result<()> {
    let cfg = estimator_config(args, g)?;
    let ds = load_dataset(&args.data)?;
    let (left, right) = estimate_pairs(&ds, args, cfg.seed)?;
    let pairs = PairedBatch::new(left, right)?;
    info!("estimating MI on {} pairs ({} + {} dims)", pairs.len(), pairs.left.ncols(), pairs.right.ncols());
    let est = match g.precision {
        Precision::Single => estimate_mi(&pairs.cast::<f32>(), &cfg)?,
        Precision::Double => estimate_mi(&pairs, &cfg)?,
    };
    info!(
        "estimate {:.5} nats after {} iterations{}",
        est.value_nats,
        est.iterations_run,
        if est.stopped_early { " (plateau)" } else { "" }
    );
    write_json(&g.output(Path::new("estimate.json")), &est)?;
    est.write_history_csv(&g.output(Path::new("history.csv")))
}

#[derive(Serialize)]
struct ShapeSummary<'a> {
    command: &'static str,
    config_fingerprint: &'a str,
    precision: Precision,
    deterministic: bool,
    data: String,
    rows: usize,
    input_dim: usize,
    epochs_run: usize,
    diverged_at_epoch: Option<usize>,
    final_composite: Option<f64>,
    config: &'a ShapingConfig,
}

pub fn shaping_config(args: &ShapeArgs, g: &Globals) -> Result<ShapingConfig> {
    let mut cfg = ShapingConfig::load(&args.config)?;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.steps_per_epoch {
        cfg.steps_per_epoch = v;
    }
    if let Some(v) = args.output_dim {
        cfg.output_dim = v;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
        cfg.estimator.seed = seed;
    }
    Ok(cfg)
}

fn shape_with<F: Scalar>(ds: &VectorDataset, cfg: &ShapingConfig, g: &Globals, args: &ShapeArgs) -> Result<()> {
    let (encoder, history) = train_shaping::<F>(ds, cfg)?;
    if let Some(epoch) = history.diverged_at_epoch {
        warn!("training stopped at epoch {epoch} after a divergence; the checkpoint holds the last stable encoder");
    }
    let ck_path = g.output(&args.out);
    write_checkpoint(&ck_path, &encoder.to_checkpoint())?;
    write_text(&g.output(Path::new("history.csv")), &history.to_csv(cfg))?;
    write_json(
        &g.output(Path::new("summary.json")),
        &ShapeSummary {
            command: "shape",
            config_fingerprint: &history.config_fingerprint,
            precision: F::PRECISION,
            deterministic: g.deterministic,
            data: args.data.display().to_string(),
            rows: ds.len(),
            input_dim: ds.dim(),
            epochs_run: history.epochs.len(),
            diverged_at_epoch: history.diverged_at_epoch,
            final_composite: history.epochs.last().map(|r| r.composite_value),
            config: cfg,
        },
    )?;
    info!("wrote {}", ck_path.display());
    Ok(())
}

pub fn cmd_shape(g: &Globals, args: &ShapeArgs) -> Result<()> {
    let cfg = shaping_config(args, g)?;
    let ds = load_dataset(&args.data)?;
    cfg.validate(ds.dim())?;
    match g.precision {
        Precision::Single => shape_with::<f32>(&ds, &cfg, g, args),
        Precision::Double => shape_with::<f64>(&ds, &cfg, g, args),
    }
}

fn tag_source(ds: &mut VectorDataset, what: &str, fp: &str) {
    ds.metadata.source = format!("{what} of [{}] fingerprint={fp}", ds.metadata.source);
}

pub fn cmd_encode(g: &Globals, args: &EncodeArgs) -> Result<()> {
    let ck = read_checkpoint(&args.encoder)?;
    let ds = load_dataset(&args.data)?;
    // Inference runs in the checkpoint's own precision.
    let (mut out, fp) = match ck.model {
        AnyMlp::Single(_) => {
            let enc = EncoderModel::<f32>::from_checkpoint(ck);
            (encode_dataset(&enc, &ds)?, enc.training_fingerprint)
        }
        AnyMlp::Double(_) => {
            let enc = EncoderModel::<f64>::from_checkpoint(ck);
            (encode_dataset(&enc, &ds)?, enc.training_fingerprint)
        }
    };
    tag_source(&mut out, "encoding", &fp);
    let path = g.output(&args.out);
    save_dataset(&out, &path)?;
    info!("wrote {} ({} x {})", path.display(), out.len(), out.dim());
    Ok(())
}

struct Embedding {
    name: &'static str,
    train: VectorDataset,
    valid: VectorDataset,
    fingerprint: String,
}

fn encode_pair<F: Scalar>(
    enc: &EncoderModel<F>,
    train: &VectorDataset,
    valid: &VectorDataset,
) -> Result<(VectorDataset, VectorDataset)> {
    Ok((encode_dataset(enc, train)?, encode_dataset(enc, valid)?))
}

fn load_encoder(path: &Path) -> Result<EncoderModel<f64>> {
    Ok(EncoderModel::from_checkpoint(read_checkpoint(path)?))
}

fn embeddings(g: &Globals, args: &EvalArgs, train: &VectorDataset, valid: &VectorDataset) -> Result<Vec<Embedding>> {
    let seed = g.seed();
    let shaped = args.encoder.as_deref().map(load_encoder).transpose()?;
    let mut out = Vec::new();
    for &b in &args.baselines {
        let (t, v, fp) = match b {
            Baseline::Original => (train.clone(), valid.clone(), fingerprint(&("original", train.dim()))),
            Baseline::Random => {
                let dim = args
                    .random_dim
                    .or(shaped.as_ref().map(|e| e.output_dim()))
                    .ok_or_else(|| Error::Config("the random baseline needs --random-dim or --encoder".into()))?;
                let enc = baseline_random_encoder::<f64>(train.dim(), dim, seed)?;
                let (t, v) = encode_pair(&enc, train, valid)?;
                (t, v, enc.training_fingerprint)
            }
            Baseline::Noisy => {
                let sigma = args
                    .sigma
                    .ok_or_else(|| Error::Config("the noisy baseline needs --sigma".into()))?;
                (
                    baseline_noisy(train, sigma, seed)?,
                    baseline_noisy(valid, sigma, seed.wrapping_add(1))?,
                    fingerprint(&("noisy", sigma.to_bits(), seed)),
                )
            }
            Baseline::Shaped => {
                let enc = shaped
                    .as_ref()
                    .ok_or_else(|| Error::Config("the shaped baseline needs --encoder".into()))?;
                let (t, v) = encode_pair(enc, train, valid)?;
                (t, v, enc.training_fingerprint.clone())
            }
        };
        out.push(Embedding {
            name: b.name(),
            train: t,
            valid: v,
            fingerprint: fp,
        });
    }
    Ok(out)
}

fn evaluate_embedding<F: Scalar>(
    e: &Embedding,
    args: &EvalArgs,
    cls: &ClassifierConfig,
    est: &EstimatorConfig,
) -> Result<ReportEntry> {
    let tasks = evaluate_tasks::<F>(&e.train, &e.valid, &args.tasks, cls)?;
    let bias_nats = match &args.bias_label {
        Some(label) => Some(bias_measure::<F>(&e.train, label, est)?.value_nats),
        None => None,
    };
    Ok(ReportEntry {
        embedding: e.name.to_string(),
        dim: e.train.dim(),
        tasks,
        bias_nats,
        config_fingerprint: e.fingerprint.clone(),
    })
}

pub fn cmd_eval(g: &Globals, args: &EvalArgs) -> Result<()> {
    let train = load_dataset(&args.train)?;
    let valid = load_dataset(&args.valid)?;
    if train.dim() != valid.dim() {
        return Err(Error::Shape(format!(
            "train has {} dims, validation has {}",
            train.dim(),
            valid.dim()
        )));
    }
    let cls = ClassifierConfig {
        standardize: args.standardize,
        seed: g.seed(),
        ..ClassifierConfig::default()
    };
    let est = EstimatorConfig {
        seed: g.seed(),
        ..EstimatorConfig::default()
    };
    let mut entries = Vec::new();
    for e in embeddings(g, args, &train, &valid)? {
        info!("evaluating {} ({} dims)", e.name, e.train.dim());
        let entry = match g.precision {
            Precision::Single => evaluate_embedding::<f32>(&e, args, &cls, &est)?,
            Precision::Double => evaluate_embedding::<f64>(&e, args, &cls, &est)?,
        };
        if args.roc {
            for t in &entry.tasks {
                if let Some(roc) = &t.roc {
                    roc.write_csv(&g.output(Path::new(&format!("roc_{}_{}.csv", entry.embedding, t.task))))?;
                }
            }
        }
        entries.push(entry);
    }
    let report = build_report(entries)?;
    write_text(&g.output(Path::new("report.json")), &(report.to_json() + "\n"))?;
    write_text(&g.output(Path::new("report.txt")), &report.to_table())?;
    eprint!("{}", report.to_table());
    Ok(())
}

pub fn cmd_verify(g: &Globals, args: &VerifyArgs) -> Result<()> {
    let results = verify::run_suite(args.corrupt_gradient);
    for r in &results {
        println!("{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    write_json(&g.output(Path::new("verify.json")), &results)?;
    let failed = results.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn globals(seed: Option<u64>) -> Globals {
        Globals {
            seed,
            precision: Precision::Single,
            deterministic: false,
            out_dir: PathBuf::from("."),
        }
    }

    #[test]
    fn column_ranges() {
        assert_eq!(parse_range("0..3", 4).unwrap(), (0, 3));
        assert_eq!(parse_range(" 1 .. 4 ", 4).unwrap(), (1, 4));
        for bad in ["3..3", "2..1", "0..5", "0-2", "a..2", ""] {
            assert!(matches!(parse_range(bad, 4), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn shape_flags_override_the_file() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "gamma = 1.0\noutput_dim = 8\nepochs = 5\nseed = 3\n").unwrap();
        let args = ShapeArgs {
            data: PathBuf::from("unused"),
            config: path,
            epochs: Some(2),
            steps_per_epoch: None,
            output_dim: Some(4),
            out: PathBuf::from("e.ismlp"),
        };
        let from_file = shaping_config(&args, &globals(None)).unwrap();
        assert_eq!((from_file.epochs, from_file.output_dim, from_file.seed), (2, 4, 3));
        assert_eq!(from_file.steps_per_epoch, ShapingConfig::default().steps_per_epoch);
        let seeded = shaping_config(&args, &globals(Some(11))).unwrap();
        assert_eq!((seeded.seed, seeded.estimator.seed), (11, 11));
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "gama = 1.0\n").unwrap();
        let args = ShapeArgs {
            data: PathBuf::from("unused"),
            config: path,
            epochs: None,
            steps_per_epoch: None,
            output_dim: None,
            out: PathBuf::from("e.ismlp"),
        };
        assert!(shaping_config(&args, &globals(None)).unwrap_err().is_usage());
    }

    #[test]
    fn bundled_configs_parse_and_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        for (name, input_dim) in [("privacy_utility.toml", 64), ("compression.toml", 128), ("fairness.toml", 128)] {
            let cfg = ShapingConfig::load(&dir.join(name)).unwrap();
            cfg.validate(input_dim).unwrap();
            assert_eq!(cfg.output_dim, 16, "{name}");
        }
    }
}
