//! `chromattn` subcommands: `synth`, `train`, `eval`, `attend`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! abort.

pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chromattn::data::{binarize_labels, load_dataset, restrict_marks, scan_bins, split, MarkProfiles};
use chromattn::interpret::{interpretation_correlation, mean_attention, mean_saliency};
use chromattn::io::atomic_write_all;
use chromattn::metrics::{auc, f1};
use chromattn::synth::{synth_generate, SynthSpec};
use chromattn::train::train_from;
use chromattn::{interpret, Checkpoint, Dataset, Label, ParameterStore};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "chromattn", version, about = "Hierarchical attention classifier for binned signal tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted synthetic dataset and its relevance sidecar.
    Synth(SynthArgs),
    /// Train a model from a run config.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Export mean attention, saliency, and correlation against a reference.
    Attend(AttendArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Dataset path; the sidecar goes next to it as `<stem>.relevance.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n_genes: usize,
    #[arg(long, default_value_t = 5)]
    pub marks: usize,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub informative_mark: usize,
    #[arg(long, default_value_t = 45)]
    pub bin_start: usize,
    /// Inclusive.
    #[arg(long, default_value_t = 55)]
    pub bin_end: usize,
    #[arg(long, default_value_t = 3.0)]
    pub effect: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `section.key=value`, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    High,
    Low,
}

impl From<ClassArg> for Label {
    fn from(c: ClassArg) -> Label {
        match c {
            ClassArg::High => Label::High,
            ClassArg::Low => Label::Low,
        }
    }
}

/// Where evaluation data comes from: a run config's split, or a whole file.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, conflicts_with = "dataset")]
    pub config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE", requires = "config")]
    pub overrides: Vec<String>,
    /// Split partition when `--config` is given.
    #[arg(long, value_enum, default_value = "test", requires = "config")]
    pub partition: Partition,
    /// Use every sample of this file, labeled by its own median.
    #[arg(long, required_unless_present = "config")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Metrics file (TOML); printed to stdout either way.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AttendArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Average over samples predicted as this class.
    #[arg(long = "class", value_enum, default_value = "high")]
    pub class: ClassArg,
    /// `mark,bin,<value>` profile to correlate mean attention against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

/// Parses subcommand arguments given without the program name.
pub fn parse_command(args: &[&str]) -> Result<Command, CliError> {
    Cli::try_parse_from(std::iter::once("chromattn").chain(args.iter().copied()))
        .map(|c| c.command)
        .map_err(|e| CliError::config(e.to_string()))
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(&a.config, &a.overrides).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Attend(a) => cmd_attend(a),
    }
}

fn relevance_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.relevance.csv"))
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        n_genes: a.n_genes,
        marks: a.marks,
        bins: a.bins,
        informative_mark: a.informative_mark,
        bin_start: a.bin_start,
        bin_end: a.bin_end,
        effect: a.effect,
        noise_scale: a.noise_scale,
        seed: a.seed,
    };
    let syn = synth_generate(&spec)?;
    let mut data = Vec::new();
    syn.dataset.write_csv(&mut data)?;
    let mut rel = Vec::new();
    syn.relevance.write_csv(&mut rel, "relevance")?;
    let sidecar = relevance_path(&a.out);
    atomic_write_all(&[(&a.out, &data), (&sidecar, &rel)])?;
    eprintln!(
        "wrote {} ({} genes) and {}",
        a.out.display(),
        syn.dataset.len(),
        sidecar.display()
    );
    Ok(())
}

/// Loads, subsets, transforms and labels the dataset named by `cfg`.
pub fn prepare_dataset(cfg: &config::DataConfig) -> Result<Dataset, CliError> {
    let mut ds = load_dataset(&cfg.dataset, cfg.bins)?;
    if let Some(marks) = &cfg.marks {
        ds = restrict_marks(&ds, marks)?;
    }
    if cfg.arcsinh {
        ds = ds.arcsinh();
    }
    Ok(binarize_labels(&ds)?)
}

pub struct TrainOutcome {
    pub params: ParameterStore,
    pub history: chromattn::TrainHistory,
    pub config: RunConfig,
}

pub fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<TrainOutcome, CliError> {
    let cfg = RunConfig::load(config_path, overrides)?;
    let ds = prepare_dataset(&cfg.data)?;
    let mcfg = cfg.model.resolve(ds.marks(), ds.bins());
    let init = ParameterStore::init(&mcfg, cfg.train.seed)?;
    let (tr, va, te) = split(&ds, cfg.data.fractions, cfg.data.split_seed)?;
    eprintln!(
        "training {} on {} genes ({} train / {} val / {} test), {} parameters",
        mcfg.variant,
        ds.len(),
        tr.len(),
        va.len(),
        te.len(),
        init.parameter_count()
    );
    let (params, history) = train_from(&cfg.train, &mcfg, init, &tr, &va, |r| {
        eprintln!("epoch {:>3}  train_loss {:.6}  val_auc {:.6}", r.epoch, r.train_loss, r.val_auc);
    })?;
    eprintln!("best epoch {} (val_auc {:.6})", history.best_epoch, history.best_val_auc);

    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::data(format!("{}: {e}", cfg.output_dir.display())))?;
    let ck = Checkpoint {
        config: mcfg,
        seed: cfg.train.seed,
        params,
    }
    .to_bytes();
    let mut hist = Vec::new();
    history
        .write_csv(&mut hist)
        .map_err(|e| CliError::data(format!("history: {e}")))?;
    let resolved = cfg.to_toml();
    let dir = &cfg.output_dir;
    let (p1, p2, p3) = (dir.join("checkpoint.bin"), dir.join("history.csv"), dir.join("resolved_config.toml"));
    atomic_write_all(&[(&p1, &ck), (&p2, &hist), (&p3, resolved.as_bytes())])?;
    eprintln!("wrote {}", dir.display());
    let params = Checkpoint::from_bytes(&ck)?.params;
    Ok(TrainOutcome {
        params,
        history,
        config: cfg,
    })
}

/// Checkpoint plus the samples selected by `a`, shape-checked against each other.
pub fn load_eval_data(a: &DataArgs) -> Result<(Checkpoint, Dataset), CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = match (&a.config, &a.dataset) {
        (Some(path), _) => {
            let cfg = RunConfig::load(path, &a.overrides)?;
            let ds = prepare_dataset(&cfg.data)?;
            check_shape(&ck, &ds)?;
            let (tr, va, te) = split(&ds, cfg.data.fractions, cfg.data.split_seed)?;
            match a.partition {
                Partition::Train => tr,
                Partition::Val => va,
                Partition::Test => te,
                Partition::All => ds,
            }
        }
        (None, Some(path)) => {
            let bins = scan_bins(path)?;
            let want = ck.config.bins;
            if bins != want {
                return Err(CliError::data(format!(
                    "dimension error: {} has {bins} bins but the checkpoint expects {}x{want}",
                    path.display(),
                    ck.config.marks
                )));
            }
            let ds = binarize_labels(&load_dataset(path, bins)?)?;
            check_shape(&ck, &ds)?;
            ds
        }
        (None, None) => return Err(CliError::config("either --config or --dataset is required")),
    };
    Ok((ck, ds))
}

fn check_shape(ck: &Checkpoint, ds: &Dataset) -> Result<(), CliError> {
    let (m, t) = (ck.config.marks, ck.config.bins);
    if ds.marks() != m || ds.bins() != t {
        return Err(CliError::data(format!(
            "dimension error: dataset is {}x{} (marks x bins) but the checkpoint expects {m}x{t}",
            ds.marks(),
            ds.bins()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub auc: f64,
    pub f1: f64,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Metrics, CliError> {
    let (ck, ds) = load_eval_data(&a.data)?;
    let scored = interpret::score(&ds, &ck.params, &ck.config)?;
    let (n_pos, n_neg) = scored.class_counts();
    let metrics = Metrics {
        auc: auc(&scored)?,
        f1: f1(&scored, a.threshold)?,
        n: scored.len(),
        n_pos,
        n_neg,
    };
    let text = toml::to_string(&metrics).expect("metrics serialize");
    print!("{text}");
    if let Some(out) = &a.out {
        atomic_write_all(&[(out, text.as_bytes())])?;
    }
    Ok(metrics)
}

pub fn cmd_attend(a: &AttendArgs) -> Result<(), CliError> {
    let (ck, ds) = load_eval_data(&a.data)?;
    let class: Label = a.class.into();
    let map = mean_attention(&ck.params, &ck.config, &ds, class)?;
    let (sal, _) = mean_saliency(&ck.params, &ck.config, &ds, class)?;

    let names: Vec<String> = ds.mark_names().to_vec();
    let alpha_names: Vec<String> = if ck.config.variant.per_mark() {
        names.clone()
    } else {
        vec!["joint".into()]
    };
    let alpha = MarkProfiles {
        bins: ds.bins(),
        rows: alpha_names
            .iter()
            .enumerate()
            .map(|(r, n)| (n.clone(), map.alpha_mean.row(r).to_vec()))
            .collect(),
    };
    let saliency = MarkProfiles {
        bins: ds.bins(),
        rows: names
            .iter()
            .enumerate()
            .map(|(r, n)| (n.clone(), sal.row(r).to_vec()))
            .collect(),
    };

    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut buf = Vec::new();
    alpha.write_csv(&mut buf, "alpha_mean")?;
    files.push((a.out_dir.join("alpha_mean.csv"), buf));
    let mut buf = Vec::new();
    saliency.write_csv(&mut buf, "saliency_mean")?;
    files.push((a.out_dir.join("saliency_mean.csv"), buf));
    if let Some(beta) = &map.beta_mean {
        let mut text = String::from("mark,beta_mean\n");
        for (n, b) in names.iter().zip(beta) {
            text.push_str(&format!("{n},{b}\n"));
        }
        files.push((a.out_dir.join("beta_mean.csv"), text.into_bytes()));
    }
    if let Some(reference) = &a.reference {
        let refs = MarkProfiles::load(reference, ds.bins())?;
        let mut text = String::from("mark,alpha_r,saliency_r\n");
        for (name, values) in &refs.rows {
            let cell = |profiles: &MarkProfiles| match profiles.get(name) {
                Some(w) => match interpretation_correlation(w, values) {
                    Ok(r) => r.to_string(),
                    Err(_) => "NA".to_string(),
                },
                None => "NA".to_string(),
            };
            text.push_str(&format!("{name},{},{}\n", cell(&alpha), cell(&saliency)));
        }
        files.push((a.out_dir.join("correlation.csv"), text.into_bytes()));
    }
    std::fs::create_dir_all(&a.out_dir)
        .map_err(|e| CliError::data(format!("{}: {e}", a.out_dir.display())))?;
    let refs: Vec<(&Path, &[u8])> = files.iter().map(|(p, b)| (p.as_path(), b.as_slice())).collect();
    atomic_write_all(&refs)?;
    eprintln!("averaged {} samples; wrote {}", map.n_samples, a.out_dir.display());
    Ok(())
}
