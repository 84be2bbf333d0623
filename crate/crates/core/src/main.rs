use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use msct_core::harness::{
    apply_gen, format_kv, gen_kv, prepare_scan, read_results, render_markdown, sweep, train, write_results,
    write_trajectory, KvFile, Prepared, ResultRow, SweepConfig, TrainConfig,
};
use msct_core::imaging::{lung_area, ImagingConfig};
use msct_core::kds::{preprocess_volume, LabeledBundle, Preprocessed};
use msct_core::metrics::evaluate;
use msct_core::nncore::{load_checkpoint, save_checkpoint, ModelConfig, ModelParams, Precision};
use msct_core::objective::LossKind;
use msct_core::scanio::{load_manifest_with, load_scan, manifest_root, Split};
use msct_core::seeding::hex_digest;
use msct_core::synthgen::{generate_dataset, GenConfig};
use msct_core::Error;

#[derive(Parser)]
#[command(name = "msct", version, about = "Synthetic multi-source CT COVID-19 detection experiments")]
struct Cli {
    /// Flat `key = value` file with namespaced keys (gen.*, train.*, sweep.*).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter, e.g. `info` or `msct_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-source dataset.
    Gen(GenArgs),
    /// Validate, select and bundle every scan into the cache.
    Preprocess(PreprocessArgs),
    /// Train one configuration and keep the best-F1 checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Run the baseline plus every loss kind x gamma for each seed.
    Sweep(SweepArgs),
    /// Render a results CSV as markdown tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of the reference scan counts.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args, Default)]
struct TrainOpts {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    /// f64 (default) or f32.
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    lung_threshold: Option<f64>,
    /// Probability cut-off for accuracy, sensitivity, specificity and F1.
    #[arg(long)]
    threshold: Option<f64>,
    /// Use uniform source priors instead of the training split's.
    #[arg(long)]
    uniform_priors: bool,
}

impl TrainOpts {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = &self.manifest {
            c.manifest = v.clone();
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.lr {
            c.lr = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = self.resolution {
            c.model.resolution = v;
        }
        if let Some(v) = self.feature_dim {
            c.model.feature_dim = v;
        }
        if self.no_augment {
            c.augment = false;
        }
        if let Some(v) = self.precision {
            c.precision = v;
        }
        if let Some(v) = &self.cache_dir {
            c.cache_dir = Some(v.clone());
        }
        if let Some(v) = self.lung_threshold {
            c.lung_threshold = v;
        }
        if let Some(v) = self.threshold {
            c.decision_threshold = v;
        }
        if self.uniform_priors {
            c.uniform_priors = true;
        }
    }
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Write one `slice_index,area,usable,selected` CSV per scan here.
    #[arg(long)]
    dump_areas: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// bce_only, mt_ce or mt_la.
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for result.csv, trajectory.csv and best.msck.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    opts: TrainOpts,
    /// Which manifest split to score.
    #[arg(long, default_value = "val")]
    split: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    opts: TrainOpts,
    /// Comma-separated gamma grid.
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    /// Comma-separated multi-task kinds: ce, la.
    #[arg(long, value_delimiter = ',')]
    losses: Option<Vec<LossKind>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configurations one after another.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    /// Write the markdown here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    opts: TrainOpts,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn load_file(cli: &Cli) -> Result<KvFile, Failure> {
    match &cli.config {
        Some(p) => KvFile::load(p).map_err(usage),
        None => Ok(KvFile::default()),
    }
}

fn train_config(file: &KvFile, opts: &TrainOpts) -> Result<TrainConfig, Failure> {
    let mut c = TrainConfig::default();
    c.apply(file).map_err(usage)?;
    opts.apply(&mut c);
    Ok(c)
}

fn print_config(kv: &[(String, String)]) {
    print!("{}", format_kv(kv));
    println!();
}

fn cmd_gen(file: &KvFile, a: &GenArgs) -> Result<(), Failure> {
    let mut c = GenConfig::default();
    if let Some(s) = a.scale {
        c = GenConfig::scaled(s);
    }
    apply_gen(&mut c, file).map_err(usage)?;
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.resolution {
        c.resolution = v;
    }
    c.check().map_err(usage)?;
    let mut kv = gen_kv(&c);
    kv.push(("gen.out".into(), a.out.display().to_string()));
    print_config(&kv);
    let manifest = generate_dataset(&c, &a.out)?;
    let bytes = fs::read(&manifest).map_err(|e| Error::Io {
        path: manifest.clone(),
        source: e,
    })?;
    println!("manifest {}", manifest.display());
    println!("manifest_sha256 {}", hex_digest(&Sha256::digest(&bytes)));
    Ok(())
}

fn cmd_preprocess(file: &KvFile, a: &PreprocessArgs) -> Result<(), Failure> {
    let c = train_config(file, &a.opts)?.checked().map_err(usage)?;
    let kv: Vec<_> = c
        .to_kv()
        .into_iter()
        .filter(|(k, _)| matches!(k.as_str(), "train.manifest" | "train.resolution" | "train.lung_threshold" | "train.cache_dir"))
        .collect();
    print_config(&kv);
    let records = load_manifest_with(&c.manifest, c.model.num_sources)?;
    let root = manifest_root(&c.manifest);
    let imaging = c.imaging();
    let cache = c.resolved_cache_dir();
    let (mut ok, mut rejected) = (0, 0);
    for r in &records {
        match prepare_scan(r, &root, &imaging, Some(&cache))? {
            Prepared::Bundle(_) => ok += 1,
            Prepared::Rejected { scan_id, reason } => {
                rejected += 1;
                println!("rejected {scan_id}: {reason}");
            }
        }
    }
    if let Some(dir) = &a.dump_areas {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for r in &records {
            dump_areas(&load_scan(r, &root)?, &imaging, &dir.join(format!("{}.csv", r.scan_id)))?;
        }
    }
    println!("bundled {ok} scans, rejected {rejected}, cache {}", cache.display());
    Ok(())
}

fn dump_areas(volume: &msct_core::scanio::ScanVolume, imaging: &ImagingConfig, path: &Path) -> Result<(), Error> {
    let (usable, selected) = match preprocess_volume(volume, imaging) {
        Preprocessed::Bundle { bundle, profile } => (profile.slice_indices, bundle.chosen_indices.to_vec()),
        Preprocessed::Rejected(_) => (Vec::new(), Vec::new()),
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["slice_index", "area", "usable", "selected"])?;
    for z in 0..volume.depth {
        let area = lung_area(&volume.slice(z), imaging.threshold);
        w.write_record([
            z.to_string(),
            area.to_string(),
            u8::from(usable.contains(&z)).to_string(),
            u8::from(selected.contains(&z)).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(file: &KvFile, a: &TrainArgs) -> Result<(), Failure> {
    let mut c = train_config(file, &a.opts)?;
    if let Some(v) = a.loss {
        c.loss = v;
    }
    if let Some(v) = a.gamma {
        c.gamma = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    let c = c.checked().map_err(usage)?;
    let mut kv = c.to_kv();
    kv.push(("train.out".into(), a.out.display().to_string()));
    print_config(&kv);
    let result = train(&c)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    write_results(&[ResultRow::from_run(&result)], c.model.num_sources, &a.out.join("result.csv"))?;
    write_trajectory(&result, &a.out.join("trajectory.csv"))?;
    save_checkpoint(&result.best_params, &a.out.join("best.msck"))?;
    println!("best epoch {}", result.best_epoch);
    println!("{}", result.best);
    println!("final_score_exact {}", result.best.final_score);
    Ok(())
}

fn cmd_eval(file: &KvFile, a: &EvalArgs) -> Result<(), Failure> {
    let mut c = train_config(file, &a.opts)?;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        other => return Err(Failure::Usage(format!("unknown split {other:?}"))),
    };
    let params: ModelParams<f64> = load_checkpoint(&a.checkpoint)?;
    c.model = ModelConfig {
        dropout: c.model.dropout,
        ..params.config.clone()
    };
    let mut kv: Vec<_> = c
        .to_kv()
        .into_iter()
        .filter(|(k, _)| {
            matches!(
                k.as_str(),
                "train.manifest" | "train.resolution" | "train.feature_dim" | "train.widths" | "train.lung_threshold"
                    | "train.decision_threshold" | "train.cache_dir"
            )
        })
        .collect();
    kv.push(("eval.checkpoint".into(), a.checkpoint.display().to_string()));
    kv.push(("eval.split".into(), a.split.clone()));
    print_config(&kv);
    let records = load_manifest_with(&c.manifest, c.model.num_sources)?;
    let root = manifest_root(&c.manifest);
    let cache = c.resolved_cache_dir();
    let mut items: Vec<LabeledBundle> = Vec::new();
    for r in records.iter().filter(|r| r.split == split) {
        if let Prepared::Bundle(b) = prepare_scan(r, &root, &c.imaging(), Some(&cache))? {
            items.push(b);
        }
    }
    let report = evaluate(&params, &items, c.decision_threshold)?;
    println!("{report}");
    println!("final_score_exact {}", report.final_score);
    Ok(())
}

fn cmd_sweep(file: &KvFile, a: &SweepArgs) -> Result<(), Failure> {
    let mut s = SweepConfig::default();
    s.apply(file).map_err(usage)?;
    a.opts.apply(&mut s.base);
    if let Some(v) = &a.gammas {
        s.gammas = v.clone();
    }
    if let Some(v) = &a.losses {
        s.losses = v.clone();
    }
    if let Some(v) = &a.seeds {
        s.seeds = v.clone();
    }
    if let Some(v) = &a.out {
        s.out_dir = v.clone();
    }
    if a.sequential {
        s.parallel = false;
    }
    s.check().map_err(usage)?;
    s.base.clone().baseline().checked().map_err(usage)?;
    print_config(&s.to_kv());
    let outcome = sweep(&s)?;
    let failed = outcome.rows.iter().filter(|r| r.metrics.is_none()).count();
    println!("{}", fs::read_to_string(&outcome.markdown).unwrap_or_default());
    println!("results {}", outcome.results_csv.display());
    println!("report {}", outcome.markdown.display());
    for p in &outcome.gamma_curves {
        println!("gamma_curve {}", p.display());
    }
    println!("runs {} failed {failed}", outcome.rows.len());
    Ok(())
}

fn cmd_report(file: &KvFile, a: &ReportArgs) -> Result<(), Failure> {
    let c = train_config(file, &a.opts)?;
    let mut kv = vec![("report.results".to_string(), a.results.display().to_string())];
    kv.push(("train.feature_dim".into(), c.model.feature_dim.to_string()));
    kv.push(("train.resolution".into(), c.model.resolution.to_string()));
    print_config(&kv);
    let rows = read_results(&a.results)?;
    let md = render_markdown(&rows, &c.model);
    match &a.out {
        Some(p) => fs::write(p, md).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => print!("{md}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let file = load_file(cli)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(&file, a),
        Command::Preprocess(a) => cmd_preprocess(&file, a),
        Command::Train(a) => cmd_train(&file, a),
        Command::Eval(a) => cmd_eval(&file, a),
        Command::Sweep(a) => cmd_sweep(&file, a),
        Command::Report(a) => cmd_report(&file, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&std::env::var("RUST_LOG").unwrap_or_else(|_| cli.log.clone()))
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
