//! `depthfill` command line: dataset generation, training, evaluation,
//! inference and the ablation run.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::dataset::{Dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::io::{
    read_color_png, read_depth_png, read_split, write_dataset, write_depth_png, SparseDepthMap,
};
use crate::kv::KvMap;
use crate::metrics::{evaluate, MetricReport};
use crate::network::{load_checkpoint, save_checkpoint, DepthNet, Variant};
use crate::synth::{generate_dataset, Pattern, SynthConfig};
use crate::tensor::{Tensor, ValidityMask};
use crate::train::{
    history_csv, predict, run_ablation, train_with, EpochRecord, Status, TrainConfig,
};
use crate::viz::{write_confidence_viz, write_depth_viz};

pub const RUN_MANIFEST: &str = "run_manifest.txt";
pub const ENV_PREFIX: &str = "SDK_";

#[derive(Debug, Parser)]
#[command(
    name = "depthfill",
    version,
    about = "Confidence-guided sparse depth completion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset in the KITTI directory layout.
    SynthGen(SynthGenArgs),
    /// Train one variant.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Complete one sparse depth map.
    Infer(InferArgs),
    /// Train all four variants and tabulate validation metrics.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Image size as HxW; both multiples of 8.
    #[arg(long, default_value = "64x256", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0.04)]
    pub sparse_density: f64,
    #[arg(long, default_value_t = 0.16)]
    pub gt_density: f64,
    #[arg(long, default_value_t = Pattern::Scanline)]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Allow writing into a non-empty directory (existing splits are replaced).
    #[arg(long)]
    pub force: bool,
}

/// Options shared by `train` and `ablate`.
#[derive(Debug, Args)]
pub struct TrainingOptions {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sequential batch processing.
    #[arg(long)]
    pub deterministic: bool,
    /// Start from the paper-scale defaults (batch 8, width 32) instead of the desk-scale ones.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One of B, CRDR, CRDR+SFFM, CRDR+SFFM+CGM (alias: full).
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory to resume from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainingOptions,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = Split::Val)]
    pub split: Split,
    /// Also write metrics.csv and metrics.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 8-bit RGB PNG.
    #[arg(long)]
    pub image: PathBuf,
    /// 16-bit KITTI depth PNG.
    #[arg(long)]
    pub sparse: PathBuf,
    /// Output 16-bit depth PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Write colour-mapped intermediate maps into this directory.
    #[arg(long)]
    pub dump_intermediates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of variants.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    pub variants: Option<Vec<Variant>>,
    #[command(flatten)]
    pub opts: TrainingOptions,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: KvMap,
    pub seed: Option<u64>,
    pub artifacts: Vec<PathBuf>,
    pub timings: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            ..Self::default()
        }
    }

    pub fn time<R>(&mut self, phase: &str, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        self.timings
            .push((phase.to_string(), t0.elapsed().as_secs_f64()));
        r
    }

    pub fn to_text(&self) -> String {
        let mut kv = KvMap::new();
        kv.set("command", &self.command);
        kv.set("tool_version", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            kv.set("seed", seed);
        }
        for (k, v) in self.config.iter() {
            kv.set(format!("config.{k}"), v);
        }
        for (i, a) in self.artifacts.iter().enumerate() {
            kv.set(format!("artifact.{i:03}"), a.display());
        }
        for (phase, secs) in &self.timings {
            kv.set(format!("seconds.{phase}"), format!("{secs:.3}"));
        }
        for (i, n) in self.notes.iter().enumerate() {
            kv.set(format!("note.{i:03}"), n);
        }
        kv.to_text()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Diverged { .. } | Error::NonFinite(_) => 4,
        _ => 3,
    }
}

/// `SDK_<KEY>` environment variables as config keys (lower-cased).
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> KvMap {
    let known = TrainConfig::all_keys();
    let mut kv = KvMap::new();
    for (k, v) in vars {
        let Some(key) = k.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = key.to_ascii_lowercase();
        if known.contains(&key.as_str()) {
            kv.set(key, v);
        } else {
            log::warn!("ignoring {k}: {key} is not a config key");
        }
    }
    kv
}

/// Defaults, then the config file, then `SDK_` variables, then flags.
fn resolve_config(opts: &TrainingOptions, variant: Option<Variant>) -> Result<TrainConfig> {
    let base = if opts.paper_scale {
        TrainConfig::default()
    } else {
        TrainConfig::desk(Variant::Full)
    };
    let mut kv = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            KvMap::parse(&text)?
        }
        None => KvMap::new(),
    };
    kv.merge(&env_overrides(std::env::vars()));
    let mut cfg = TrainConfig::from_kv(&kv, &base)?;
    if let Some(v) = variant {
        cfg.network.variant = v;
    }
    if let Some(e) = opts.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.deterministic |= opts.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_empty_or_forced(dir: &Path, force: bool) -> Result<()> {
    let non_empty = dir.is_dir()
        && fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
    if non_empty && !force {
        return Err(Error::InvalidArgument(format!(
            "{} exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_train_val(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Data(format!(
            "data directory {} does not exist",
            root.display()
        )));
    }
    let test = if root.join(Split::Test.as_str()).is_dir() {
        read_split(root, Split::Test)?
    } else {
        Vec::new()
    };
    Ok(Dataset {
        train: read_split(root, Split::Train)?,
        val: read_split(root, Split::Val)?,
        test,
    })
}

pub fn cmd_synth_gen(args: &SynthGenArgs) -> Result<()> {
    ensure_empty_or_forced(&args.out, args.force)?;
    let cfg = SynthConfig {
        scenes: args.scenes,
        height: args.size.0,
        width: args.size.1,
        sparse_density: args.sparse_density,
        gt_density: args.gt_density,
        sparse_pattern: args.pattern,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let mut manifest = RunManifest::new("synth-gen");
    manifest.seed = Some(args.seed);
    manifest.config.set("scenes", cfg.scenes);
    manifest
        .config
        .set("size", format!("{}x{}", cfg.height, cfg.width));
    manifest.config.set("sparse_density", cfg.sparse_density);
    manifest.config.set("gt_density", cfg.gt_density);
    manifest.config.set("pattern", cfg.sparse_pattern);
    let data = manifest.time("generate", || generate_dataset(&cfg))?;
    if args.force {
        for split in Split::ALL {
            let dir = args.out.join(split.as_str());
            if dir.is_dir() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
    }
    manifest.time("write", || write_dataset(&args.out, &data))?;
    for split in Split::ALL {
        if !data.split(split).is_empty() {
            manifest.artifacts.push(args.out.join(split.as_str()));
        }
    }
    manifest.write(&args.out)?;
    println!(
        "wrote {} scenes ({} train / {} val / {} test) to {}",
        data.len(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.opts, args.variant)?;
    let mut manifest = RunManifest::new("train");
    manifest.seed = Some(cfg.seed);
    manifest.config = cfg.to_kv();
    let data = manifest.time("load", || load_train_val(&args.data))?;
    let start = args.resume.as_deref().map(load_checkpoint).transpose()?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_text(&args.out.join("config.txt"), &cfg.to_kv().to_text())?;

    let log_path = args.out.join("train_log.csv");
    let last_dir = args.out.join("last");
    let mut rows: Vec<EpochRecord> = Vec::new();
    let t0 = Instant::now();
    let outcome = train_with(&data.train, &data.val, &cfg, start, |rec, ck| {
        rows.push(*rec);
        write_text(&log_path, &history_csv(&rows))?;
        save_checkpoint(&last_dir, ck)
    })?;
    manifest
        .timings
        .push(("train".into(), t0.elapsed().as_secs_f64()));
    let best_dir = args.out.join("best");
    save_checkpoint(&best_dir, &outcome.best)?;
    save_checkpoint(&last_dir, &outcome.last)?;
    write_text(&log_path, &outcome.log_csv())?;
    manifest.artifacts.extend([log_path, best_dir, last_dir]);
    if let Status::Diverged { epoch, reason } = &outcome.status {
        manifest
            .notes
            .push(format!("diverged at epoch {epoch}: {reason}"));
    }
    manifest.write(&args.out)?;
    match outcome.status {
        Status::Converged => {
            println!(
                "trained {} for {} epochs; best val RMSE at epoch {}",
                cfg.variant(),
                cfg.epochs,
                outcome.best_epoch
            );
            Ok(())
        }
        Status::Diverged { epoch, reason } => Err(Error::Diverged { epoch, reason }),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::new("eval");
    let ck = manifest.time("load", || load_checkpoint(&args.checkpoint))?;
    let samples = read_split(&args.data, args.split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "split {} of {} is empty",
            args.split,
            args.data.display()
        )));
    }
    let report = manifest.time("evaluate", || {
        let reports = samples
            .iter()
            .map(|s| evaluate(&predict(&ck.net, s)?, s.gt.depth()))
            .collect::<Result<Vec<_>>>()?;
        MetricReport::mean(&reports)
    })?;
    let csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row());
    print!("{csv}{}", report.to_text());
    if let Some(out) = &args.out {
        write_text(&out.join("metrics.csv"), &csv)?;
        write_text(&out.join("metrics.txt"), &report.to_text())?;
        manifest.config.set("checkpoint", args.checkpoint.display());
        manifest.config.set("split", args.split);
        manifest
            .artifacts
            .extend([out.join("metrics.csv"), out.join("metrics.txt")]);
        manifest.write(out)?;
    }
    Ok(())
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Mirror-pad a `C x H x W` tensor at the bottom and right to `(h, w)`.
pub fn pad_reflect(t: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (c, h0, w0) = t.chw()?;
    let d = t.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ci, y, x) = (i / (h * w), (i / w) % h, i % w);
        d[(ci * h0 + reflect_index(y as isize, h0)) * w0 + reflect_index(x as isize, w0)]
    }))
}

pub fn crop(t: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (c, h0, w0) = t.chw()?;
    if h > h0 || w > w0 {
        return Err(Error::Shape(format!("cannot crop {h0}x{w0} to {h}x{w}")));
    }
    let d = t.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ci, y, x) = (i / (h * w), (i / w) % h, i % w);
        d[(ci * h0 + y) * w0 + x]
    }))
}

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let mut manifest = RunManifest::new("infer");
    let ck = load_checkpoint(&args.checkpoint)?;
    let net: &DepthNet<f32> = &ck.net;
    let color = read_color_png(&args.image)?;
    let sparse = read_depth_png(&args.sparse)?;
    let (h, w) = (sparse.height(), sparse.width());
    if color.shape() != [3, h, w] {
        return Err(Error::Data(format!(
            "image is {:?} but sparse depth is {h}x{w}",
            color.shape()
        )));
    }
    let m = net.config().size_multiple();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let (color_p, sparse_p) = if (hp, wp) != (h, w) {
        manifest.notes.push(format!(
            "input {h}x{w} reflect-padded to {hp}x{wp} and cropped back"
        ));
        log::info!("padding {h}x{w} to {hp}x{wp}");
        (
            pad_reflect(&color, hp, wp)?,
            SparseDepthMap::from_depth(pad_reflect(sparse.depth(), hp, wp)?)?,
        )
    } else {
        (color, sparse)
    };
    let sample = Sample::new(color_p.clone(), sparse_p.clone(), sparse_p.clone())?;
    let out = manifest.time("forward", || net.forward(&sample.color, &sample.sparse))?;
    let d_max = net.config().guidance.d_max;
    let final_depth = crop(&predict(net, &sample)?, h, w)?;
    let final_map = SparseDepthMap::from_depth(final_depth.clone())?;
    write_depth_png(&final_map, &args.out)?;
    manifest.artifacts.push(args.out.clone());

    if let Some(dir) = &args.dump_intermediates {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut depth_maps = vec![("d_c", crop(&out.d_c, h, w)?)];
        let mut conf_maps = Vec::new();
        if let Some(b) = &out.branches {
            depth_maps.push(("d_cr", crop(&b.d_cr, h, w)?));
            depth_maps.push(("d_dr", crop(&b.d_dr, h, w)?));
            conf_maps.push(("c_cr_adjusted", crop(&b.c_cr_adj, h, w)?));
            conf_maps.push(("c_dr_adjusted", crop(&b.c_dr_adj, h, w)?));
        }
        depth_maps.push(("d_final", final_depth));
        for (name, t) in &depth_maps {
            let p = dir.join(format!("{name}.png"));
            write_depth_viz(t, d_max, &p)?;
            manifest.artifacts.push(p);
        }
        for (name, t) in &conf_maps {
            let p = dir.join(format!("{name}.png"));
            write_confidence_viz(t, &p)?;
            manifest.artifacts.push(p);
        }
        manifest.write(dir)?;
    }
    manifest.config.set("checkpoint", args.checkpoint.display());
    manifest.config.set("variant", net.variant());
    let out_dir = args
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    manifest.write(out_dir)?;
    let valid = ValidityMask::from_positive(final_map.depth())?.count();
    println!(
        "wrote {} ({h}x{w}, {valid} valid pixels)",
        args.out.display()
    );
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let cfg = resolve_config(&args.opts, None)?;
    let variants = args
        .variants
        .clone()
        .unwrap_or_else(|| Variant::ALL.to_vec());
    let mut manifest = RunManifest::new("ablate");
    manifest.seed = Some(cfg.seed);
    manifest.config = cfg.to_kv();
    manifest.config.set(
        "variants",
        variants
            .iter()
            .map(|v| v.tag())
            .collect::<Vec<_>>()
            .join(","),
    );
    let data = manifest.time("load", || load_train_val(&args.data))?;
    let table = manifest.time("train", || run_ablation(&data, &cfg, &variants))?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for row in &table.rows {
        let slug = row.variant.tag().replace('+', "_").to_ascii_lowercase();
        let log = args.out.join(format!("train_log_{slug}.csv"));
        write_text(&log, &row.outcome.log_csv())?;
        let ck = args.out.join(format!("best_{slug}"));
        save_checkpoint(&ck, &row.outcome.best)?;
        manifest.artifacts.extend([log, ck]);
    }
    write_text(&args.out.join("ablation.csv"), &table.to_csv())?;
    write_text(&args.out.join("ablation.txt"), &table.to_text())?;
    manifest
        .artifacts
        .extend([args.out.join("ablation.csv"), args.out.join("ablation.txt")]);
    manifest.write(&args.out)?;
    print!("{}", table.to_text());
    if let Some(r) = table.full_vs_baseline() {
        println!("full vs B: {:.2}% lower val RMSE", 100.0 * r);
    }
    match table.rows.iter().find_map(|r| match &r.status {
        Status::Diverged { epoch, reason } => Some((r.variant, *epoch, reason.clone())),
        Status::Converged => None,
    }) {
        Some((v, epoch, reason)) => Err(Error::Diverged {
            epoch,
            reason: format!("{v}: {reason}"),
        }),
        None => Ok(()),
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthGen(a) => cmd_synth_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
