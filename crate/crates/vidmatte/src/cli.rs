//! `vidmatte` command-line interface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use vidmatte_core::compositor::SynthesisConfig;
use vidmatte_core::image::{AlphaClip, Clip, MotionField, Trimap};
use vidmatte_core::metrics::{aggregate, evaluate, sad_per_frame, MetricReport};
use vidmatte_core::trainer::{self, eval_trimaps, propagate_clip, toy_dataset, NetKind, TrimapSetting};

use crate::checkpoint;
use crate::config;
use crate::dataset::{self, sample_dir_name, DatasetManifest, Sources, MANIFEST_FILE, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::motion::{motion_name, read_flow};
use crate::pngio::{self, list_frames};
use crate::report::{self, ClipReport, EvaluationReport, Metrics, TrainLog};

#[derive(Parser, Debug)]
#[command(name = "vidmatte", version, about = "Synthetic video matting: data synthesis, training, trimap propagation, matting and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Composite foregrounds over background clips and write a dataset directory.
    Synthesize(SynthesizeArgs),
    /// Train the trimap propagation or matting network from a config file.
    Train(TrainArgs),
    /// Propagate trimaps from labelled frames to every frame of a clip.
    Propagate(PropagateArgs),
    /// Predict 16-bit alpha mattes for a clip.
    Matte(MatteArgs),
    /// Score predicted mattes against a dataset's groundtruth.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FgMode {
    /// Soft-edged random blobs.
    Procedural,
    /// `<name>.png` images with `<name>_alpha.png` mattes from `--fg-dir`.
    Files,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 5)]
    pub num: u64,
    /// Frames per sample.
    #[arg(long, default_value_t = 9)]
    pub frames: usize,
    /// Frame side length in pixels.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FgMode::Procedural)]
    pub fg_mode: FgMode,
    /// Foreground image/matte pairs, required with `--fg-mode files`.
    #[arg(long)]
    pub fg_dir: Option<PathBuf>,
    /// Background frame sequences (the directory itself or its subdirectories); procedural when omitted.
    #[arg(long)]
    pub bg_dir: Option<PathBuf>,
    /// Worker threads; the output does not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NetArg {
    Trimap,
    Matting,
}

impl From<NetArg> for NetKind {
    fn from(n: NetArg) -> Self {
        match n {
            NetArg::Trimap => NetKind::Trimap,
            NetArg::Matting => NetKind::Matting,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub net: NetArg,
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory written by `synthesize`.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many procedural 96×96, 9-frame samples instead of a dataset.
    #[arg(long)]
    pub synthetic: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV training log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PropagateArgs {
    /// Trimap network checkpoint; needed whenever some frame is unlabelled.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `frame_*.png` images.
    #[arg(long)]
    pub clip_dir: PathBuf,
    /// Trimaps of the labelled frames, named like the frames they belong to.
    #[arg(long)]
    pub trimap_dir: PathBuf,
    /// Comma-separated labelled frame indices.
    #[arg(long, value_delimiter = ',', conflicts_with = "setting")]
    pub labeled: Vec<usize>,
    /// `full`, `<k>-frame` or `1-trimap`.
    #[arg(long)]
    pub setting: Option<String>,
    /// Output directory for all trimaps.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatteArgs {
    /// Matting network checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub clip_dir: PathBuf,
    /// One trimap per frame, named like the frames.
    #[arg(long)]
    pub trimap_dir: PathBuf,
    /// Temporal window radius; must match the checkpoint.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory for 16-bit alpha PNGs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MotionSource {
    /// Motion files listed in each sample manifest.
    Manifest,
    /// Skip the motion-compensated metric.
    None,
    /// `<motion-dir>/<sample>/motion_*.bin`.
    Files,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskRegion {
    /// Unknown region of the groundtruth trimap.
    Unknown,
    /// Every pixel.
    Full,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predictions as `<pred>/<sample>/frame_*.png`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Groundtruth dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = MotionSource::Manifest)]
    pub motion: MotionSource,
    #[arg(long)]
    pub motion_dir: Option<PathBuf>,
    /// Pixels the metrics are computed over.
    #[arg(long, value_enum, default_value_t = MaskRegion::Unknown)]
    pub mask: MaskRegion,
    /// Structuring element of the evaluation trimaps.
    #[arg(long, default_value_t = 2)]
    pub trimap_kernel: usize,
    #[arg(long, default_value_t = 3)]
    pub trimap_iterations: usize,
    /// JSON report path.
    #[arg(long)]
    pub json: PathBuf,
    /// Per-frame SAD CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-clip metric table CSV path.
    #[arg(long)]
    pub summary_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synthesize(a) => synthesize(&a),
        Command::Train(a) => train(&a),
        Command::Propagate(a) => propagate(&a),
        Command::Matte(a) => matte(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Usage(e.to_string()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(Error::Usage(format!("{} exists and is not a directory", dir.display())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synthesize(a: &SynthesizeArgs) -> Result<()> {
    let cfg = SynthesisConfig { height: a.size, width: a.size, frames: a.frames, ..SynthesisConfig::default() };
    cfg.validate()?;
    let mut sources = Sources::default();
    match (a.fg_mode, &a.fg_dir) {
        (FgMode::Files, Some(dir)) => sources.foregrounds = Sources::foregrounds_from_dir(dir)?,
        (FgMode::Files, None) => return Err(Error::Usage("--fg-mode files requires --fg-dir".into())),
        (FgMode::Procedural, Some(_)) => return Err(Error::Usage("--fg-dir is only used with --fg-mode files".into())),
        (FgMode::Procedural, None) => {}
    }
    if let Some(dir) = &a.bg_dir {
        sources.backgrounds = Sources::backgrounds_from_dir(dir)?;
    }
    let pool = pool(a.workers)?;
    ensure_dir(&a.out)?;
    let manifests = pool.install(|| {
        (0..a.num)
            .into_par_iter()
            .map(|i| {
                let sample = dataset::synthesize_sample(&cfg, &sources, a.seed, i)?;
                let name = sample_dir_name(i);
                dataset::write_sample(&a.out.join(&name), &sample, &cfg, a.seed, i, sources.fg_mode())?;
                Ok(format!("{name}/{MANIFEST_FILE}"))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        seed: a.seed,
        fg_mode: sources.fg_mode().into(),
        height: cfg.height,
        width: cfg.width,
        frames: cfg.frames,
        samples: manifests,
    };
    dataset::write_json(&a.out.join(MANIFEST_FILE), &manifest)
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))
        })
        .collect()
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut overrides = parse_overrides(&a.set)?;
    if let Some(seed) = a.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let net: NetKind = a.net.into();
    let cfg = config::load(&a.config, Some(net), &overrides)?;
    let resume = a.resume.as_deref().map(checkpoint::load).transpose()?;
    if let Some(ck) = &resume {
        if ck.config.net != net {
            return Err(Error::Usage(format!("cannot resume a {} checkpoint as {}", ck.config.net.name(), net.name())));
        }
    }
    let data = match (&a.data, a.synthetic) {
        (Some(dir), _) => dataset::load_dataset(dir)?,
        (None, Some(count)) => {
            let syn = SynthesisConfig { height: 96, width: 96, frames: 9, ..SynthesisConfig::default() };
            toy_dataset(&syn, cfg.seed, count as usize)?
        }
        (None, None) => return Err(Error::Usage("one of --data or --synthetic is required".into())),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let mut log = a.log.as_deref().map(|p| TrainLog::create(p, resume.is_some())).transpose()?;
    let mut log_err = None;
    if let Some(ck) = &resume {
        eprintln!("resuming at step {} (epoch {})", ck.step, ck.epoch());
    }
    let mut record = |s: &trainer::StepLog| {
        if let (Some(l), None) = (log.as_mut(), &log_err) {
            log_err = l.record(s).err();
        }
    };
    let ck = match net {
        NetKind::Matting => trainer::train_matting(&cfg, &data, resume, &mut record)?,
        NetKind::Trimap => trainer::train_trimap(&cfg, &data, resume, &mut record)?,
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    if let Some(l) = log {
        l.finish()?;
    }
    checkpoint::save(&a.out, &ck)?;
    eprintln!("trained to step {} (epoch {}), last loss {:.6}", ck.step, ck.epoch(), ck.last_loss);
    Ok(())
}

fn read_clip(dir: &Path) -> Result<(Vec<PathBuf>, Clip)> {
    let paths = list_frames(dir)?;
    let frames = paths.iter().map(|p| pngio::read_rgb(p)).collect::<Result<Vec<_>>>()?;
    Ok((paths, Clip::new(frames, None)?))
}

fn file_name(p: &Path) -> &std::ffi::OsStr {
    p.file_name().expect("listed frames have names")
}

fn propagate(a: &PropagateArgs) -> Result<()> {
    let (paths, clip) = read_clip(&a.clip_dir)?;
    let len = clip.len();
    let labeled = match (&a.setting, a.labeled.is_empty()) {
        (Some(s), _) => TrimapSetting::from_name(s)?.labeled(len),
        (None, false) => {
            let mut l = a.labeled.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        (None, true) => return Err(Error::Usage("give --labeled frames or a --setting".into())),
    };
    if let Some(&bad) = labeled.iter().find(|&&t| t >= len) {
        return Err(Error::Usage(format!("labelled frame {bad} is outside the {len}-frame clip")));
    }
    let mut given: Vec<Option<Trimap>> = vec![None; len];
    for &t in &labeled {
        let path = a.trimap_dir.join(file_name(&paths[t]));
        let tri = pngio::read_trimap(&path)?;
        if tri.height() != clip.height() || tri.width() != clip.width() {
            return Err(Error::format(&path, "trimap size differs from its frame"));
        }
        given[t] = Some(tri);
    }
    let trimaps = if labeled.len() == len {
        given.iter().flatten().cloned().collect()
    } else {
        let path = a.checkpoint.as_deref().ok_or_else(|| Error::Usage("--checkpoint is required to propagate to unlabelled frames".into()))?;
        let ck = checkpoint::load(path)?;
        let net = ck.trimap_net()?;
        propagate_clip(&net, &ck.params, clip.frames(), &given)?
    };
    ensure_dir(&a.out)?;
    for (t, tri) in trimaps.iter().enumerate() {
        let dst = a.out.join(file_name(&paths[t]));
        if given[t].is_some() {
            let src = a.trimap_dir.join(file_name(&paths[t]));
            std::fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
        } else {
            pngio::write_trimap(&dst, tri)?;
        }
    }
    Ok(())
}

fn matte(a: &MatteArgs) -> Result<()> {
    let (paths, clip) = read_clip(&a.clip_dir)?;
    let trimaps = paths
        .iter()
        .map(|p| {
            let path = a.trimap_dir.join(file_name(p));
            let tri = pngio::read_trimap(&path)?;
            if tri.height() != clip.height() || tri.width() != clip.width() {
                return Err(Error::format(&path, "trimap size differs from its frame"));
            }
            Ok(tri)
        })
        .collect::<Result<Vec<_>>>()?;
    let ck = checkpoint::load(&a.checkpoint)?;
    if let Some(n) = a.n {
        if n != ck.config.n {
            return Err(Error::Usage(format!("--n {n} differs from the checkpoint's n = {}", ck.config.n)));
        }
    }
    let net = ck.matting_net()?;
    let alpha = net.predict_clip(&ck.params, &clip, &trimaps)?;
    ensure_dir(&a.out)?;
    for (p, frame) in paths.iter().zip(alpha.frames()) {
        pngio::write_alpha16(&a.out.join(file_name(p)), frame)?;
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    if a.trimap_kernel == 0 {
        return Err(Error::Usage("--trimap-kernel must be at least 1".into()));
    }
    if (a.motion == MotionSource::Files) != a.motion_dir.is_some() {
        return Err(Error::Usage("--motion-dir goes with --motion files".into()));
    }
    let manifest_path = a.data.join(MANIFEST_FILE);
    let manifest: DatasetManifest = dataset::read_json(&manifest_path)?;
    let clips: Vec<(String, PathBuf)> = manifest
        .samples
        .iter()
        .map(|s| {
            let dir = a.data.join(s).parent().map(Path::to_path_buf).unwrap_or_else(|| a.data.clone());
            let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (name, dir)
        })
        .collect();
    if clips.is_empty() {
        return Err(Error::format(&manifest_path, "dataset lists no samples"));
    }
    let pool = pool(a.workers)?;
    let results = pool.install(|| clips.par_iter().map(|(name, dir)| evaluate_clip(a, name, dir)).collect::<Result<Vec<_>>>())?;
    let (reports, per_frame): (Vec<MetricReport>, Vec<Vec<f64>>) = results.into_iter().unzip();
    let agg = aggregate(&reports).expect("non-empty");
    let report = EvaluationReport {
        motion: format!("{:?}", a.motion).to_lowercase(),
        mask: format!("{:?}", a.mask).to_lowercase(),
        clips: clips.iter().zip(&reports).map(|((name, _), r)| ClipReport { clip: name.clone(), metrics: Metrics::from(r) }).collect(),
        aggregate: Metrics::from(&agg),
    };
    dataset::write_json(&a.json, &report)?;
    if let Some(csv) = &a.csv {
        let rows: Vec<(String, Vec<f64>)> = clips.iter().map(|(name, _)| name.clone()).zip(per_frame).collect();
        report::write_frame_csv(csv, &rows)?;
    }
    if let Some(csv) = &a.summary_csv {
        report::write_csv(csv, &report)?;
    }
    Ok(())
}

fn evaluate_clip(a: &EvaluateArgs, name: &str, dir: &Path) -> Result<(MetricReport, Vec<f64>)> {
    let sample = dataset::load_sample(dir)?;
    let pred_dir = a.pred.join(name);
    let pred_paths = list_frames(&pred_dir)?;
    if pred_paths.len() != sample.len() {
        return Err(Error::format(&pred_dir, format!("{} predicted frames for a {}-frame clip", pred_paths.len(), sample.len())));
    }
    let pred = AlphaClip::new(pred_paths.iter().map(|p| pngio::read_alpha(p)).collect::<Result<Vec<_>>>()?)?;
    let mask: Vec<Vec<bool>> = match a.mask {
        MaskRegion::Unknown => eval_trimaps(&sample, a.trimap_kernel, a.trimap_iterations)?.iter().map(Trimap::unknown_mask).collect(),
        MaskRegion::Full => vec![vec![true; sample.alpha.height() * sample.alpha.width()]; sample.len()],
    };
    let motion = match (a.motion, &a.motion_dir) {
        (MotionSource::Manifest, _) => Some(sample.motion.clone()),
        (MotionSource::None, _) => None,
        (MotionSource::Files, Some(root)) => {
            let pairs = (0..sample.len().saturating_sub(1)).map(|p| read_flow(&root.join(name).join(motion_name(p)))).collect::<Result<Vec<_>>>()?;
            Some(MotionField { pairs })
        }
        (MotionSource::Files, None) => unreachable!("checked before evaluation"),
    };
    let report = evaluate(&pred, &sample.alpha, &mask, motion.as_ref())?;
    Ok((report, sad_per_frame(&pred, &sample.alpha, &mask)?))
}
