//! Command-line front end. Reports go to stdout as JSON, logs to stderr.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest, ManifestRecord, Split};
use crate::geo::{self, DbFormat, GeoError, ZoomSpec};
use crate::nets::NetError;
use crate::raster::{
    binarize_runway, compare_masks, join_pair, remap_palette, resize_bilinear, to_unit, Mask, Palette, PaletteMap,
    RasterError, RasterImage,
};
use crate::synthworld::{self, Layout, SceneSpec, SynthError, UNPAIRED_MAX};
use crate::tileclient::{build_tile_request, ClientConfig, Style, TileClient, TileError};
use crate::train::{self, load_checkpoint, CheckpointError, Direction, Mode, TrainConfig, TrainError, TrainState};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("format error: {0}")]
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Network(_) => 4,
            CliError::Format(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<RasterError> for CliError {
    fn from(e: RasterError) -> Self {
        match e {
            RasterError::Palette(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::InvalidZoom(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Spec(_) => CliError::Config(e.to_string()),
            SynthError::Raster(r) => r.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TileError> for CliError {
    fn from(e: TileError) -> Self {
        match e {
            TileError::Config(_) | TileError::Request(_) | TileError::Credential => CliError::Config(e.to_string()),
            TileError::Offline(_) | TileError::Status { .. } | TileError::Transport(_) => CliError::Network(e.to_string()),
            TileError::Decode(_) | TileError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Net(NetError::Config(_)) => CliError::Config(e.to_string()),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Raster(r) => r.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "runway", version, about = "Runway satellite/map translation toolkit")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset or fetch imagery for airports.
    BuildDataset(BuildDatasetArgs),
    /// Substitute map colors.
    Recolor(RecolorArgs),
    /// Train a Pix2Pix or CycleGAN model.
    Train(TrainArgs),
    /// Translate one image with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint on a manifest, or compare two maps.
    Evaluate(EvaluateArgs),
    /// Draw airport locations on an equirectangular canvas.
    PlotAirports(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Synthetic,
    Fetch,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub source: Source,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of synthetic scenes.
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    /// Synthetic scene side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene layout name, or `mixed` to cycle through all layouts.
    #[arg(long, default_value = "mixed")]
    pub layout: String,
    #[arg(long, default_value = "standard")]
    pub palette: String,
    /// Overlay label-like glyphs on maps.
    #[arg(long)]
    pub clutter: bool,
    /// Fraction of records in the training split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Airport database for fetch mode.
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Number of airports to fetch, drawn with `--seed`.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub provider_base: Option<String>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub offline: bool,
    #[arg(long, default_value_t = 18)]
    pub zoom: u32,
    #[arg(long, default_value_t = 1200)]
    pub tile_size: u32,
    /// Minimum seconds between provider requests.
    #[arg(long, default_value_t = 1.0)]
    pub min_interval: f64,
}

#[derive(Debug, Args)]
pub struct RecolorArgs {
    /// `from:to` palette names or a JSON color map file.
    #[arg(long)]
    pub map: String,
    /// Snap every pixel to the nearest source color first.
    #[arg(long)]
    pub snap: bool,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pix2pix,
    Cyclegan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Sat2map,
    Map2sat,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Sat2map => Direction::Sat2map,
            DirectionArg::Map2sat => Direction::Map2sat,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Full training config as JSON; individual flags override it.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub base_filters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub d_loss_weight: Option<f64>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub lambda_cycle: Option<f64>,
    #[arg(long)]
    pub lambda_identity: Option<f64>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub palette: Option<String>,
    /// Continue from a checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferDirection {
    Sat2map,
    Map2sat,
    Sketch2sat,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub direction: InferDirection,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Palette the sketch is snapped to; defaults to the training palette.
    #[arg(long)]
    pub palette: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Metrics,
    DiffMaps,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// Checkpoint to score; repeat with `--manifest` to compare runs.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    /// Names for the compared runs, in order.
    #[arg(long)]
    pub label: Vec<String>,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub generated: Option<PathBuf>,
    #[arg(long)]
    pub published: Option<PathBuf>,
    #[arg(long)]
    pub palette: Option<String>,
    /// Runway binarization tolerance in RGB units.
    #[arg(long, default_value_t = 30.0)]
    pub tol: f64,
    /// Pairs with IoU below this are flagged faulty.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub diff_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub db: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub width: u32,
    #[arg(long, default_value_t = 512)]
    pub height: u32,
}

/// Expand `--config FILE` into flags placed right after the subcommand, so
/// flags given on the command line win.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config: Option<PathBuf> = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let v = it.next().ok_or_else(|| CliError::Config("--config needs a path".into()))?;
            config = Some(v.into());
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(v.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    };
    let mut injected = Vec::new();
    for (k, v) in map {
        let flag = format!("--{}", k.replace('_', "-"));
        let values = match v {
            Value::Array(items) => items,
            other => vec![other],
        };
        for v in values {
            match v {
                Value::Bool(true) => injected.push(flag.clone().into()),
                Value::Bool(false) | Value::Null => {}
                Value::String(s) => {
                    injected.push(flag.clone().into());
                    injected.push(s.into());
                }
                Value::Number(n) => {
                    injected.push(flag.clone().into());
                    injected.push(n.to_string().into());
                }
                _ => return Err(CliError::Config(format!("config key `{k}` has an unsupported value"))),
            }
        }
    }
    let sub = rest.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')).map(|p| p + 2);
    let at = sub.ok_or_else(|| CliError::Config("no subcommand given".into()))?;
    rest.splice(at.min(rest.len())..at.min(rest.len()), injected);
    Ok(rest)
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildDataset(a) => build_dataset(a),
        Command::Recolor(a) => recolor(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::PlotAirports(a) => plot_airports(a),
    }
}

/// Parse and run; returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_palette(name: &str) -> Result<(Palette, String)> {
    let p = Palette::resolve(name)?;
    let canonical = match name {
        "red-black" | "red_black" => "redblack".to_string(),
        other => other.to_string(),
    };
    Ok((p, canonical))
}

fn build_dataset(a: BuildDatasetArgs) -> Result<()> {
    let (palette, palette_name) = resolve_palette(&a.palette)?;
    if !(a.split > 0.0 && a.split < 1.0) {
        return Err(CliError::Config(format!("--split {} not in (0, 1)", a.split)));
    }
    let manifest = match a.source {
        Source::Synthetic => {
            let layouts = if a.layout == "mixed" {
                Layout::ALL.to_vec()
            } else {
                vec![Layout::parse(&a.layout).ok_or_else(|| CliError::Config(format!("unknown layout `{}`", a.layout)))?]
            };
            let template = SceneSpec { palette, label_clutter: a.clutter, ..SceneSpec::new(a.seed, a.size, layouts[0]) };
            synthworld::generate_dataset(a.n, a.seed, &template, &layouts, &a.out, a.split, &palette_name)?
        }
        Source::Fetch => fetch_dataset(&a, &palette, &palette_name)?,
    };
    let train = manifest.split(Split::Train).count();
    print_json(&json!({
        "manifest": a.out.join("manifest.jsonl"),
        "records": manifest.records.len(),
        "train": train,
        "val": manifest.records.len() - train,
        "palette": palette_name,
    }));
    Ok(())
}

/// Side of the sat/map images inside a joined fetch pair.
const PAIR_HALF: u32 = 600;

fn fetch_dataset(a: &BuildDatasetArgs, palette: &Palette, palette_name: &str) -> Result<DatasetManifest> {
    let db = a.db.as_ref().ok_or_else(|| CliError::Config("fetch mode needs --db".into()))?;
    let text = fs::read_to_string(db).map_err(|e| CliError::Data(format!("{}: {e}", db.display())))?;
    let parsed = geo::parse_airport_db(text.as_bytes(), DbFormat::sniff(&text))?;
    log::info!("{} airports parsed, {} rows skipped", parsed.records.len(), parsed.skipped);
    let mut records = parsed.records;
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    if let Some(limit) = a.limit {
        records.truncate(limit);
    }
    let spec = ZoomSpec::new(a.zoom, a.tile_size)?;
    if !(a.min_interval >= 0.0 && a.min_interval.is_finite()) {
        return Err(CliError::Config(format!("--min-interval {} must be non-negative", a.min_interval)));
    }
    let mut cfg = ClientConfig::from_env(a.cache.clone().unwrap_or_else(|| a.out.join("cache")));
    cfg.offline = a.offline;
    cfg.min_interval = Duration::from_secs_f64(a.min_interval);
    let client = TileClient::new(cfg);
    let recolor = PaletteMap::between(&Palette::standard(), palette)?;

    for sub in ["sat", "map", "pairs", "A", "B"] {
        fs::create_dir_all(a.out.join(sub))?;
    }
    let n_train = ((records.len() as f64 * a.split).round() as usize).min(records.len());
    let mut out = Vec::with_capacity(records.len());
    for (i, ap) in records.iter().enumerate() {
        let base = a.provider_base.as_deref();
        let sat_req = build_tile_request(ap, spec, Style::Satellite, base)?;
        let map_req = build_tile_request(ap, spec, Style::Roadmap, base)?;
        let pair = client.fetch_pair(&sat_req, &map_req)?;
        let sat = resize_bilinear(&pair.sat, PAIR_HALF, PAIR_HALF)?;
        let mut map = resize_bilinear(&pair.map, PAIR_HALF, PAIR_HALF)?;
        if palette_name != "standard" {
            map = remap_palette(&map, &recolor, true);
        }
        let name = format!("{}.png", ap.icao);
        let rel = |d: &str| PathBuf::from(d).join(&name);
        sat.save_png(&a.out.join(rel("sat")))?;
        map.save_png(&a.out.join(rel("map")))?;
        join_pair(&sat, &map)?.save_png(&a.out.join(rel("pairs")))?;
        resize_bilinear(&sat, UNPAIRED_MAX, UNPAIRED_MAX)?.save_png(&a.out.join(rel("A")))?;
        resize_bilinear(&map, UNPAIRED_MAX, UNPAIRED_MAX)?.save_png(&a.out.join(rel("B")))?;
        out.push(ManifestRecord {
            id: ap.icao.clone(),
            icao: Some(ap.icao.clone()),
            lat: Some(ap.location.lat()),
            lon: Some(ap.location.lon()),
            seed: None,
            layout: None,
            sat_path: rel("sat"),
            map_path: rel("map"),
            mask_path: None,
            pair_path: Some(rel("pairs")),
            a_path: Some(rel("A")),
            b_path: Some(rel("B")),
            split: if i < n_train { Split::Train } else { Split::Val },
            palette: palette_name.to_string(),
        });
        log::info!("{} fetched (cache {:?})", ap.icao, pair.from_cache);
    }
    let manifest = DatasetManifest::new(a.out.clone(), out);
    manifest.save(&a.out.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn load_palette_map(spec: &str) -> Result<PaletteMap> {
    if Path::new(spec).is_file() {
        let text = fs::read_to_string(spec)?;
        return Ok(PaletteMap::from_json(&text)?);
    }
    Ok(PaletteMap::parse_named(spec)?)
}

fn recolor(a: RecolorArgs) -> Result<()> {
    let map = load_palette_map(&a.map)?;
    let img = RasterImage::load(&a.input)?;
    let out = remap_palette(&img, &map, a.snap);
    out.save_png(&a.output)?;
    print_json(&json!({ "output": a.output, "width": out.width(), "height": out.height() }));
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.train_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::template(match a.mode {
            Some(ModeArg::Cyclegan) => Mode::Cyclegan,
            _ => Mode::Pix2pix,
        }),
    };
    if let Some(m) = a.mode {
        let mode = match m {
            ModeArg::Pix2pix => Mode::Pix2pix,
            ModeArg::Cyclegan => Mode::Cyclegan,
        };
        if mode != cfg.mode {
            // switching mode also switches the epoch default
            let epochs = if a.train_config.is_some() { cfg.epochs } else { TrainConfig::template(mode).epochs };
            cfg = TrainConfig { mode, epochs, ..cfg };
        }
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f.clone() { cfg.$f = v.into(); } )* };
    }
    set!(direction, epochs, image_size, base_filters, batch, lr, beta1, d_loss_weight, lambda_l1, lambda_cycle, lambda_identity, pool_size, seed, checkpoint_every, palette);
    resolve_palette(&cfg.palette)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let state = match &a.resume {
        Some(p) => load_checkpoint(p)?.resume(cfg)?,
        None => TrainState::new(cfg)?,
    };
    let start = state.step;
    let (state, history) = train::train_from(state, &manifest, &a.out)?;
    let last = history.records.last().map(|r| r.losses.clone()).unwrap_or_default();
    print_json(&json!({
        "mode": state.config.mode,
        "epochs": state.epoch,
        "steps": state.step,
        "steps_this_run": state.step - start,
        "final_losses": last,
        "checkpoint": a.out.join("final.rwgn"),
        "history": a.out.join("history.jsonl"),
    }));
    Ok(())
}

fn fit_square(img: &RasterImage, size: u32) -> Result<RasterImage> {
    if img.dims() == (size, size) {
        Ok(img.clone())
    } else {
        Ok(resize_bilinear(img, size, size)?)
    }
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let dir = match a.direction {
        InferDirection::Sat2map => Direction::Sat2map,
        InferDirection::Map2sat | InferDirection::Sketch2sat => Direction::Map2sat,
    };
    let g = state.generator(dir).ok_or_else(|| {
        CliError::Config(format!("checkpoint trains {:?} {:?}; cannot run {:?}", state.config.mode, state.config.direction, a.direction))
    })?;
    let size = g.meta.image_size as u32;
    let mut input = RasterImage::load(&a.input)?;
    if a.direction == InferDirection::Sketch2sat {
        let (palette, _) = resolve_palette(a.palette.as_deref().unwrap_or(&state.config.palette))?;
        input = remap_palette(&input, &PaletteMap::identity(&palette), true);
    }
    let out = train::infer(g, &fit_square(&input, size)?)?;
    out.save_png(&a.output)?;
    print_json(&json!({ "output": a.output, "direction": format!("{:?}", a.direction).to_lowercase(), "size": size }));
    Ok(())
}

#[derive(Debug, Serialize)]
struct SampleMetrics {
    id: String,
    l1: f64,
    iou: Option<f64>,
    accuracy: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RunMetrics {
    label: String,
    checkpoint: PathBuf,
    manifest: PathBuf,
    split: String,
    samples: Vec<SampleMetrics>,
    mean_l1: f64,
    mean_iou: Option<f64>,
    mean_accuracy: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Mean absolute difference in [-1, 1] units.
pub fn unit_l1(a: &RasterImage, b: &RasterImage) -> f64 {
    let (ta, tb) = (to_unit(a), to_unit(b));
    let (da, db) = (ta.data(), tb.data());
    da.iter().zip(db.iter()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / da.len() as f64
}

fn score_run(label: String, ckpt: &Path, manifest_path: &Path, split: Split, split_name: &str, palette: Option<&str>, tol: f64) -> Result<RunMetrics> {
    let state = load_checkpoint(ckpt)?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let dir = match state.config.mode {
        Mode::Pix2pix => state.config.direction,
        Mode::Cyclegan => Direction::Sat2map,
    };
    let g = state.generator(dir).expect("mode has a generator for its direction");
    let size = g.meta.image_size as u32;
    let (palette, _) = resolve_palette(palette.unwrap_or(&state.config.palette))?;
    let mut samples = Vec::new();
    for r in manifest.split(split) {
        let sat = fit_square(&RasterImage::load(&manifest.resolve(&r.sat_path))?, size)?;
        let map = fit_square(&RasterImage::load(&manifest.resolve(&r.map_path))?, size)?;
        let (input, target) = match dir {
            Direction::Sat2map => (&sat, &map),
            Direction::Map2sat => (&map, &sat),
        };
        let out = train::infer(g, input)?;
        let l1 = unit_l1(&out, target);
        let (iou, accuracy) = if dir == Direction::Sat2map {
            let mp = r.mask_path.as_ref().ok_or_else(|| CliError::Data(format!("record {} has no ground-truth mask", r.id)))?;
            let truth = Mask::load(&manifest.resolve(mp))?.resize_nearest(size, size);
            let pred = binarize_runway(&out, &palette, tol);
            let cmp = compare_masks(&pred, &truth)?;
            let wrong = cmp.added.count() + cmp.removed.count();
            (Some(cmp.iou), Some(1.0 - wrong as f64 / (size * size) as f64))
        } else {
            (None, None)
        };
        samples.push(SampleMetrics { id: r.id.clone(), l1, iou, accuracy });
    }
    if samples.is_empty() {
        return Err(CliError::Data(format!("no {split_name} records in {}", manifest_path.display())));
    }
    Ok(RunMetrics {
        label,
        checkpoint: ckpt.to_path_buf(),
        manifest: manifest_path.to_path_buf(),
        split: split_name.to_string(),
        mean_l1: mean(samples.iter().map(|s| s.l1)).unwrap_or(0.0),
        mean_iou: mean(samples.iter().filter_map(|s| s.iou)),
        mean_accuracy: mean(samples.iter().filter_map(|s| s.accuracy)),
        samples,
    })
}

/// Binarize both maps, compare, and flag the published map as faulty when
/// IoU falls below `threshold`. The generated map is the reference.
pub fn diff_maps(generated: &RasterImage, published: &RasterImage, palette: &Palette, tol: f64, threshold: f64) -> Result<(crate::raster::MaskComparison, bool)> {
    let g = binarize_runway(generated, palette, tol);
    let mut p = binarize_runway(published, palette, tol);
    if p.width() != g.width() || p.height() != g.height() {
        p = p.resize_nearest(g.width(), g.height());
    }
    let cmp = compare_masks(&g, &p)?;
    let faulty = cmp.iou < threshold;
    Ok((cmp, faulty))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if !(a.tol >= 0.0) {
        return Err(CliError::Config(format!("--tol {} must be non-negative", a.tol)));
    }
    match a.mode {
        EvalMode::Metrics => {
            if a.checkpoint.is_empty() || a.checkpoint.len() != a.manifest.len() {
                return Err(CliError::Config("metrics mode needs matching --checkpoint and --manifest lists".into()));
            }
            if !a.label.is_empty() && a.label.len() != a.checkpoint.len() {
                return Err(CliError::Config("one --label per checkpoint".into()));
            }
            let split = match a.split.as_str() {
                "train" => Split::Train,
                "val" => Split::Val,
                s => return Err(CliError::Config(format!("unknown split `{s}`"))),
            };
            let mut runs = Vec::new();
            for (i, (c, m)) in a.checkpoint.iter().zip(&a.manifest).enumerate() {
                let label = a.label.get(i).cloned().unwrap_or_else(|| format!("run{i}"));
                runs.push(score_run(label, c, m, split, &a.split, a.palette.as_deref(), a.tol)?);
            }
            let summary: Vec<Value> = runs
                .iter()
                .map(|r| json!({ "label": r.label, "mean_l1": r.mean_l1, "mean_iou": r.mean_iou, "mean_accuracy": r.mean_accuracy }))
                .collect();
            print_json(&json!({ "mode": "metrics", "tol": a.tol, "runs": runs, "summary": summary }));
        }
        EvalMode::DiffMaps => {
            let (Some(gp), Some(pp)) = (&a.generated, &a.published) else {
                return Err(CliError::Config("diff-maps needs --generated and --published".into()));
            };
            let (palette, name) = resolve_palette(a.palette.as_deref().unwrap_or("standard"))?;
            let (cmp, faulty) = diff_maps(&RasterImage::load(gp)?, &RasterImage::load(pp)?, &palette, a.tol, a.threshold)?;
            if let Some(out) = &a.diff_out {
                cmp.diff_image.save_png(out)?;
            }
            print_json(&json!({
                "mode": "diff-maps",
                "palette": name,
                "iou": cmp.iou,
                "added_px": cmp.added.count(),
                "removed_px": cmp.removed.count(),
                "threshold": a.threshold,
                "faulty": faulty,
                "diff_image": a.diff_out,
            }));
        }
    }
    Ok(())
}

fn plot_airports(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.db).map_err(|e| CliError::Data(format!("{}: {e}", a.db.display())))?;
    let parsed = geo::parse_airport_db(text.as_bytes(), DbFormat::sniff(&text))?;
    let img = geo::plot_airports(&parsed.records, a.width, a.height)?;
    img.save_png(&a.output)?;
    print_json(&json!({ "output": a.output, "plotted": parsed.records.len(), "skipped": parsed.skipped }));
    Ok(())
}
