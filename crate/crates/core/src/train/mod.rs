//! Pix2Pix and CycleGAN training: per-step updates, the epoch loop, and
//! inference with a trained generator.

pub mod checkpoint;
mod pool;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use pool::{ImagePool, RngState};

use crate::dataset::{DatasetError, DatasetManifest, Split};
use crate::nets::{build_discriminator, build_generator, NetError, Network};
use crate::raster::{from_unit, hstack, to_unit, RasterError, RasterImage};
use crate::tensor::{adam_step, AdamState, LossKind, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pix2pix,
    Cyclegan,
}

/// Translation direction of a paired generator. CycleGAN trains both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sat2map,
    Map2sat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub direction: Direction,
    pub image_size: usize,
    pub base_filters: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub d_loss_weight: f64,
    pub lambda_l1: f64,
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
    pub pool_size: usize,
    pub seed: u64,
    /// Write an epoch checkpoint every this many epochs; 0 disables them.
    pub checkpoint_every: usize,
    /// Map palette name, used when scoring runway masks.
    pub palette: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::template(Mode::Pix2pix)
    }
}

impl TrainConfig {
    pub fn template(mode: Mode) -> Self {
        TrainConfig {
            mode,
            direction: Direction::Sat2map,
            image_size: 64,
            base_filters: 32,
            batch: 1,
            epochs: match mode {
                Mode::Pix2pix => 10,
                Mode::Cyclegan => 100,
            },
            lr: 0.0002,
            beta1: 0.5,
            d_loss_weight: 0.5,
            lambda_l1: 100.0,
            lambda_cycle: 10.0,
            lambda_identity: 5.0,
            pool_size: 50,
            seed: 0,
            checkpoint_every: 1,
            palette: "standard".into(),
        }
    }

    /// Parse a JSON object over the template of its `mode` (pix2pix when
    /// absent), so omitted fields take that mode's defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |e: serde_json::Error| TrainError::Config(e.to_string());
        let value: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let serde_json::Value::Object(fields) = value else {
            return Err(TrainError::Config("training config must be a JSON object".into()));
        };
        let mode = match fields.get("mode") {
            Some(m) => serde_json::from_value(m.clone()).map_err(bad)?,
            None => Mode::Pix2pix,
        };
        let serde_json::Value::Object(mut merged) = serde_json::to_value(TrainConfig::template(mode)).map_err(bad)? else {
            unreachable!("config serializes to an object")
        };
        merged.extend(fields);
        serde_json::from_value(serde_json::Value::Object(merged)).map_err(bad)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch != 1 {
            return bad(format!("batch must be 1, got {}", self.batch));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) {
            return bad(format!("invalid optimizer settings lr={} beta1={}", self.lr, self.beta1));
        }
        for (name, v) in [
            ("d_loss_weight", self.d_loss_weight),
            ("lambda_l1", self.lambda_l1),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_identity", self.lambda_identity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.base_filters == 0 {
            return bad("base_filters must be positive".into());
        }
        crate::nets::generator_depth(self.image_size)?;
        Ok(())
    }

    fn adam(&self) -> AdamState {
        AdamState::new(self.lr as f32, self.beta1 as f32)
    }

    /// Fields that fix the architecture and random streams of a run.
    fn same_run(&self, other: &TrainConfig) -> bool {
        self.mode == other.mode
            && self.direction == other.direction
            && self.image_size == other.image_size
            && self.base_filters == other.base_filters
            && self.pool_size == other.pool_size
            && self.seed == other.seed
    }
}

pub type Losses = BTreeMap<String, f64>;

/// Complete resumable state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps.
    pub step: u64,
    pub nets: Vec<(String, Network)>,
    pub optims: Vec<(String, AdamState)>,
    pub pools: Vec<(String, ImagePool)>,
}

fn pool_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl TrainState {
    /// Freshly initialized networks for `config`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (s, b) = (config.image_size, config.base_filters);
        let (nets, pools) = match config.mode {
            Mode::Pix2pix => (
                vec![("g".to_string(), build_generator(s, b, &mut rng)?), ("d".to_string(), build_discriminator(s, b, 6, &mut rng)?)],
                Vec::new(),
            ),
            Mode::Cyclegan => (
                vec![
                    ("g_ab".to_string(), build_generator(s, b, &mut rng)?),
                    ("g_ba".to_string(), build_generator(s, b, &mut rng)?),
                    ("d_a".to_string(), build_discriminator(s, b, 3, &mut rng)?),
                    ("d_b".to_string(), build_discriminator(s, b, 3, &mut rng)?),
                ],
                vec![
                    ("a".to_string(), ImagePool::new(config.pool_size, pool_rng(config.seed, 1))),
                    ("b".to_string(), ImagePool::new(config.pool_size, pool_rng(config.seed, 2))),
                ],
            ),
        };
        let optims = nets.iter().map(|(n, _)| (n.clone(), config.adam())).collect();
        Ok(TrainState { config, epoch: 0, step: 0, nets, optims, pools })
    }

    /// Continue a saved run under `config`, which may only change the
    /// epoch budget, loss weights and checkpoint cadence.
    pub fn resume(mut self, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if !self.config.same_run(&config) {
            return Err(TrainError::Config("resume config changes the architecture, seed or pool".into()));
        }
        for (_, opt) in self.optims.iter_mut() {
            opt.lr = config.lr as f32;
            opt.beta1 = config.beta1 as f32;
        }
        self.config = config;
        Ok(self)
    }

    pub fn net(&self, name: &str) -> Option<&Network> {
        self.nets.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    /// Generator translating in `direction`, if this run has one.
    pub fn generator(&self, direction: Direction) -> Option<&Network> {
        match (self.config.mode, direction) {
            (Mode::Pix2pix, d) if d == self.config.direction => self.net("g"),
            (Mode::Pix2pix, _) => None,
            (Mode::Cyclegan, Direction::Sat2map) => self.net("g_ab"),
            (Mode::Cyclegan, Direction::Map2sat) => self.net("g_ba"),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::to_bytes(self)
    }
}

fn check_pair(net: &Network, x: &Tensor, y: &Tensor) -> Result<()> {
    let s = net.meta.image_size;
    let want = [1, 3, s, s];
    for t in [x, y] {
        if t.shape() != want {
            return Err(TensorError::Shape(format!("expected {want:?}, got {:?}", t.shape())).into());
        }
    }
    Ok(())
}

fn adv(pred: &Tensor, real: bool, kind: LossKind) -> Result<Tensor> {
    let target = Tensor::full(pred.shape(), if real { 1.0 } else { 0.0 });
    Ok(pred.loss(&target, kind)?)
}

/// One Pix2Pix update: discriminator first on a detached fake, then the
/// generator against the updated discriminator.
pub fn pix2pix_step(
    g: &Network,
    d: &Network,
    x: &Tensor,
    y: &Tensor,
    cfg: &TrainConfig,
    g_opt: &mut AdamState,
    d_opt: &mut AdamState,
) -> Result<Losses> {
    check_pair(g, x, y)?;
    let fake = g.forward(x)?;

    d.zero_grad();
    let real_score = d.forward(&x.concat_channels(y)?)?;
    let fake_score = d.forward(&x.concat_channels(&fake.detach())?)?;
    let d_real = adv(&real_score, true, LossKind::BceLogits)?;
    let d_fake = adv(&fake_score, false, LossKind::BceLogits)?;
    let d_loss = d_real.add(&d_fake)?.scale(cfg.d_loss_weight as f32);
    d_loss.backward()?;
    adam_step(&d.parameters(), d_opt)?;

    g.zero_grad();
    d.zero_grad();
    let g_gan = adv(&d.forward(&x.concat_channels(&fake)?)?, true, LossKind::BceLogits)?;
    let g_l1 = fake.loss(y, LossKind::L1)?;
    let g_loss = g_gan.add(&g_l1.scale(cfg.lambda_l1 as f32))?;
    g_loss.backward()?;
    adam_step(&g.parameters(), g_opt)?;
    d.zero_grad();

    Ok(Losses::from([
        ("d".into(), d_loss.item() as f64),
        ("d_real".into(), d_real.item() as f64),
        ("d_fake".into(), d_fake.item() as f64),
        ("g".into(), g_loss.item() as f64),
        ("g_gan".into(), g_gan.item() as f64),
        ("g_l1".into(), g_l1.item() as f64),
    ]))
}

/// Networks, optimizers and pools of a CycleGAN step.
pub struct CycleNets<'a> {
    pub g_ab: &'a Network,
    pub g_ba: &'a Network,
    pub d_a: &'a Network,
    pub d_b: &'a Network,
}

pub struct CycleOptims<'a> {
    pub g_ab: &'a mut AdamState,
    pub g_ba: &'a mut AdamState,
    pub d_a: &'a mut AdamState,
    pub d_b: &'a mut AdamState,
}

/// One CycleGAN update: both generators jointly, then each discriminator on
/// its real image and a pooled fake.
pub fn cyclegan_step(
    nets: &CycleNets,
    a: &Tensor,
    b: &Tensor,
    pool_a: &mut ImagePool,
    pool_b: &mut ImagePool,
    cfg: &TrainConfig,
    opts: CycleOptims,
) -> Result<Losses> {
    check_pair(nets.g_ab, a, b)?;
    let mse = LossKind::Mse;
    for n in [nets.g_ab, nets.g_ba, nets.d_a, nets.d_b] {
        n.zero_grad();
    }
    let fake_b = nets.g_ab.forward(a)?;
    let rec_a = nets.g_ba.forward(&fake_b)?;
    let fake_a = nets.g_ba.forward(b)?;
    let rec_b = nets.g_ab.forward(&fake_a)?;
    let gan_ab = adv(&nets.d_b.forward(&fake_b)?, true, mse)?;
    let gan_ba = adv(&nets.d_a.forward(&fake_a)?, true, mse)?;
    let cycle_a = rec_a.loss(a, LossKind::L1)?;
    let cycle_b = rec_b.loss(b, LossKind::L1)?;
    let mut g_loss = gan_ab.add(&gan_ba)?.add(&cycle_a.add(&cycle_b)?.scale(cfg.lambda_cycle as f32))?;
    let mut losses = Losses::new();
    if cfg.lambda_identity > 0.0 {
        let idt_b = nets.g_ab.forward(b)?.loss(b, LossKind::L1)?;
        let idt_a = nets.g_ba.forward(a)?.loss(a, LossKind::L1)?;
        g_loss = g_loss.add(&idt_a.add(&idt_b)?.scale(cfg.lambda_identity as f32))?;
        losses.insert("idt_a".into(), idt_a.item() as f64);
        losses.insert("idt_b".into(), idt_b.item() as f64);
    }
    g_loss.backward()?;
    adam_step(&nets.g_ab.parameters(), opts.g_ab)?;
    adam_step(&nets.g_ba.parameters(), opts.g_ba)?;

    let w = cfg.d_loss_weight as f32;
    let d_update = |d: &Network, real: &Tensor, fake: &Tensor, pool: &mut ImagePool, opt: &mut AdamState| -> Result<f64> {
        d.zero_grad();
        let shown = pool.query(fake);
        let loss = adv(&d.forward(real)?, true, mse)?.add(&adv(&d.forward(&shown)?, false, mse)?)?.scale(w);
        loss.backward()?;
        adam_step(&d.parameters(), opt)?;
        Ok(loss.item() as f64)
    };
    let d_a = d_update(nets.d_a, a, &fake_a, pool_a, opts.d_a)?;
    let d_b = d_update(nets.d_b, b, &fake_b, pool_b, opts.d_b)?;
    for n in [nets.g_ab, nets.g_ba] {
        n.zero_grad();
    }

    losses.extend([
        ("g".to_string(), g_loss.item() as f64),
        ("gan_ab".to_string(), gan_ab.item() as f64),
        ("gan_ba".to_string(), gan_ba.item() as f64),
        ("cycle_a".to_string(), cycle_a.item() as f64),
        ("cycle_b".to_string(), cycle_b.item() as f64),
        ("d_a".to_string(), d_a),
        ("d_b".to_string(), d_b),
    ]);
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub losses: Losses,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<StepRecord>,
    pub samples: Vec<PathBuf>,
}

impl History {
    /// Values of one named loss in step order.
    pub fn series(&self, name: &str) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.losses.get(name).copied()).collect()
    }

    pub fn load(path: &Path) -> Result<Vec<StepRecord>> {
        let mut out = Vec::new();
        for line in BufReader::new(fs::File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line).map_err(|e| TrainError::Config(format!("history: {e}")))?);
            }
        }
        Ok(out)
    }
}

/// Translate one image. The image must be square at the generator's size.
pub fn infer(g: &Network, img: &RasterImage) -> Result<RasterImage> {
    let s = g.meta.image_size as u32;
    if img.dims() != (s, s) {
        return Err(TensorError::Shape(format!("image {:?} does not match generator size {s}", img.dims())).into());
    }
    Ok(from_unit(&g.forward(&to_unit(img))?)?)
}

fn epoch_order(seed: u64, epoch: usize, stream: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

struct TrainData {
    sat: Vec<Tensor>,
    map: Vec<Tensor>,
}

fn take_net(state: &mut TrainState, i: usize) -> Network {
    state.nets[i].1.clone()
}

fn run_epoch(state: &mut TrainState, data: &TrainData, epoch: usize, history: &mut Vec<StepRecord>) -> Result<()> {
    let cfg = state.config.clone();
    let n = data.sat.len();
    match cfg.mode {
        Mode::Pix2pix => {
            let (g, d) = (take_net(state, 0), take_net(state, 1));
            let (xs, ys) = match cfg.direction {
                Direction::Sat2map => (&data.sat, &data.map),
                Direction::Map2sat => (&data.map, &data.sat),
            };
            for i in epoch_order(cfg.seed, epoch, 0, n) {
                let (go, rest) = state.optims.split_at_mut(1);
                let losses = pix2pix_step(&g, &d, &xs[i], &ys[i], &cfg, &mut go[0].1, &mut rest[0].1)?;
                history.push(StepRecord { step: state.step, epoch, losses });
                state.step += 1;
            }
        }
        Mode::Cyclegan => {
            let nets: Vec<Network> = (0..4).map(|i| take_net(state, i)).collect();
            let cn = CycleNets { g_ab: &nets[0], g_ba: &nets[1], d_a: &nets[2], d_b: &nets[3] };
            let order_a = epoch_order(cfg.seed, epoch, 0, n);
            let order_b = epoch_order(cfg.seed, epoch, 1, n);
            for (&ia, &ib) in order_a.iter().zip(&order_b) {
                let [o0, o1, o2, o3] = &mut state.optims[..] else {
                    return Err(TrainError::Config("cyclegan state needs four optimizers".into()));
                };
                let [pa, pb] = &mut state.pools[..] else {
                    return Err(TrainError::Config("cyclegan state needs two pools".into()));
                };
                let opts = CycleOptims { g_ab: &mut o0.1, g_ba: &mut o1.1, d_a: &mut o2.1, d_b: &mut o3.1 };
                let losses = cyclegan_step(&cn, &data.sat[ia], &data.map[ib], &mut pa.1, &mut pb.1, &cfg, opts)?;
                history.push(StepRecord { step: state.step, epoch, losses });
                state.step += 1;
            }
        }
    }
    Ok(())
}

fn sample_strip(state: &TrainState, data: &TrainData) -> Result<RasterImage> {
    let img = |t: &Tensor| from_unit(t).map_err(TrainError::from);
    let strip = match state.config.mode {
        Mode::Pix2pix => {
            let (x, y) = match state.config.direction {
                Direction::Sat2map => (&data.sat[0], &data.map[0]),
                Direction::Map2sat => (&data.map[0], &data.sat[0]),
            };
            let out = state.nets[0].1.forward(x)?;
            vec![img(x)?, img(&out)?, img(y)?]
        }
        Mode::Cyclegan => {
            let a = &data.sat[0];
            let fake = state.nets[0].1.forward(a)?;
            let rec = state.nets[1].1.forward(&fake)?;
            vec![img(a)?, img(&fake)?, img(&rec)?]
        }
    };
    Ok(hstack(&strip.iter().collect::<Vec<_>>())?)
}

fn load_data(cfg: &TrainConfig, manifest: &DatasetManifest) -> Result<TrainData> {
    let pairs = match manifest.load_pairs(Split::Train, cfg.image_size as u32) {
        Err(DatasetError::Empty(m)) => return Err(TrainError::Config(m)),
        r => r?,
    };
    Ok(TrainData {
        sat: pairs.iter().map(|p| to_unit(&p.sat)).collect(),
        map: pairs.iter().map(|p| to_unit(&p.map)).collect(),
    })
}

fn write_history(path: &Path, records: &[StepRecord], append: bool) -> Result<()> {
    let f = fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(path)?;
    let mut w = std::io::BufWriter::new(f);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    w.flush()?;
    Ok(())
}

/// Train from scratch. Writes `history.jsonl`, `samples/epoch_NNN.png`,
/// `checkpoints/epoch_NNN.rwgn` and `final.rwgn` under `out_dir`.
pub fn train_loop(cfg: TrainConfig, manifest: &DatasetManifest, out_dir: &Path) -> Result<(TrainState, History)> {
    train_from(TrainState::new(cfg)?, manifest, out_dir)
}

/// Continue `state` until `state.config.epochs` epochs are complete.
pub fn train_from(mut state: TrainState, manifest: &DatasetManifest, out_dir: &Path) -> Result<(TrainState, History)> {
    state.config.validate()?;
    let data = load_data(&state.config, manifest)?;
    fs::create_dir_all(out_dir.join("samples"))?;
    let hist_path = out_dir.join("history.jsonl");

    // keep earlier records of a resumed run, drop anything past its step
    let mut history = History::default();
    if state.step > 0 && hist_path.exists() {
        history.records = History::load(&hist_path)?.into_iter().filter(|r| r.step < state.step).collect();
    }
    write_history(&hist_path, &history.records, false)?;

    while state.epoch < state.config.epochs {
        let epoch = state.epoch + 1;
        let mut recs = Vec::new();
        run_epoch(&mut state, &data, epoch, &mut recs)?;
        state.epoch = epoch;
        write_history(&hist_path, &recs, true)?;
        history.records.extend(recs);

        let sample = out_dir.join("samples").join(format!("epoch_{epoch:03}.png"));
        sample_strip(&state, &data)?.save_png(&sample)?;
        history.samples.push(sample);
        let every = state.config.checkpoint_every;
        if every > 0 && epoch.is_multiple_of(every) {
            save_checkpoint(&state, &out_dir.join("checkpoints").join(format!("epoch_{epoch:03}.rwgn")))?;
        }
        if let Some(r) = history.records.last() {
            log::info!("epoch {epoch}/{} step {} losses {:?}", state.config.epochs, state.step, r.losses);
        }
    }
    save_checkpoint(&state, &out_dir.join("final.rwgn"))?;
    Ok((state, history))
}
