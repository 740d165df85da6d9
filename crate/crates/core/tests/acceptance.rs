//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use runway::cli::{diff_maps, unit_l1};
use runway::dataset::{DatasetManifest, Split};
use runway::geo::ground_resolution;
use runway::nets::{build_discriminator, output_size, patch_receptive_field, patchgan_layers};
use runway::raster::*;
use runway::synthworld::{generate_dataset, generate_scene, render_map, Layout, SceneSpec};
use runway::tensor::Tensor;
use runway::train::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    use common::grad::{all_ops, unet_block};
    let mut checks = all_ops::<f32>();
    checks.extend(all_ops::<f64>());
    checks.push(unet_block::<f32>());
    checks.push(unet_block::<f64>());
    let worst = |bits: &str| {
        checks.iter().filter(|(n, _)| n.contains(bits)).map(|(_, r)| r.max_rel_error).fold(0.0, f64::max)
    };
    let failed: Vec<&str> = checks.iter().filter(|(_, r)| !r.passed).map(|(n, _)| n.as_str()).collect();
    outcome(
        failed.is_empty(),
        format!("{} checks, max rel error 32-bit {:.2e} (< 1e-2), 64-bit {:.2e} (< 1e-5), failed {:?}", checks.len(), worst("32-bit"), worst("64-bit"), failed),
    )
}

fn geodesy() -> Outcome {
    let r0 = ground_resolution(0.0, 0).unwrap();
    let rel = (r0 - 156543.0339).abs() / 156543.0339;
    let mut sweep_ok = true;
    for i in 0..50 {
        let lat = -84.0 + 168.0 * i as f64 / 49.0;
        let zoom = (i % 22) as u32;
        let r = ground_resolution(lat, zoom).unwrap();
        let halved = ground_resolution(lat, zoom + 1).unwrap();
        let eq = ground_resolution(0.0, zoom).unwrap();
        sweep_ok &= (r / halved - 2.0).abs() < 1e-12;
        sweep_ok &= (r / eq - lat.to_radians().cos()).abs() < 1e-12;
    }
    outcome(rel < 1e-6 && sweep_ok, format!("ground_resolution(0,0) = {r0:.4} (rel err {rel:.1e}), 50-point sweep ok = {sweep_ok}"))
}

fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RasterImage {
    RasterImage::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
}

fn dataset_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut ok = true;

    // fetch layout against a local stub provider
    let stub = common::stub(common::ok);
    let db = dir.path().join("db.csv");
    fs::write(&db, "icao,name,lat,lon\nDNKN,Kano,12.0476,8.5246\nEGLL,Heathrow,51.47,-0.4543\n").unwrap();
    let out = dir.path().join("fetch");
    let run = Command::new(env!("CARGO_BIN_EXE_runway"))
        .args(["build-dataset", "--source", "fetch", "--min-interval", "0", "--provider-base", &stub.base])
        .arg("--db")
        .arg(&db)
        .arg("--out")
        .arg(&out)
        .env("RUNWAY_TILE_API_KEY", "acceptance")
        .output()
        .unwrap();
    ok &= run.status.success();
    let dims = |sub: &str| -> Vec<(u32, u32)> {
        fs::read_dir(out.join(sub)).map_or(vec![], |d| d.map(|e| RasterImage::load(&e.unwrap().path()).unwrap().dims()).collect())
    };
    let pairs = dims("pairs");
    let ab: Vec<_> = dims("A").into_iter().chain(dims("B")).collect();
    let fetch_ok = pairs.len() == 2 && pairs.iter().all(|&d| d == (1200, 600)) && ab.len() == 4 && ab.iter().all(|&(w, h)| w <= 256 && h <= 256);
    ok &= fetch_ok;
    notes.push(format!("fetch pairs {pairs:?}, A/B {:?}", ab.first()));

    // synthetic 600 px scenes also keep A/B within 256
    let synth = dir.path().join("synth");
    let tmpl = SceneSpec::new(0, 600, Layout::Single);
    let m = generate_dataset(2, 5, &tmpl, &[Layout::Cross], &synth, 0.5, "standard").unwrap();
    let a_dims = RasterImage::load(&m.resolve(m.records[0].a_path.as_ref().unwrap())).unwrap().dims();
    let pair_dims = RasterImage::load(&m.resolve(m.records[0].pair_path.as_ref().unwrap())).unwrap().dims();
    ok &= a_dims == (256, 256) && pair_dims == (1200, 600);

    // byte-exact round trips
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fwd = PaletteMap::between(&Palette::standard(), &Palette::red_black()).unwrap();
    let back = fwd.inverse().unwrap();
    let mut round_trips = true;
    for _ in 0..50 {
        let (a, b) = (random_image(&mut rng, 40, 30), random_image(&mut rng, 40, 30));
        let (a2, b2) = split_pair(&join_pair(&a, &b).unwrap()).unwrap();
        round_trips &= a2 == a && b2 == b;
        round_trips &= from_unit(&to_unit(&a)).unwrap() == a;
    }
    for seed in 0..20 {
        let map = generate_scene(&SceneSpec::new(seed, 128, Layout::Urban)).unwrap().map;
        round_trips &= remap_palette(&remap_palette(&map, &fwd, false), &back, false) == map;
    }
    ok &= round_trips;
    notes.push(format!("round trips exact = {round_trips}"));

    // mask/map consistency
    let mut min_iou: f64 = 1.0;
    for seed in 0..100u64 {
        let layout = Layout::ALL[seed as usize % Layout::ALL.len()];
        let s = generate_scene(&SceneSpec::new(1000 + seed, 128, layout)).unwrap();
        let iou = compare_masks(&binarize_runway(&s.map, &Palette::standard(), 30.0), &s.mask).unwrap().iou;
        min_iou = min_iou.min(iou);
    }
    ok &= min_iou >= 0.99;
    notes.push(format!("min mask/map IoU over 100 scenes {min_iou:.4} (>= 0.99)"));
    outcome(ok, notes.join("; "))
}

/// Overfit configuration shared by criteria 4 and 7.
fn overfit_config() -> TrainConfig {
    TrainConfig {
        image_size: 64,
        base_filters: 64,
        epochs: 50,
        seed: 0,
        palette: "redblack".into(),
        checkpoint_every: 25,
        ..TrainConfig::template(Mode::Pix2pix)
    }
}

fn overfit_dataset(dir: &Path) -> DatasetManifest {
    let tmpl = SceneSpec { palette: Palette::red_black(), ..SceneSpec::new(0, 64, Layout::Cross) };
    generate_dataset(5, 0, &tmpl, &[Layout::Cross], dir, 0.8, "redblack").unwrap()
}

/// Mean of `g_l1` over each window of `w` steps.
fn window_means(h: &History, w: usize) -> Vec<f64> {
    let s = h.series("g_l1");
    s.chunks(w).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

fn pix2pix_overfit(root: &Path) -> Outcome {
    let man = overfit_dataset(&root.join("data"));
    let cfg = overfit_config();
    let (state, hist) = train_loop(cfg.clone(), &man, &root.join("run")).unwrap();
    let l1 = hist.series("g_l1");
    let steps = l1.len();
    let last_epoch = l1[steps - 4..].iter().sum::<f64>() / 4.0;
    // one window per 10 steps; the trend from step 10 on must fall every window
    let windows = window_means(&hist, 10);
    let decreasing = windows[1..].windows(2).all(|w| w[1] < w[0]);

    let g = state.generator(Direction::Sat2map).unwrap();
    let palette = Palette::red_black();
    let (mut ious, mut l1s) = (Vec::new(), Vec::new());
    for p in man.load_pairs(Split::Train, 64).unwrap() {
        let out = infer(g, &p.sat).unwrap();
        let rec = man.records.iter().find(|r| r.id == p.id).unwrap();
        let truth = Mask::load(&man.resolve(rec.mask_path.as_ref().unwrap())).unwrap();
        ious.push(compare_masks(&binarize_runway(&out, &palette, 30.0), &truth).unwrap().iou);
        l1s.push(unit_l1(&out, &p.map));
    }
    let mean_iou = ious.iter().sum::<f64>() / ious.len() as f64;
    let held_l1 = l1s.iter().sum::<f64>() / l1s.len() as f64;
    let pass = steps == 200 && last_epoch < 0.15 && decreasing && mean_iou >= 0.9;
    let trend: Vec<String> = windows.iter().map(|v| format!("{v:.3}")).collect();
    outcome(
        pass,
        format!(
            "{steps} steps, final-epoch g_l1 {last_epoch:.4} (< 0.15), held-in L1 {held_l1:.4}, 10-step means falling from step 10 = {decreasing} [{}], held-in IoU {mean_iou:.4} (>= 0.9)",
            trend.join(" ")
        ),
    )
}

fn cycle_toy() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let tmpl = SceneSpec::new(0, 64, Layout::Single);
    let man = generate_dataset(25, 300, &tmpl, &Layout::ALL, &dir.path().join("data"), 0.8, "standard").unwrap();
    let n = man.split(Split::Train).count();
    let cfg = TrainConfig { image_size: 64, base_filters: 32, epochs: 20, seed: 1, checkpoint_every: 0, ..TrainConfig::template(Mode::Cyclegan) };
    let (state, hist) = train_loop(cfg, &man, &dir.path().join("run")).unwrap();
    let (g_ab, g_ba) = (state.net("g_ab").unwrap(), state.net("g_ba").unwrap());
    let mut cyc = 0.0;
    let pairs = man.load_pairs(Split::Train, 64).unwrap();
    for p in &pairs {
        let rec = infer(g_ba, &infer(g_ab, &p.sat).unwrap()).unwrap();
        cyc += unit_l1(&rec, &p.sat);
    }
    cyc /= pairs.len() as f64;
    let gan_mse = hist.series("gan_ab").iter().all(|v| v.is_finite());

    // pool against a seeded simulation
    let mut pool = ImagePool::new(50, ChaCha8Rng::seed_from_u64(21));
    let mut oracle = ChaCha8Rng::seed_from_u64(21);
    let mut stored: Vec<f32> = Vec::new();
    let mut pool_ok = true;
    for id in 0..500 {
        let got = pool.query(&Tensor::full(&[1], id as f32)).item();
        let want = if stored.len() < 50 {
            stored.push(id as f32);
            id as f32
        } else if oracle.random::<f64>() > 0.5 {
            let i = oracle.random_range(0..50);
            std::mem::replace(&mut stored[i], id as f32)
        } else {
            id as f32
        };
        pool_ok &= got == want;
    }
    let pass = n == 20 && hist.records.len() == 400 && cyc < 0.25 && gan_mse && pool_ok;
    outcome(pass, format!("{n} images per domain, {} steps, mean cycle L1 {cyc:.4} (< 0.25), pool matches oracle = {pool_ok}", hist.records.len()))
}

fn faulty_maps() -> Outcome {
    let scene = generate_scene(&SceneSpec::new(11, 128, Layout::FiveWay)).unwrap();
    let palette = Palette::standard();
    let broken = render_map(&scene.geometry.without_strip(0), &palette);
    let (cmp, faulty) = diff_maps(&scene.map, &broken, &palette, 30.0, 0.9).unwrap();
    let (same, same_faulty) = diff_maps(&scene.map, &scene.map, &palette, 30.0, 0.9).unwrap();
    let pass = cmp.removed.count() > 0 && cmp.iou < 0.9 && faulty && same.iou == 1.0 && !same_faulty;
    outcome(
        pass,
        format!("arm removed: removed {} px, IoU {:.4}, faulty {faulty}; identical: IoU {}, faulty {same_faulty}", cmp.removed.count(), cmp.iou, same.iou),
    )
}

fn determinism(root: &Path) -> Outcome {
    let man = DatasetManifest::load(&root.join("data/manifest.jsonl")).unwrap();
    let cfg = overfit_config();
    let reference = fs::read(root.join("run/final.rwgn")).unwrap();

    let loaded = load_checkpoint(&root.join("run/final.rwgn")).unwrap();
    let round_trip = loaded.to_bytes() == reference;

    let (_, _) = train_loop(cfg.clone(), &man, &root.join("again")).unwrap();
    let same_seed = fs::read(root.join("again/final.rwgn")).unwrap() == reference;

    let half = load_checkpoint(&root.join("run/checkpoints/epoch_025.rwgn")).unwrap();
    let resumed_from = half.step;
    train_from(half.resume(cfg).unwrap(), &man, &root.join("resumed")).unwrap();
    let resume = fs::read(root.join("resumed/final.rwgn")).unwrap() == reference;
    outcome(
        round_trip && same_seed && resume,
        format!("save/load bit-exact {round_trip}, same-seed rerun identical {same_seed}, resume from step {resumed_from} identical {resume}"),
    )
}

fn patchgan() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = build_discriminator::<f32, _>(256, 64, 6, &mut rng).unwrap();
    let rf = patch_receptive_field(&d).unwrap();
    let layers = patchgan_layers(64, 6);
    let analytic = (output_size(&layers, 256), output_size(&layers, 64));
    let small256 = build_discriminator::<f32, _>(256, 2, 6, &mut rng).unwrap();
    let small64 = build_discriminator::<f32, _>(64, 2, 6, &mut rng).unwrap();
    let s256 = small256.forward(&Tensor::zeros(&[1, 6, 256, 256])).unwrap().shape().to_vec();
    let s64 = small64.forward(&Tensor::zeros(&[1, 6, 64, 64])).unwrap().shape().to_vec();
    let pass = rf == 70 && analytic == (Some(30), Some(6)) && s256 == [1, 1, 30, 30] && s64 == [1, 1, 6, 6];
    outcome(pass, format!("receptive field {rf}, analytic {analytic:?}, forward {s256:?} at 256 and {s64:?} at 64"))
}

fn run(n: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    let in_time = took <= budget;
    let verdict = if pass && in_time { "PASS" } else { "FAIL" };
    println!("criterion {n}: {verdict} {name}: {detail}; {:.1}s (budget {}s)", took.as_secs_f64(), budget.as_secs());
    pass && in_time
}

fn main() {
    let _ = env_logger::builder().is_test(true).try_init();
    let secs = Duration::from_secs;
    let root = tempfile::tempdir().unwrap();
    let results = [
        run(1, "gradient correctness", secs(60), gradients),
        run(2, "geodesy", secs(1), geodesy),
        run(3, "dataset pipeline", secs(30), dataset_pipeline),
        run(4, "pix2pix overfit", secs(600), || pix2pix_overfit(root.path())),
        run(5, "cyclegan toy run", secs(1200), cycle_toy),
        run(6, "faulty-map detection", secs(5), faulty_maps),
        run(7, "determinism and persistence", secs(720), || determinism(root.path())),
        run(8, "patchgan analysis", secs(1), patchgan),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
