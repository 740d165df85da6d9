//! Small training runs with bounds frozen from verified runs.

use runway::dataset::Split;
use runway::raster::{binarize_runway, compare_masks, remap_palette, Palette, PaletteMap, RasterImage};
use runway::synthworld::{generate_dataset, Layout, SceneSpec, ASPHALT};
use runway::train::*;

/// Satellite render classes, so asphalt can be told apart from terrain.
fn satellite_palette() -> Palette {
    Palette::new(vec![
        ("runway", ASPHALT),
        ("background", [72, 104, 52]),
        ("building", [139, 115, 85]),
        ("road", [236, 236, 236]),
    ])
    .unwrap()
}

fn config(direction: Direction, epochs: usize) -> TrainConfig {
    TrainConfig {
        direction,
        image_size: 64,
        base_filters: 32,
        epochs,
        seed: 3,
        palette: "redblack".into(),
        checkpoint_every: 0,
        ..TrainConfig::template(Mode::Pix2pix)
    }
}

#[test]
fn held_out_sat2map_finds_runways() {
    let dir = tempfile::tempdir().unwrap();
    let tmpl = SceneSpec { palette: Palette::red_black(), ..SceneSpec::new(0, 64, Layout::Single) };
    let layouts = [Layout::Single, Layout::Cross, Layout::Parallel];
    let man = generate_dataset(20, 500, &tmpl, &layouts, &dir.path().join("data"), 0.8, "redblack").unwrap();
    let (state, _) = train_loop(config(Direction::Sat2map, 10), &man, &dir.path().join("run")).unwrap();
    let g = state.generator(Direction::Sat2map).unwrap();
    let palette = Palette::red_black();
    let mut ious = Vec::new();
    for r in man.split(Split::Val) {
        let sat = RasterImage::load(&man.resolve(&r.sat_path)).unwrap();
        let truth = runway::raster::Mask::load(&man.resolve(r.mask_path.as_ref().unwrap())).unwrap();
        let out = infer(g, &sat).unwrap();
        ious.push(compare_masks(&binarize_runway(&out, &palette, 30.0), &truth).unwrap().iou);
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    println!("held-out IoU {ious:?} mean {mean:.4}");
    assert_eq!(ious.len(), 4);
    assert!(mean >= 0.5, "{mean}");
}

#[test]
fn sketch_becomes_satellite_runway() {
    let dir = tempfile::tempdir().unwrap();
    let tmpl = SceneSpec { palette: Palette::red_black(), ..SceneSpec::new(0, 64, Layout::Cross) };
    let man = generate_dataset(10, 700, &tmpl, &[Layout::Cross], &dir.path().join("data"), 0.8, "redblack").unwrap();
    let (state, _) = train_loop(config(Direction::Map2sat, 20), &man, &dir.path().join("run")).unwrap();
    let g = state.generator(Direction::Map2sat).unwrap();

    // hand-drawn cross in slightly-off red on a near-black background
    let mut sketch = RasterImage::filled(64, 64, [10, 6, 4]);
    for i in 8..56 {
        for w in 28..37 {
            sketch.set(i, w, [236, 24, 18]);
            sketch.set(w, i, [244, 12, 30]);
        }
    }
    let palette = Palette::red_black();
    let snapped = remap_palette(&sketch, &PaletteMap::identity(&palette), true);
    let want = binarize_runway(&snapped, &palette, 30.0);
    let out = infer(g, &snapped).unwrap();
    let got = binarize_runway(&out, &satellite_palette(), 60.0);
    let iou = compare_masks(&got, &want).unwrap().iou;
    println!("sketch2sat asphalt IoU {iou:.4}");
    assert!(iou >= 0.3, "{iou}");
}
