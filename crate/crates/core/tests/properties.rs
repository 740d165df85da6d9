use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use runway::cli::diff_maps;
use runway::geo::{ground_resolution, latlon_to_world_pixel, world_pixel_to_latlon, GeoPoint};
use runway::raster::*;
use runway::synthworld::{generate_scene, Layout, SceneSpec};
use runway::tensor::conv::reference;
use runway::tensor::Tensor;
use runway::train::ImagePool;

fn image(w: u32, h: u32) -> impl Strategy<Value = RasterImage> {
    proptest::collection::vec(any::<u8>(), (w * h * 3) as usize).prop_map(move |px| RasterImage::new(w, h, px).unwrap())
}

fn sized_image() -> impl Strategy<Value = RasterImage> {
    (1u32..24, 1u32..24).prop_flat_map(|(w, h)| image(w, h))
}

fn mask(w: u32, h: u32) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |b| Mask::new(w, h, b).unwrap())
}

/// Map image drawn only from palette colors.
fn palette_image(p: Palette, w: u32, h: u32) -> impl Strategy<Value = RasterImage> {
    let colors: Vec<Rgb> = p.classes.iter().map(|c| c.color).collect();
    proptest::collection::vec(proptest::sample::select(colors), (w * h) as usize)
        .prop_map(move |c| RasterImage::new(w, h, c.concat()).unwrap())
}

fn layout() -> impl Strategy<Value = Layout> {
    proptest::sample::select(Layout::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn join_then_split_is_identity(a in image(9, 7), b in image(9, 7)) {
        let joined = join_pair(&a, &b).unwrap();
        prop_assert_eq!(joined.dims(), (18, 7));
        let (a2, b2) = split_pair(&joined).unwrap();
        prop_assert_eq!(a2, a);
        prop_assert_eq!(b2, b);
    }

    #[test]
    fn unit_round_trip_is_exact(img in sized_image()) {
        let t = to_unit(&img);
        prop_assert!(t.to_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert_eq!(from_unit(&t).unwrap(), img);
    }

    #[test]
    fn palette_swap_round_trips(img in palette_image(Palette::standard(), 12, 10)) {
        let fwd = PaletteMap::between(&Palette::standard(), &Palette::red_black()).unwrap();
        let back = fwd.inverse().unwrap();
        let there = remap_palette(&img, &fwd, false);
        prop_assert_eq!(remap_palette(&there, &back, false), img);
    }

    #[test]
    fn binarize_grows_with_tolerance(img in image(10, 10), t1 in 0.0f64..200.0, dt in 0.0f64..200.0) {
        let p = Palette::standard();
        let narrow = binarize_runway(&img, &p, t1);
        let wide = binarize_runway(&img, &p, t1 + dt);
        prop_assert!(narrow.is_subset_of(&wide));
    }

    #[test]
    fn iou_is_bounded_and_symmetric(a in mask(8, 8), b in mask(8, 8)) {
        let ab = compare_masks(&a, &b).unwrap();
        let ba = compare_masks(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab.iou));
        prop_assert_eq!(ab.iou, ba.iou);
        prop_assert_eq!(ab.added.count(), ba.removed.count());
        prop_assert_eq!(compare_masks(&a, &a).unwrap().iou, 1.0);
    }

    #[test]
    fn resize_hits_requested_dims(img in sized_image(), w in 1u32..40, h in 1u32..40) {
        prop_assert_eq!(resize_bilinear(&img, w, h).unwrap().dims(), (w, h));
    }

    #[test]
    fn resize_to_same_size_is_identity(img in sized_image()) {
        let (w, h) = img.dims();
        prop_assert_eq!(resize_bilinear(&img, w, h).unwrap(), img);
    }

    #[test]
    fn zoom_step_halves_resolution(lat in -85.0f64..85.0, zoom in 0u32..22) {
        let r0 = ground_resolution(lat, zoom).unwrap();
        let r1 = ground_resolution(lat, zoom + 1).unwrap();
        prop_assert!((r0 / r1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn resolution_scales_with_latitude_cosine(lat in -85.0f64..85.0, zoom in 0u32..=22) {
        let r = ground_resolution(lat, zoom).unwrap();
        let eq = ground_resolution(0.0, zoom).unwrap();
        prop_assert!((r / eq - lat.to_radians().cos()).abs() < 1e-12);
    }

    #[test]
    fn projection_round_trips(lat in -85.0f64..85.0, lon in -180.0f64..180.0, zoom in 0u32..=22) {
        let p = GeoPoint::new(lat, lon).unwrap();
        let q = world_pixel_to_latlon(latlon_to_world_pixel(p, zoom).unwrap(), zoom);
        prop_assert!((q.lat() - lat).abs() < 1e-9 && (q.lon() - lon).abs() < 1e-9);
    }

    #[test]
    fn pool_never_exceeds_capacity(cap in 0usize..8, seed in any::<u64>(), n in 0usize..40) {
        let mut pool = ImagePool::new(cap, ChaCha8Rng::seed_from_u64(seed));
        for i in 0..n {
            let out = pool.query(&Tensor::full(&[1], i as f32)).item();
            prop_assert!(out <= i as f32);
            prop_assert!(pool.len() <= cap);
        }
        prop_assert_eq!(pool.len(), n.min(cap));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_matches_reference(
        seed in any::<u64>(),
        (cin, cout) in (1usize..4, 1usize..4),
        hw in 4usize..10,
        (stride, pad) in proptest::sample::select(vec![(1, 0), (1, 1), (2, 1), (2, 0)]),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::<f64>::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (x, w, b) = (t(&[1, cin, hw, hw]), t(&[cout, cin, 4, 4]), t(&[cout]));
        if hw + 2 * pad >= 4 {
            let fast = x.conv2d(&w, &b, stride, pad).unwrap().to_vec();
            let slow = reference::conv2d(&x, &w, &b, stride, pad).unwrap();
            prop_assert!(fast.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-10));
        }
        let wt = t(&[cin, cout, 4, 4]);
        let fast = x.conv_transpose2d(&wt, &b, stride, pad).unwrap().to_vec();
        let slow = reference::conv_transpose2d(&x, &wt, &b, stride, pad).unwrap();
        prop_assert_eq!(fast.len(), slow.len());
        prop_assert!(fast.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn scenes_are_deterministic(seed in any::<u64>(), layout in layout()) {
        let spec = SceneSpec::new(seed, 64, layout);
        let (a, b) = (generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        prop_assert_eq!(a.sat, b.sat);
        prop_assert_eq!(a.map, b.map);
        prop_assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn map_binarizes_to_mask(seed in any::<u64>(), layout in layout()) {
        for palette in [Palette::standard(), Palette::red_black()] {
            let s = generate_scene(&SceneSpec { palette: palette.clone(), ..SceneSpec::new(seed, 64, layout) }).unwrap();
            let iou = compare_masks(&binarize_runway(&s.map, &palette, 30.0), &s.mask).unwrap().iou;
            prop_assert!(iou >= 0.99, "{:?} iou {}", layout, iou);
        }
    }

    #[test]
    fn faulty_flag_monotone_in_threshold(seed in any::<u64>(), t1 in 0.0f64..1.0, dt in 0.0f64..1.0) {
        let a = generate_scene(&SceneSpec::new(seed, 64, Layout::FiveWay)).unwrap();
        let b = generate_scene(&SceneSpec::new(seed ^ 1, 64, Layout::Cross)).unwrap();
        let p = Palette::standard();
        let (c1, f1) = diff_maps(&a.map, &b.map, &p, 30.0, t1).unwrap();
        let (c2, f2) = diff_maps(&a.map, &b.map, &p, 30.0, t1 + dt).unwrap();
        prop_assert_eq!(c1.iou, c2.iou);
        prop_assert!(!f1 || f2);
    }
}
