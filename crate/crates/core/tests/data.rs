use std::collections::HashSet;
use std::fs;

use cdgan_core::data::{
    augment, denormalize, load_dataset, normalize, random_crop, rasterize, render_scene, simulate_dataset,
    simulate_pair, simulate_scene, write_dataset, Background, DatasetLayout, Edit, Nuisance, Polygon, SampleRecord,
    Scene, SceneObject, SimConfig, Split, Transform,
};
use cdgan_core::metrics::{confusion, object_counts};
use cdgan_core::raster::Mask;
use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(objects: Vec<SceneObject>) -> Scene {
    Scene {
        height: 64,
        width: 64,
        background: Background::flat([40, 80, 120]),
        objects,
    }
}

fn object(poly: Polygon, edit: Edit) -> SceneObject {
    SceneObject { polygon: poly, color: [250, 10, 10], edit }
}

#[test]
fn unedited_scene_renders_identical_images_and_an_empty_mask() {
    let s = scene(vec![object(Polygon::rect(5.0, 5.0, 30.0, 20.0), Edit::Unchanged)]);
    let r = render_scene("x", &s, &Nuisance::default()).unwrap();
    assert_eq!(r.image_a, r.image_b);
    assert!(r.mask.is_empty());
}

#[test]
fn added_square_is_exactly_the_mask() {
    let s = scene(vec![object(Polygon::rect(10.0, 12.0, 20.0, 22.0), Edit::Add)]);
    let r = render_scene("x", &s, &Nuisance::default()).unwrap();
    let expect = Mask::from_fn(64, 64, |y, x| (12..22).contains(&y) && (10..20).contains(&x));
    assert_eq!(r.mask, expect);
    assert_eq!(r.image_a.get_pixel(15, 15), &Rgb([40, 80, 120]));
    assert_eq!(r.image_b.get_pixel(15, 15), &Rgb([250, 10, 10]));
}

#[test]
fn shifted_square_marks_both_footprints_but_not_their_overlap() {
    let s = scene(vec![object(Polygon::rect(10.0, 10.0, 20.0, 20.0), Edit::Shift { dx: 4.0, dy: 0.0 })]);
    let r = render_scene("x", &s, &Nuisance::default()).unwrap();
    assert_eq!(r.mask.count(), 2 * 4 * 10);
    assert!(r.mask.get(15, 10) && r.mask.get(15, 22) && !r.mask.get(15, 15));
}

#[test]
fn brightness_alone_changes_pixels_but_not_the_mask() {
    let s = scene(vec![object(Polygon::rect(5.0, 5.0, 30.0, 20.0), Edit::Unchanged)]);
    let n = Nuisance { brightness: 0.15, ..Nuisance::default() };
    let r = render_scene("x", &s, &n).unwrap();
    assert_ne!(r.image_a, r.image_b);
    assert!(r.mask.is_empty());
    assert_eq!(r.meta["nuisance"], "brightness");
}

fn edited_footprints(s: &Scene) -> Mask {
    let mut any = Mask::new(s.height, s.width);
    for o in s.objects.iter().filter(|o| o.edit != Edit::Unchanged) {
        for p in [o.polygon_a(), o.polygon_b()].into_iter().flatten() {
            any.union_with(&rasterize(&p, s.height, s.width));
        }
    }
    any
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn mask_is_sound_without_nuisance(seed in any::<u64>()) {
        let cfg = SimConfig { height: 64, width: 64, ..SimConfig::default() };
        let (s, _) = simulate_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let r = render_scene("x", &s, &Nuisance::default()).unwrap();
        let support = edited_footprints(&s);
        for y in 0..64 {
            for x in 0..64 {
                if r.mask.get(y, x) {
                    prop_assert!(support.get(y, x));
                } else {
                    prop_assert_eq!(r.image_a.get_pixel(x as u32, y as u32), r.image_b.get_pixel(x as u32, y as u32));
                }
            }
        }
    }

    #[test]
    fn nuisance_only_pairs_have_empty_masks(seed in any::<u64>()) {
        let cfg = SimConfig { height: 64, width: 64, hue_jitter: true, ..SimConfig::default() }.nuisance_only();
        let r = simulate_pair(&cfg, "x", &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(r.mask.is_empty());
        prop_assert_eq!(&r.meta["edits"], "0");
    }

    #[test]
    fn simulation_is_a_function_of_seed_and_index(seed in 0u64..1000) {
        let cfg = SimConfig { height: 64, width: 64, seed, ..SimConfig::default() };
        let a = simulate_dataset(&cfg, 3).unwrap();
        let b = simulate_dataset(&cfg, 2).unwrap();
        prop_assert_eq!(&a[..2], &b[..]);
        prop_assert_eq!(a[2].id.as_str(), "00002");
    }
}

#[test]
fn different_seeds_give_different_data() {
    let cfg = SimConfig::default();
    let a = simulate_dataset(&cfg, 1).unwrap();
    let b = simulate_dataset(&SimConfig { seed: 1, ..cfg }, 1).unwrap();
    assert_ne!(a[0].image_a, b[0].image_a);
}

#[test]
fn invalid_sim_configs_are_rejected() {
    for bad in [
        SimConfig { polygons_min: 5, polygons_max: 2, ..SimConfig::default() },
        SimConfig { p_add: 0.7, p_remove: 0.7, ..SimConfig::default() },
        SimConfig { radius_max: 100.0, ..SimConfig::default() },
        SimConfig { vertices_min: 2, ..SimConfig::default() },
        SimConfig { height: 32, width: 32, radius_max: 10.0, ..SimConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

fn sample_set(n: usize) -> Vec<SampleRecord> {
    let cfg = SimConfig { height: 64, width: 72, seed: 3, ..SimConfig::default() };
    simulate_dataset(&cfg, n).unwrap()
}

#[test]
fn missing_dataset_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(&dir.path().join("nope"), DatasetLayout::TripletDirs, Split::Train).unwrap_err();
    assert!(matches!(err, cdgan_core::Error::Data(_)));
    let err = load_dataset(dir.path(), DatasetLayout::TripletDirs, Split::Train).unwrap_err();
    assert!(matches!(err, cdgan_core::Error::Data(_)));
}

#[test]
fn written_datasets_load_back_in_id_order() {
    let dir = tempfile::tempdir().unwrap();
    let records = sample_set(4);
    write_dataset(&records, dir.path()).unwrap();
    let m = load_dataset(dir.path(), DatasetLayout::TripletDirs, Split::Val).unwrap();
    assert!(m.warnings.is_empty());
    assert_eq!(m.entries.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["00000", "00001", "00002", "00003"]);
    assert_eq!((m.entries[0].height, m.entries[0].width), (64, 72));
    let loaded = m.load_all().unwrap();
    for (l, r) in loaded.iter().zip(&records) {
        assert_eq!((&l.image_a, &l.image_b, &l.mask), (&r.image_a, &r.image_b, &r.mask));
    }
    let manifest = fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "id\theight\twidth\tedits\tnuisance");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("00000\t64\t72\t"));
}

#[test]
fn incomplete_triples_are_skipped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&sample_set(4), dir.path()).unwrap();
    fs::remove_file(dir.path().join("b/00002.png")).unwrap();
    let m = load_dataset(dir.path(), DatasetLayout::TripletDirs, Split::Train).unwrap();
    assert_eq!(m.len(), 3);
    assert_eq!(m.warnings.len(), 1);
    assert!(m.warnings[0].contains("00002"));
}

#[test]
fn undecodable_and_mismatched_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&sample_set(3), dir.path()).unwrap();
    fs::write(dir.path().join("a/00000.png"), b"not a png").unwrap();
    RgbImage::new(8, 8).save(dir.path().join("b/00001.png")).unwrap();
    let m = load_dataset(dir.path(), DatasetLayout::TripletDirs, Split::Train).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m.warnings.len(), 2);
}

#[test]
fn aicd_style_trees_are_found_recursively() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (800, 600);
    for (sub, id) in [("Scene0001/View1", "Scene0001_View1"), ("Scene0002/View3", "Scene0002_View3")] {
        let d = dir.path().join(sub);
        fs::create_dir_all(&d).unwrap();
        RgbImage::from_pixel(w, h, Rgb([1, 2, 3])).save(d.join(format!("{id}_target.png"))).unwrap();
        RgbImage::from_pixel(w, h, Rgb([4, 5, 6])).save(d.join(format!("{id}_moving.png"))).unwrap();
        let mut m = Mask::new(h as usize, w as usize);
        m.set(10, 700, true);
        m.save(&d.join(format!("{id}_gtmask.png"))).unwrap();
    }
    let m = load_dataset(dir.path(), DatasetLayout::AicdStyle, Split::Test).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!((m.entries[0].height, m.entries[0].width), (600, 800));
    let r = m.load_all().unwrap();
    assert_eq!(r[0].id, "Scene0001_View1");
    assert_eq!(r[0].image_a.get_pixel(0, 0), &Rgb([1, 2, 3]));
    assert_eq!(r[0].image_b.get_pixel(0, 0), &Rgb([4, 5, 6]));
    assert_eq!(r[1].mask.count(), 1);
    assert!(r[1].mask.get(10, 700));
}

#[test]
fn layout_names_parse() {
    assert_eq!("triplet-dirs".parse::<DatasetLayout>().unwrap(), DatasetLayout::TripletDirs);
    assert_eq!("aicd-style".parse::<DatasetLayout>().unwrap(), DatasetLayout::AicdStyle);
    assert!("aicd".parse::<DatasetLayout>().is_err());
}

/// Pixel `(x, y)` holds `(x mod 256, y mod 256, x/256 + 16 * (y/256))`.
fn coordinate_record(w: u32, h: u32) -> SampleRecord {
    let img = RgbImage::from_fn(w, h, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, (x / 256 + 16 * (y / 256)) as u8]));
    let mask = Mask::from_fn(h as usize, w as usize, |y, x| (x + y) % 3 == 0);
    SampleRecord::new("c", img.clone(), img, mask).unwrap()
}

fn origin_of(r: &SampleRecord) -> (u32, u32) {
    let p = r.image_a.get_pixel(0, 0).0;
    (p[1] as u32 + 256 * (p[2] as u32 / 16), p[0] as u32 + 256 * (p[2] as u32 % 16))
}

#[test]
fn full_size_crop_is_the_identity() {
    let r = coordinate_record(256, 256);
    let c = random_crop(&r, 256, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(c, r);
}

#[test]
fn crops_from_a_large_frame_keep_pixels_and_mask_aligned() {
    let r = coordinate_record(4096, 2160);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let c = random_crop(&r, 256, &mut rng).unwrap();
        assert_eq!((c.height(), c.width()), (256, 256));
        let (y0, x0) = origin_of(&c);
        assert!(y0 as usize + 256 <= 2160 && x0 as usize + 256 <= 4096);
        assert_eq!(c, r.crop(y0 as usize, x0 as usize, 256, 256).unwrap());
        assert_eq!(c.mask.get(3, 5), r.mask.get(y0 as usize + 3, x0 as usize + 5));
    }
}

#[test]
fn crop_origins_are_uniform() {
    let r = coordinate_record(10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = [[0u32; 3]; 3];
    let n = 9000;
    for _ in 0..n {
        let (y, x) = origin_of(&random_crop(&r, 8, &mut rng).unwrap());
        counts[y as usize][x as usize] += 1;
    }
    let expect = n as f64 / 9.0;
    let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 8 degrees of freedom; the 0.999 quantile is 26.1.
    assert!(chi2 < 26.1, "{counts:?} chi2 {chi2}");
}

#[test]
fn undersized_crops_are_rejected() {
    let r = coordinate_record(100, 300);
    assert!(random_crop(&r, 256, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn normalization_round_trips_every_level() {
    let img = RgbImage::from_fn(256, 1, |x, _| Rgb([x as u8, 255 - x as u8, (x * 7 % 256) as u8]));
    let t = normalize(&img);
    assert_eq!(t.shape(), &[3, 1, 256]);
    assert_eq!(denormalize(&t).unwrap(), img);
    let d = t.data();
    assert_eq!(d[0], -1.0);
    assert_eq!(d[255], 1.0);
    assert!((d[127] - (127.0 / 127.5 - 1.0)).abs() < 1e-7);
    assert!((d[127] + 0.0039).abs() < 1e-4);
}

fn all_transforms() -> Vec<Transform> {
    let mut v = Vec::new();
    for hflip in [false, true] {
        for vflip in [false, true] {
            for quarter_turns in 0..4 {
                v.push(Transform { hflip, vflip, quarter_turns });
            }
        }
    }
    v
}

#[test]
fn transform_identities() {
    let r = coordinate_record(12, 12);
    let turn = Transform { hflip: false, vflip: false, quarter_turns: 1 };
    let four = (0..4).fold(r.clone(), |acc, _| turn.apply(&acc));
    assert_eq!(four, r);
    let flip = Transform { hflip: true, vflip: false, quarter_turns: 0 };
    assert_eq!(flip.apply(&flip.apply(&r)), r);
    let flip = Transform { hflip: false, vflip: true, quarter_turns: 0 };
    assert_eq!(flip.apply(&flip.apply(&r)), r);
    let half = Transform { hflip: true, vflip: true, quarter_turns: 0 };
    let turn2 = Transform { hflip: false, vflip: false, quarter_turns: 2 };
    assert_eq!(half.apply(&r), turn2.apply(&r));
    let once = turn.apply(&r);
    // Clockwise: the old bottom-left corner becomes the top-left.
    assert_eq!(once.image_a.get_pixel(0, 0), r.image_a.get_pixel(0, 11));
}

#[test]
fn rotations_skip_non_square_records() {
    let r = coordinate_record(12, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = augment(&r, true, true, &mut rng);
        assert_eq!((a.height(), a.width()), (8, 12));
    }
}

#[test]
fn augmentation_draws_every_transform() {
    let r = coordinate_record(6, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seen: HashSet<Vec<u8>> = (0..400).map(|_| augment(&r, true, true, &mut rng).image_a.into_raw()).collect();
    assert_eq!(seen.len(), 8);
    let none: HashSet<Vec<u8>> = (0..20).map(|_| augment(&r, false, false, &mut rng).image_a.into_raw()).collect();
    assert_eq!(none.len(), 1);
}

fn arb_mask(h: usize, w: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(prop::bool::weighted(0.3), h * w).prop_map(move |v| Mask::from_vec(h, w, v).unwrap())
}

proptest! {
    #[test]
    fn transforms_preserve_counts_and_metrics(pred in arb_mask(9, 9), gt in arb_mask(9, 9)) {
        let base = confusion(&pred, &gt).unwrap();
        let objects = object_counts(&pred, &gt, 0.5).unwrap();
        for t in all_transforms() {
            let (tp, tg) = (t.apply_mask(&pred), t.apply_mask(&gt));
            prop_assert_eq!(tp.count(), pred.count());
            prop_assert_eq!(confusion(&tp, &tg).unwrap(), base);
            prop_assert_eq!(object_counts(&tp, &tg, 0.5).unwrap(), objects);
        }
    }
}
