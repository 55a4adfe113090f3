use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};

const SMALL: &str = "height = 64
width = 64
radius_min = 6
radius_max = 20
shift_min = 2
shift_max = 8
crop_size = 64
gen_channels = 4
disc_channels = 8
batch_size = 2
epochs = 0
";

fn cdgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdgan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

fn simulate(cfg: &Path, out: &Path, count: usize, seed: u64) {
    let o = cdgan(&[
        "simulate",
        "--config",
        s(cfg),
        "--out",
        s(out),
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--deterministic",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["a", "b", "mask"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap()));
        }
    }
    out.push(("manifest.tsv".into(), fs::read(dir.join("manifest.tsv")).unwrap()));
    out
}

#[test]
fn simulate_zero_writes_a_header_only_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    simulate(&cfg, &tmp.path().join("d"), 0, 1);
    let text = fs::read_to_string(tmp.path().join("d/manifest.tsv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("id\t"));
}

#[test]
fn simulate_is_deterministic_by_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    simulate(&cfg, &tmp.path().join("x"), 3, 5);
    simulate(&cfg, &tmp.path().join("y"), 3, 5);
    simulate(&cfg, &tmp.path().join("z"), 3, 6);
    let (x, y, z) = (files(&tmp.path().join("x")), files(&tmp.path().join("y")), files(&tmp.path().join("z")));
    assert_eq!(x.len(), 10);
    assert_eq!(x, y);
    assert_ne!(x, z);
}

#[test]
fn written_masks_cover_every_changed_pixel_without_nuisance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "brightness = 0\nnoise_sigma = 0\nhue_jitter = false\n");
    let out = tmp.path().join("d");
    simulate(&cfg, &out, 4, 11);
    let mut changed_total = 0;
    for i in 0..4 {
        let file = format!("{i:05}.png");
        let a = image::open(out.join("a").join(&file)).unwrap().to_rgb8();
        let b = image::open(out.join("b").join(&file)).unwrap().to_rgb8();
        let m = image::open(out.join("mask").join(&file)).unwrap().to_luma8();
        for (x, y, pa) in a.enumerate_pixels() {
            if pa != b.get_pixel(x, y) {
                changed_total += 1;
                assert!(m.get_pixel(x, y)[0] > 127, "pair {i}: change at ({x}, {y}) outside the mask");
            }
        }
    }
    assert!(changed_total > 0);
}

#[test]
fn unwritable_output_exits_with_data_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = cdgan(&["simulate", "--config", s(&cfg), "--out", s(&blocker.join("sub")), "--count", "1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "epoch = 3\n").unwrap();
    let o = cdgan(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("d")), "--count", "1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&cdgan(&["simulate"])), 1);
    assert_eq!(code(&cdgan(&["frobnicate"])), 1);
    assert_eq!(code(&cdgan(&["--help"])), 0);
}

fn solid(w: u32, h: u32, c: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb(c))
}

#[test]
fn train_infer_and_eval_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = write_config(root, "");
    let data = root.join("data");
    simulate(&cfg, &data.join("train"), 2, 1);
    simulate(&cfg, &data.join("val"), 2, 2);

    let run = root.join("run");
    let o = cdgan(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = run.join("last.ckpt");
    assert!(ckpt.exists());
    assert_eq!(fs::read_to_string(run.join("history.tsv")).unwrap(), "");

    let (pa, pb, pc) = (root.join("a.png"), root.join("b.png"), root.join("c.png"));
    solid(70, 45, [10, 20, 30]).save(&pa).unwrap();
    let mut b = solid(70, 45, [10, 20, 30]);
    for y in 10..30 {
        for x in 20..50 {
            b.put_pixel(x, y, Rgb([200, 180, 40]));
        }
    }
    b.save(&pb).unwrap();
    solid(60, 45, [0, 0, 0]).save(&pc).unwrap();

    let (mask, raw) = (root.join("mask.png"), root.join("raw.png"));
    let o = cdgan(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--image-a",
        s(&pa),
        "--image-b",
        s(&pb),
        "--out",
        s(&mask),
        "--raw",
        s(&raw),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(image::open(&mask).unwrap().to_luma8().dimensions(), (70, 45));
    assert_eq!(image::open(&raw).unwrap().to_luma8().dimensions(), (70, 45));

    let o = cdgan(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--image-a",
        s(&pa),
        "--image-b",
        s(&pc),
        "--out",
        s(&root.join("m2.png")),
    ]);
    assert_eq!(code(&o), 2);

    let report = root.join("report.tsv");
    let o = cdgan(&["eval", "--oracle", "--data", s(&data.join("val")), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().last().unwrap().starts_with("ALL\t"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ALL\t"));

    let o = cdgan(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data.join("val")), "--report", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
