use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use quadtok::image::{load_ppm, save_ppm, Image};
use quadtok::quadtree::PatchMosaic;
use quadtok::scorers::FeatureExtractorSpec;
use quadtok::synthetic::scene;
use quadtok::tensor::Tensor;
use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadtok"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    run(args, cwd).status.code().unwrap()
}

fn write_image(dir: &Path, name: &str, img: &Image) -> PathBuf {
    let p = dir.join(name);
    save_ppm(img, &p).unwrap();
    p
}

fn half_constant(seed: u64) -> Image {
    let textured = scene(256, 256, seed);
    Image::from_fn(256, 256, |y, x, c| if x < 128 { 0.5 } else { textured.at(y, x, c) }).unwrap()
}

fn mosaic(dir: &Path, name: &str) -> PatchMosaic {
    PatchMosaic::from_json(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn tokenize_patch_counts() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "a.ppm", &scene(256, 256, 1));
    ok(&["tokenize", "a.ppm", "--patches", "256", "--out", "full"], d);
    let m = mosaic(d, "full/a.mosaic.json");
    assert_eq!(m.len(), 256);
    assert!(m.patches().iter().all(|p| p.size == 16));

    ok(&["tokenize", "a.ppm", "--patches", "64", "--out", "l64"], d);
    assert_eq!(mosaic(d, "l64/a.mosaic.json").len(), 64);
    let t = Tensor::load(d.join("l64/a.tokens.mtok")).unwrap();
    assert_eq!(t.dims(), &[64, 64]);
    let side: Value = serde_json::from_str(&std::fs::read_to_string(d.join("l64/a.tokens.json")).unwrap()).unwrap();
    assert_eq!(side["tokens"].as_array().unwrap().len(), 64);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(d.join("l64/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["config"]["quadtree"]["target_patches"], 64);
}

#[test]
fn splits_avoid_the_constant_half() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "h.ppm", &half_constant(2));
    ok(&["tokenize", "h.ppm", "--patches", "100", "--scorer", "pixel-blur", "--out", "o"], d);
    let m = mosaic(d, "o/h.mosaic.json");
    assert_eq!(m.len(), 100);
    for p in m.patches() {
        if p.x < 128 {
            assert_eq!(p.size, 64, "{p:?} was split");
        }
    }
}

#[test]
fn outputs_are_reproducible_and_job_independent() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "a.ppm", &scene(256, 256, 3));
    write_image(d, "b.ppm", &scene(256, 256, 4));
    let read = |f: &str| std::fs::read(d.join("o").join(f)).unwrap();
    let data = ["a.mosaic.json", "a.tokens.mtok", "a.tokens.json", "b.mosaic.json", "b.tokens.mtok", "b.tokens.json"];
    ok(&["tokenize", "a.ppm", "b.ppm", "--jobs", "1", "--out", "o"], d);
    let serial: Vec<Vec<u8>> = data.iter().map(|f| read(f)).collect();
    ok(&["tokenize", "a.ppm", "b.ppm", "--jobs", "3", "--out", "o"], d);
    let manifest = read("manifest.json");
    for (f, bytes) in data.iter().zip(&serial) {
        assert!(read(f) == *bytes, "{f} depends on --jobs");
    }
    ok(&["tokenize", "a.ppm", "b.ppm", "--jobs", "3", "--out", "o"], d);
    assert!(read("manifest.json") == manifest, "manifest changed between identical runs");
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "a.ppm", &scene(256, 256, 5));
    std::fs::write(d.join("cfg.json"), r#"{"patches": 100, "seed": 7}"#).unwrap();
    ok(&["tokenize", "a.ppm", "--config", "cfg.json", "--out", "file"], d);
    assert_eq!(mosaic(d, "file/a.mosaic.json").len(), 100);
    ok(&["tokenize", "a.ppm", "--config", "cfg.json", "--patches", "64", "--out", "flag"], d);
    assert_eq!(mosaic(d, "flag/a.mosaic.json").len(), 64);

    std::fs::write(d.join("bad.json"), r#"{"patchez": 100}"#).unwrap();
    assert_eq!(code(&["tokenize", "a.ppm", "--config", "bad.json", "--out", "x"], d), 2);
}

#[test]
fn render_contracts() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let img = scene(256, 256, 6);
    write_image(d, "a.ppm", &img);
    ok(&["tokenize", "a.ppm", "--patches", "256", "--out", "full"], d);
    ok(&["render", "a.ppm", "--mosaic", "full/a.mosaic.json", "--out", "same.ppm"], d);
    assert_eq!(std::fs::read(d.join("same.ppm")).unwrap(), std::fs::read(d.join("a.ppm")).unwrap());

    ok(&["tokenize", "a.ppm", "--patches", "16", "--out", "coarse"], d);
    ok(&["render", "a.ppm", "--mosaic", "coarse/a.mosaic.json", "--out", "blocky.ppm"], d);
    let r = load_ppm(d.join("blocky.ppm")).unwrap();
    for y in 0..256 {
        for x in 0..256 {
            for c in 0..3 {
                assert_eq!(r.at(y, x, c), r.at(y / 4 * 4, x / 4 * 4, c));
            }
        }
    }

    // Coarse patches lose more detail than fine ones.
    ok(&["tokenize", "a.ppm", "--patches", "100", "--out", "mixed"], d);
    ok(&["render", "a.ppm", "--mosaic", "mixed/a.mosaic.json", "--out", "mixed.ppm"], d);
    let r = load_ppm(d.join("mixed.ppm")).unwrap();
    let m = mosaic(d, "mixed/a.mosaic.json");
    let mse = |size: usize| {
        let (mut s, mut n) = (0.0f64, 0usize);
        for p in m.patches().iter().filter(|p| p.size == size) {
            for y in p.y..p.y + p.size {
                for x in p.x..p.x + p.size {
                    for c in 0..3 {
                        let e = (r.at(y, x, c) - img.at(y, x, c)) as f64;
                        s += e * e;
                        n += 1;
                    }
                }
            }
        }
        s / n as f64
    };
    assert!(mse(64) > mse(16));

    ok(&["render", "a.ppm", "--mosaic", "mixed/a.mosaic.json", "--grid", "--grid-color", "00ff00", "--out", "g.ppm"], d);
    let g = load_ppm(d.join("g.ppm")).unwrap();
    assert_eq!((g.at(0, 0, 0), g.at(0, 0, 1)), (0.0, 1.0));

    write_image(d, "small.ppm", &scene(128, 128, 1));
    assert_eq!(code(&["render", "small.ppm", "--mosaic", "mixed/a.mosaic.json", "--out", "x.ppm"], d), 3);
}

#[test]
fn score_files() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "flat.ppm", &Image::filled(256, 256, 0.25).unwrap());
    ok(&["score", "flat.ppm", "--out", "flat.json", "--heatmap", "heat"], d);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(d.join("flat.json")).unwrap()).unwrap();
    let scores = v["images"][0]["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 80);
    assert!(scores.iter().all(|s| s["score"].as_f64() == Some(0.0)));
    assert!(d.join("heat/flat.heat64.ppm").exists() && d.join("heat/flat.heat32.ppm").exists());
    assert!(d.join("flat.manifest.json").exists());

    write_image(d, "a.ppm", &scene(256, 256, 8));
    FeatureExtractorSpec::identity().to_bundle().save(d.join("ident")).unwrap();
    ok(&["score", "a.ppm", "--blur-upsample", "nearest", "--out", "pix.json"], d);
    ok(
        &["score", "a.ppm", "--scorer", "feature", "--extractor", "ident", "--blur-upsample", "nearest", "--out", "feat.json"],
        d,
    );
    let pix: Value = serde_json::from_str(&std::fs::read_to_string(d.join("pix.json")).unwrap()).unwrap();
    let feat: Value = serde_json::from_str(&std::fs::read_to_string(d.join("feat.json")).unwrap()).unwrap();
    assert_eq!(pix["images"], feat["images"]);
    assert_eq!(code(&["score", "a.ppm", "--scoring-scale", "0.5"], d), 2);
    ok(&["score", "a.ppm", "--scorer", "feature", "--extractor", "ident", "--scoring-scale", "0.75", "--out", "s.json"], d);
}

#[test]
fn saliency_scorer_and_numeric_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "a.ppm", &scene(256, 256, 9));
    let hot: Vec<f32> = (0..256 * 256).map(|i| if i % 256 >= 192 && i / 256 < 64 { 1.0 } else { 0.0 }).collect();
    Tensor::new(vec![256, 256], hot).unwrap().save(d.join("map.mtok")).unwrap();
    ok(&["tokenize", "a.ppm", "--scorer", "saliency", "--saliency", "map.mtok", "--patches", "19", "--out", "o"], d);
    let m = mosaic(d, "o/a.mosaic.json");
    assert!(m.patches().iter().filter(|p| p.size == 32).all(|p| p.x >= 192 && p.y < 64));

    Tensor::new(vec![256, 256], vec![-1.0; 256 * 256]).unwrap().save(d.join("neg.mtok")).unwrap();
    assert_eq!(code(&["score", "a.ppm", "--scorer", "saliency", "--saliency", "neg.mtok"], d), 4);
    assert_eq!(code(&["score", "a.ppm", "--scorer", "saliency"], d), 2);
}

#[test]
fn correlate_reports() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "a.ppm", &scene(256, 256, 10));
    write_image(d, "b.ppm", &scene(256, 256, 11));
    FeatureExtractorSpec::default_stack(3).to_bundle().save(d.join("ext")).unwrap();
    ok(&["score", "a.ppm", "b.ppm", "--out", "pix.json"], d);
    ok(&["score", "a.ppm", "b.ppm", "--scorer", "feature", "--extractor", "ext", "--out", "feat.json"], d);
    let out = ok(
        &["correlate", "--reference", "pix.json", "--candidate", "same=pix.json", "--candidate", "feat=feat.json", "--format", "json"],
        d,
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["images"], 2);
    assert_eq!(v["scorers"][0]["mean_kendall"], 1.0);
    assert_eq!(v["comparisons"].as_array().unwrap().len(), 2);

    ok(&["score", "a.ppm", "--out", "one.json"], d);
    assert_eq!(code(&["correlate", "--reference", "pix.json", "--candidate", "x=one.json"], d), 3);
    assert_eq!(code(&["correlate", "--reference", "pix.json", "--candidate", "nopath"], d), 2);
}

#[test]
fn stats_rows() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "flat.ppm", &Image::filled(256, 256, 0.6).unwrap());
    let out = ok(&["stats", "flat.ppm", "--targets", "16,64,256", "--format", "json", "--csv", "c.csv"], d);
    let v: Value = serde_json::from_str(&out).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows[0]["fractions"]["64"], 1.0);
    assert_eq!(rows[1]["fractions"]["32"], 1.0);
    assert_eq!(rows[2]["fractions"]["16"], 1.0);
    let csv = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert!(csv.starts_with("L,frac64,frac32,frac16\n"));
    assert_eq!(code(&["stats", "--synthetic", "2", "--targets", "17"], d), 2);
}

#[test]
fn forward_is_permutation_invariant() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write_image(d, "a.ppm", &scene(256, 256, 12));
    ok(&["tokenize", "a.ppm", "--patches", "100", "--out", "o"], d);
    let t = Tensor::load(d.join("o/a.tokens.mtok")).unwrap();
    let (rows, cols) = (t.dims()[0], t.dims()[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        data.extend_from_slice(&t.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::new(vec![rows, cols], data).unwrap().save(d.join("rev.mtok")).unwrap();
    ok(&["init-weights", "model", "--seed", "4", "--out", "model"], d);
    let out = ok(&["forward", "o/a.tokens.mtok", "rev.mtok", "--weights", "model"], d);
    let v: Value = serde_json::from_str(&out).unwrap();
    let a: Vec<f64> = v["logits"][0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let b: Vec<f64> = v["logits"][1].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-5 * scale);
    }

    let seeded = ok(&["forward", "o/a.tokens.mtok", "--seed", "4"], d);
    let s: Value = serde_json::from_str(&seeded).unwrap();
    assert_eq!(s["logits"][0], v["logits"][0]);

    std::fs::write(d.join("m.json"), r#"{"d_model": 32, "n_heads": 4, "n_layers": 1, "n_classes": 3}"#).unwrap();
    assert_eq!(code(&["forward", "o/a.tokens.mtok", "--model-config", "m.json"], d), 3);
    assert_eq!(code(&["forward", "o/a.tokens.mtok", "--model-config", "m.json", "--weights", "model"], d), 2);
}

#[test]
fn bench_components() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = ok(&["bench", "--synthetic", "1", "--size", "128", "--reps", "2", "--warmup", "0", "--format", "json"], d);
    let v: Value = serde_json::from_str(&out).unwrap();
    let names: Vec<&str> = v["components"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["scorer", "quadtree", "tokenizer", "transformer"]);
}

#[test]
fn input_errors() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.ppm"), b"P3\n1 1\n255\n0 0 0\n").unwrap();
    assert_eq!(code(&["tokenize", "bad.ppm", "--out", "o"], d), 3);
    assert_eq!(code(&["tokenize", "missing.ppm", "--out", "o"], d), 3);
    assert_eq!(code(&["tokenize", "--out", "o"], d), 2);
    write_image(d, "a.ppm", &scene(256, 256, 1));
    assert_eq!(code(&["tokenize", "a.ppm", "--patches", "65", "--out", "o"], d), 2);
    assert_eq!(code(&["tokenize", "a.ppm", "--s-max", "48", "--out", "o"], d), 2);
}
