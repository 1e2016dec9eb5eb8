use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{DynamicImage, Rgb, RgbImage};
use segadapt::data::io::{load_dataset, write_png};
use segadapt::data::{ColorLegend, DEFAULT_TOLERANCE};
use segadapt::metrics::{parse_per_class_csv, parse_summary};
use segadapt::trainer::{load_checkpoint, predict_samples, split_holdout};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segadapt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn count_png(dir: &Path) -> usize {
    if !dir.exists() {
        return 0;
    }
    files_under(dir).iter().filter(|p| p.extension().is_some_and(|e| e == "png")).count()
}

fn synth(dir: &Path, n: &str, size: &str) {
    let o = bin(dir, &["--seed", "4", "--out", "data", "synth", "--n", n, "--size", size]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_writes_visible_and_hidden_masks() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "8", "32x32");
    let d = t.path().join("data");
    let images = count_png(&d.join("A/images")) + count_png(&d.join("B/images")) + count_png(&d.join("C/images"));
    assert_eq!(images, 24);
    assert_eq!(count_png(&d.join("A/masks")) + count_png(&d.join("B/masks")), 16);
    assert_eq!(count_png(&d.join("C/masks")), 0);
    assert_eq!(count_png(&d.join("hidden_truth")), 8);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "3", "16x16");
    synth(b.path(), "3", "16x16");
    let fa = files_under(&a.path().join("data"));
    let fb = files_under(&b.path().join("data"));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn synth_rejects_sizes_off_the_grid() {
    let t = tempfile::tempdir().unwrap();
    let o = bin(t.path(), &["synth", "--size", "30x30"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn write_run(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(
        &p,
        format!(
            "out_dir = \"run\"\nmanifests = [\"data/A.manifest\", \"data/B.manifest\", \"data/C.manifest\"]\n\
             [train]\nepochs = 1\nbatch_size = 4\nholdout_fraction = 0.25\n{extra}"
        ),
    )
    .unwrap();
    p
}

#[test]
fn missing_manifest_is_an_io_error_naming_the_path() {
    let t = tempfile::tempdir().unwrap();
    write_run(t.path(), "");
    let o = bin(t.path(), &["--config", "run.toml", "train"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("A.manifest"), "{}", stderr(&o));
}

#[test]
fn unknown_run_file_keys_are_config_errors() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "2", "8x8");
    write_run(t.path(), "lamda2 = 0.0\n");
    let o = bin(t.path(), &["--config", "run.toml", "train"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("lamda2"), "{}", stderr(&o));
}

#[test]
fn zero_domain_weight_keeps_the_l2_column_out_of_the_total() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "4", "16x16");
    write_run(t.path(), "lambda2 = 0.0\n");
    let o = bin(t.path(), &["--config", "run.toml", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("final loss"));
    let csv = fs::read_to_string(t.path().join("run/steps.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,epoch,l0,l1,l2,total"));
    for line in lines {
        let f: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert!(f[2] < 0.0);
        assert_eq!(f[3], f[0] + f[1]);
    }
}

#[test]
fn resumed_cli_run_matches_uninterrupted_run() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "4", "16x16");
    write_run(t.path(), "");
    let full = bin(t.path(), &["--config", "run.toml", "--out", "full", "train", "--epochs", "2"]);
    assert!(full.status.success(), "{}", stderr(&full));
    let first = bin(t.path(), &["--config", "run.toml", "--out", "part", "train", "--epochs", "1"]);
    assert!(first.status.success());
    let rest = bin(
        t.path(),
        &["--config", "run.toml", "--out", "part", "train", "--epochs", "2", "--resume", "part/checkpoint.bin"],
    );
    assert!(rest.status.success(), "{}", stderr(&rest));
    for f in ["checkpoint.bin", "steps.csv"] {
        assert_eq!(
            fs::read(t.path().join("full").join(f)).unwrap(),
            fs::read(t.path().join("part").join(f)).unwrap(),
            "{f}"
        );
    }
}

fn overfit_run(dir: &Path) {
    synth(dir, "4", "16x16");
    fs::write(
        dir.join("run.toml"),
        "manifests = [\"data/A.manifest\", \"data/B.manifest\"]\n\
         [train]\nepochs = 150\nbatch_size = 4\nlabelled_fraction = 1.0\nlearning_rate = 0.005\naugment = \"none\"\nholdout_fraction = 0.2\n",
    )
    .unwrap();
    let o = bin(dir, &["--config", "run.toml", "--out", "run", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn overfit_checkpoint_segments_its_training_images() {
    let t = tempfile::tempdir().unwrap();
    overfit_run(t.path());
    let cp = load_checkpoint(&t.path().join("run/checkpoint.bin")).unwrap();
    let a = load_dataset(&t.path().join("data/A.manifest"), 3, DEFAULT_TOLERANCE).unwrap();
    let (train, _) = split_holdout(&a, cp.config.holdout_fraction, cp.config.seed);
    let ids: Vec<String> = train.samples().iter().map(|s| s.id.clone()).collect();
    assert_eq!(ids.len(), 3);
    let images: Vec<String> = ids.iter().map(|id| format!("data/A/images/{id}.png")).collect();
    let mut args = vec!["--out", "seg", "segment", "--checkpoint", "run/checkpoint.bin"];
    args.extend(images.iter().map(String::as_str));
    let o = bin(t.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));

    let legend = ColorLegend::aerial_six();
    let (mut agree, mut total) = (0usize, 0usize);
    for id in &ids {
        let pred = image::open(t.path().join(format!("seg/{id}_mask.png"))).unwrap().to_rgb8();
        let truth = image::open(t.path().join(format!("data/A/masks/{id}.png"))).unwrap().to_rgb8();
        let p = legend.color_to_index(&pred, 0).unwrap();
        let q = legend.color_to_index(&truth, 0).unwrap();
        agree += p.values().iter().zip(q.values()).filter(|(a, b)| a == b).count();
        total += p.values().len();
    }
    let share = agree as f64 / total as f64;
    assert!(share > 0.95, "pixel agreement {share}");

    // library inference on the loaded checkpoint agrees with the written PNGs
    let (masks, _) = predict_samples(&cp.params, &train.samples()[..1]).unwrap();
    let png = image::open(t.path().join(format!("seg/{}_mask.png", ids[0]))).unwrap().to_rgb8();
    assert_eq!(legend.color_to_index(&png, 0).unwrap(), masks[0]);
}

#[test]
fn segment_is_deterministic_and_survives_bad_files() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "2", "16x16");
    write_run(t.path(), "");
    assert!(bin(t.path(), &["--config", "run.toml", "train"]).status.success());
    fs::write(t.path().join("broken.png"), b"not a png").unwrap();
    let args = |out| {
        vec![
            "--out",
            out,
            "segment",
            "--checkpoint",
            "run/checkpoint.bin",
            "broken.png",
            "data/A/images/A-0000.png",
        ]
    };
    let o = bin(t.path(), &args("s1"));
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("broken.png"));
    bin(t.path(), &args("s2"));
    let a = fs::read(t.path().join("s1/A-0000_mask.png")).unwrap();
    let b = fs::read(t.path().join("s2/A-0000_mask.png")).unwrap();
    assert_eq!(a, b);
    assert!(!t.path().join("s1/broken_mask.png").exists());
}

#[test]
fn segment_with_no_images_warns_and_succeeds() {
    let t = tempfile::tempdir().unwrap();
    let o = bin(t.path(), &["--out", "seg", "segment", "--checkpoint", "absent.bin"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
    assert!(!t.path().join("seg").exists());
}

// Two-class fixture: "images" are color renderings of the predictions.
fn two_class_fixture(dir: &Path) -> (Vec<u8>, Vec<u8>) {
    let legend = ColorLegend::aerial(2).unwrap();
    let pred: Vec<u8> = vec![0, 0, 1, 1, 0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 1, 0];
    let truth: Vec<u8> = vec![0, 1, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 0];
    let render = |v: &[u8]| {
        RgbImage::from_fn(8, 1, |x, _| Rgb(legend.color(v[x as usize] as usize).unwrap()))
    };
    let mut body = String::new();
    for s in 0..2 {
        let p = dir.join(format!("fx/img{s}.png"));
        let m = dir.join(format!("fx/mask{s}.png"));
        write_png(&p, &DynamicImage::ImageRgb8(render(&pred[s * 8..][..8]))).unwrap();
        write_png(&m, &DynamicImage::ImageRgb8(render(&truth[s * 8..][..8]))).unwrap();
        body.push_str(&format!("img{s}.png mask{s}.png\n"));
    }
    fs::write(dir.join("fx/F.manifest"), format!("tag = A\nlabelled = true\nlegend = aerial2\n---\n{body}")).unwrap();
    (pred, truth)
}

#[test]
fn identity_eval_matches_hand_counts_and_reaggregates() {
    let t = tempfile::tempdir().unwrap();
    let (pred, truth) = two_class_fixture(t.path());
    let o = bin(t.path(), &["--out", "ev", "eval", "--identity", "--manifest", "fx/F.manifest"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let count = |p: u8, q: u8| pred.iter().zip(&truth).filter(|&(&a, &b)| a == p && b == q).count() as f64;
    let (tp0, tp1) = (count(0, 0), count(1, 1));
    let (p0t1, p1t0) = (count(0, 1), count(1, 0));
    let iou0 = tp0 / (tp0 + p0t1 + p1t0);
    let iou1 = tp1 / (tp1 + p1t0 + p0t1);

    let summary = parse_summary(&fs::read_to_string(t.path().join("ev/eval_summary.txt")).unwrap()).unwrap();
    let acc: f64 = summary["overall_accuracy"].parse().unwrap();
    assert_eq!(acc, (tp0 + tp1) / 16.0);
    let rows = parse_per_class_csv(&fs::read_to_string(t.path().join("ev/eval_per_class.csv")).unwrap()).unwrap();
    assert!((rows[0].iou - iou0).abs() < 1e-15 && (rows[1].iou - iou1).abs() < 1e-15);
    let mean: f64 = summary["mean_iou"].parse().unwrap();
    assert_eq!(rows.iter().map(|r| r.iou).sum::<f64>() / rows.len() as f64, mean);
    assert_eq!(rows[0].name, "Buildings");
}

#[test]
fn perfect_identity_eval_scores_one_and_exclusion_drops_the_row() {
    let t = tempfile::tempdir().unwrap();
    two_class_fixture(t.path());
    fs::write(
        t.path().join("fx/P.manifest"),
        "tag = A\nlabelled = true\nlegend = aerial2\n---\nmask0.png mask0.png\nmask1.png mask1.png\n",
    )
    .unwrap();
    let o = bin(t.path(), &["--out", "ev", "eval", "--identity", "--manifest", "fx/P.manifest"]);
    assert!(o.status.success());
    let s = parse_summary(&stdout(&o)).unwrap();
    for k in ["overall_accuracy", "mean_f1", "mean_iou", "dice"] {
        assert_eq!(s[k], "1", "{k}");
    }
    let o = bin(
        t.path(),
        &["--out", "ex", "eval", "--identity", "--manifest", "fx/P.manifest", "--exclude-class", "Trees"],
    );
    assert!(o.status.success());
    let rows = parse_per_class_csv(&fs::read_to_string(t.path().join("ex/eval_per_class.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.class).collect::<Vec<_>>(), vec![0]);
}

#[test]
fn eval_of_an_unlabelled_manifest_is_a_contract_error() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "2", "8x8");
    let o = bin(t.path(), &["eval", "--identity", "--manifest", "data/C.manifest"]);
    assert_eq!(o.status.code(), Some(7));
}

#[test]
fn spie_of_inputs_against_themselves_is_zero_and_averages_rows() {
    let t = tempfile::tempdir().unwrap();
    synth(t.path(), "2", "16x16");
    let o = bin(t.path(), &["--out", "sp", "spie", "--identity", "--manifest", "data/A.manifest"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(parse_summary(&stdout(&o)).unwrap()["spie"], "0");

    write_run(t.path(), "");
    assert!(bin(t.path(), &["--config", "run.toml", "train"]).status.success());
    let o = bin(
        t.path(),
        &["--out", "sp2", "spie", "--checkpoint", "run/checkpoint.bin", "--manifest", "data/A.manifest"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(t.path().join("sp2/spie.csv")).unwrap();
    let rows: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let agg: f64 = parse_summary(&stdout(&o)).unwrap()["spie"].parse().unwrap();
    assert_eq!(agg, (rows[0] + rows[1]) / 2.0);
}

#[test]
fn spie_of_an_empty_manifest_is_a_contract_error() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("E.manifest"), "tag = C\nlabelled = false\n---\n").unwrap();
    let o = bin(t.path(), &["spie", "--identity", "--manifest", "E.manifest"]);
    assert_eq!(o.status.code(), Some(7));
}

#[test]
fn config_flag_is_rejected_outside_train() {
    let t = tempfile::tempdir().unwrap();
    let o = bin(t.path(), &["--config", "x.toml", "synth"]);
    assert_eq!(o.status.code(), Some(3));
}
