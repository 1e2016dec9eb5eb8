use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, DynamicImage, RgbImage};
use segadapt::data::io::{
    image_to_tensor, load_dataset, read_rgb, tensor_to_image, write_dataset, write_hidden_truth, write_png, Manifest,
};
use segadapt::data::{synth_generate, ColorLegend, Dataset, DomainTag, MaskIndexed, Sample};
use segadapt::metrics::{
    compute_report, improvement, improvement_percent, spie, spie_csv, ConfusionMatrix, SegmenterParams, SpieReport,
};
use segadapt::model::{ArchConfig, ModelParams};
use segadapt::trainer::{
    continue_training, load_checkpoint, predict_samples, save_checkpoint, Checkpoint, TrainLog,
};
use segadapt::{Error, Result};

use crate::config::RunConfigFile;
use crate::{Cli, Command, EvalArgs, SegmentArgs, SpieArgs, SynthArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

pub fn run(cli: Cli) -> Result<()> {
    if cli.config.is_some() && !matches!(cli.command, Command::Train(_)) {
        return Err(Error::Config("--config applies to train only".into()));
    }
    match cli.command {
        Command::Synth(a) => synth(cli.seed.unwrap_or(0), cli.out, &a),
        Command::Train(a) => train(cli.seed, cli.config, cli.out, &a),
        Command::Segment(a) => segment(cli.out, &a),
        Command::Eval(a) => eval(cli.out, &a),
        Command::Spie(a) => spie_command(cli.out, &a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.to_string_lossy().into_owned(), |s| s.to_string_lossy().into_owned())
}

fn synth(seed: u64, out: Option<PathBuf>, a: &SynthArgs) -> Result<()> {
    let dir = out.unwrap_or_else(|| PathBuf::from("data"));
    let corpus = synth_generate(seed, a.n, a.size, a.classes)?;
    for d in corpus.datasets() {
        println!("{}", write_dataset(d, &dir)?.display());
    }
    println!("{}", write_hidden_truth(&corpus.c, &corpus.hidden_c, &dir)?.display());
    Ok(())
}

/// Default widths with input size and class count read off the data.
fn infer_arch(datasets: &[Dataset]) -> Result<ArchConfig> {
    let first = datasets
        .iter()
        .find_map(|d| d.samples().first())
        .ok_or_else(|| Error::Config("every dataset is empty".into()))?;
    Ok(ArchConfig {
        num_classes: datasets[0].legend().len(),
        input_size: (first.height(), first.width()),
        ..ArchConfig::default()
    })
}

fn train(seed: Option<u64>, config: Option<PathBuf>, out: Option<PathBuf>, a: &TrainArgs) -> Result<()> {
    let path = config.ok_or_else(|| Error::Config("train needs --config <run file>".into()))?;
    let mut rc = RunConfigFile::read(&path)?;
    if let Some(s) = seed {
        rc.train.seed = s;
    }
    let dir = out.or(rc.out_dir.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    let num_domains = rc.model.as_ref().map_or(ArchConfig::default().num_domains, |m| m.num_domains);
    let datasets = rc
        .manifests
        .iter()
        .map(|m| load_dataset(m, num_domains, rc.mask_tolerance))
        .collect::<Result<Vec<_>>>()?;

    let mut cp = match &a.resume {
        Some(p) => load_checkpoint(p)?,
        None => {
            let arch = match rc.model.clone() {
                Some(m) => m,
                None => infer_arch(&datasets)?,
            };
            Checkpoint::fresh(&arch, &rc.train)?
        }
    };
    let total = a.epochs.unwrap_or(rc.train.epochs);
    if total <= cp.epoch {
        return Err(Error::Config(format!(
            "checkpoint is already at epoch {}, asked for {total} epochs",
            cp.epoch
        )));
    }

    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let mut epochs = Vec::new();
    while cp.epoch < total {
        let next = cp.epoch + 1;
        let (updated, log) = continue_training(&datasets, cp, next)?;
        cp = updated;
        let e = log.epochs.last().expect("one epoch was run");
        eprintln!(
            "epoch {next}/{total}  l0={:.5} l1={:.5} l2={:.5} total={:.5}  heldout_iou={:.4} domain_acc={:.4}",
            e.mean_l0, e.mean_l1, e.mean_l2, e.mean_total, e.heldout.mean_iou, e.domain_accuracy
        );
        epochs.extend(log.epochs);
        save_checkpoint(&ckpt_path, &cp)?;
    }

    let log = TrainLog {
        steps: cp.history.clone(),
        epochs,
    };
    let last = log.epochs.last().expect("at least one epoch");
    let final_loss = log.steps.last().expect("at least one step").loss;
    write_text(&dir.join("steps.csv"), &log.steps_csv())?;
    write_text(&dir.join("epochs.csv"), &log.epochs_csv())?;
    write_text(&dir.join("train_config.toml"), &cp.config.to_toml()?)?;
    write_text(&dir.join("heldout_summary.txt"), &last.heldout.summary_text())?;
    write_text(&dir.join("heldout_per_class.csv"), &last.heldout.per_class_csv(Some(datasets[0].legend())))?;

    println!(
        "final loss: l0 = {} l1 = {} l2 = {} total = {} (lambda1 = {}, lambda2 = {})",
        final_loss.l0, final_loss.l1, final_loss.l2, final_loss.total, final_loss.lambda1, final_loss.lambda2
    );
    println!("held-out metrics after epoch {}:", last.epoch + 1);
    print!("{}", last.heldout.summary_text());
    println!("domain_accuracy = {}", last.domain_accuracy);
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

/// Center-crops images larger than the network input; smaller ones are an error.
fn fit_to_input(img: RgbImage, size: (usize, usize), path: &Path) -> Result<RgbImage> {
    let (h, w) = (img.height() as usize, img.width() as usize);
    if (h, w) == size {
        return Ok(img);
    }
    if h < size.0 || w < size.1 {
        return Err(Error::Dimension(format!(
            "{} is {h}x{w}, smaller than the network input {}x{}",
            path.display(),
            size.0,
            size.1
        )));
    }
    eprintln!(
        "warning: {} is {h}x{w}; center-cropping to {}x{}",
        path.display(),
        size.0,
        size.1
    );
    let (y, x) = ((h - size.0) / 2, (w - size.1) / 2);
    Ok(imageops::crop_imm(&img, x as u32, y as u32, size.1 as u32, size.0 as u32).to_image())
}

fn as_sample(id: String, img: &RgbImage) -> Sample {
    Sample {
        id,
        image: image_to_tensor(img),
        mask: None,
        domain: DomainTag::a(),
    }
}

fn predict_colors(params: &ModelParams, legend: &ColorLegend, images: &[(String, RgbImage)]) -> Result<Vec<RgbImage>> {
    let samples: Vec<Sample> = images.iter().map(|(id, img)| as_sample(id.clone(), img)).collect();
    let (masks, _) = predict_samples(params, &samples)?;
    masks.iter().map(|m| legend.index_to_color(m)).collect()
}

fn segment_one(params: &ModelParams, legend: &ColorLegend, path: &Path, dir: &Path) -> Result<PathBuf> {
    let img = fit_to_input(read_rgb(path)?, params.arch.input_size, path)?;
    let id = stem(path);
    let color = predict_colors(params, legend, &[(id.clone(), img)])?.remove(0);
    let dest = dir.join(format!("{id}_mask.png"));
    write_png(&dest, &DynamicImage::ImageRgb8(color))?;
    Ok(dest)
}

fn segment(out: Option<PathBuf>, a: &SegmentArgs) -> Result<()> {
    if a.images.is_empty() {
        eprintln!("warning: no input images given; nothing written");
        return Ok(());
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("out"));
    let cp = load_checkpoint(&a.checkpoint)?;
    let legend = ColorLegend::aerial(cp.params.arch.num_classes)?;
    let mut first_error = None;
    for path in &a.images {
        match segment_one(&cp.params, &legend, path, &dir) {
            Ok(dest) => println!("{}", dest.display()),
            Err(e) => {
                eprintln!("warning: skipped {}: {e}", path.display());
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn parse_class(spec: &str, legend: &ColorLegend) -> Result<usize> {
    let class = match spec.parse::<usize>() {
        Ok(i) => i,
        Err(_) => legend
            .class_of(spec)
            .ok_or_else(|| Error::Config(format!("no class named {spec:?} in the legend")))?,
    };
    if class >= legend.len() {
        return Err(Error::Config(format!("class {class} outside 0..{}", legend.len())));
    }
    Ok(class)
}

fn eval(out: Option<PathBuf>, a: &EvalArgs) -> Result<()> {
    let cp = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let num_domains = cp.as_ref().map_or(ArchConfig::default().num_domains, |c| c.params.arch.num_domains);
    let dataset = load_dataset(&a.manifest, num_domains, a.mask_tolerance)?;
    if !dataset.is_labelled() {
        return Err(Error::Contract(format!(
            "{} is unlabelled; eval needs masks",
            a.manifest.display()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Contract(format!("{} lists no samples", a.manifest.display())));
    }
    let legend = dataset.legend();
    let exclude = a.exclude_class.as_deref().map(|s| parse_class(s, legend)).transpose()?;

    let predictions: Vec<MaskIndexed> = match &cp {
        Some(cp) => {
            if cp.params.arch.num_classes != legend.len() {
                return Err(Error::Config(format!(
                    "checkpoint predicts {} classes, manifest legend has {}",
                    cp.params.arch.num_classes,
                    legend.len()
                )));
            }
            predict_samples(&cp.params, dataset.samples())?.0
        }
        None => dataset
            .samples()
            .iter()
            .map(|s| legend.color_to_index(&tensor_to_image(&s.image)?, a.mask_tolerance))
            .collect::<Result<_>>()?,
    };
    let mut cm = ConfusionMatrix::new(legend.len())?;
    for (p, s) in predictions.iter().zip(dataset.samples()) {
        cm.accumulate(p, s.mask.as_ref().expect("labelled dataset"))?;
    }
    let report = compute_report(&cm, exclude)?;

    let dir = out.unwrap_or_else(|| PathBuf::from("out"));
    write_text(&dir.join("eval_summary.txt"), &report.summary_text())?;
    write_text(&dir.join("eval_per_class.csv"), &report.per_class_csv(Some(legend)))?;
    print!("{}", report.summary_text());
    Ok(())
}

/// Improvement of `ours` over `base` as printed: whole percent.
pub fn format_improvement(base: f64, ours: f64) -> Result<String> {
    Ok(format!("{}%", improvement_percent(base, ours)?))
}

fn model_spie(
    checkpoint: &Path,
    images: &[(String, RgbImage)],
    paths: &[PathBuf],
    params: &SegmenterParams,
) -> Result<SpieReport> {
    let cp = load_checkpoint(checkpoint)?;
    let legend = ColorLegend::aerial(cp.params.arch.num_classes)?;
    let fitted = images
        .iter()
        .zip(paths)
        .map(|((id, img), p)| Ok((id.clone(), fit_to_input(img.clone(), cp.params.arch.input_size, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let masks = predict_colors(&cp.params, &legend, &fitted)?;
    let inputs: Vec<RgbImage> = fitted.into_iter().map(|(_, img)| img).collect();
    spie(&masks, &inputs, params)
}

fn spie_command(out: Option<PathBuf>, a: &SpieArgs) -> Result<()> {
    if !(a.k > 0.0 && a.k.is_finite()) || a.min_size == 0 {
        return Err(Error::Config(format!(
            "segmenter needs k > 0 and min_size >= 1, got k = {} min_size = {}",
            a.k, a.min_size
        )));
    }
    let params = SegmenterParams {
        k: a.k,
        min_size: a.min_size,
    };
    let manifest = Manifest::read(&a.manifest)?;
    if manifest.entries.is_empty() {
        return Err(Error::Contract(format!("{} lists no images", a.manifest.display())));
    }
    let base = a.manifest.parent().unwrap_or(Path::new(""));
    let paths: Vec<PathBuf> = manifest.entries.iter().map(|e| base.join(&e.image)).collect();
    let images = paths
        .iter()
        .map(|p| Ok((stem(p), read_rgb(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();

    let report = match &a.checkpoint {
        Some(c) => model_spie(c, &images, &paths, &params)?,
        None => {
            let inputs: Vec<RgbImage> = images.iter().map(|(_, img)| img.clone()).collect();
            spie(&inputs, &inputs, &params)?
        }
    };
    let mut summary = report.summary_text();
    if let Some(b) = &a.baseline {
        let baseline = model_spie(b, &images, &paths, &params)?;
        summary.push_str(&format!(
            "baseline_spie = {}\nimprovement = {}\nimprovement_exact = {}\n",
            baseline.spie,
            format_improvement(baseline.spie, report.spie)?,
            improvement(baseline.spie, report.spie)?
        ));
    }

    let dir = out.unwrap_or_else(|| PathBuf::from("out"));
    write_text(&dir.join("spie.csv"), &spie_csv(&report, &ids)?)?;
    write_text(&dir.join("spie_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_is_printed_as_whole_percent() {
        assert_eq!(format_improvement(0.069, 0.047).unwrap(), "32%");
        assert_eq!(format_improvement(0.052, 0.041).unwrap(), "21%");
    }

    #[test]
    fn larger_images_are_center_cropped() {
        let img = RgbImage::from_fn(6, 4, |x, y| image::Rgb([x as u8, y as u8, 0]));
        let c = fit_to_input(img.clone(), (2, 2), Path::new("x.png")).unwrap();
        assert_eq!(c.get_pixel(0, 0).0, [2, 1, 0]);
        assert!(fit_to_input(img, (8, 8), Path::new("x.png")).is_err());
    }

    #[test]
    fn classes_resolve_by_index_or_name() {
        let legend = ColorLegend::aerial_six();
        assert_eq!(parse_class("Clutter", &legend).unwrap(), 5);
        assert_eq!(parse_class("2", &legend).unwrap(), 2);
        assert!(parse_class("9", &legend).is_err());
        assert!(parse_class("Water", &legend).is_err());
    }
}
