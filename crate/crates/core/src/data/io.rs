//! PNG images and masks, and the plain-text dataset manifest.
//!
//! A manifest is a `key = value` header (`name`, `tag`, `labelled`,
//! `legend`), a line holding `---`, then one entry per line: an image path
//! and, for labelled datasets, a mask path, separated by whitespace and
//! relative to the manifest's directory. `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, RgbImage};

use super::domain::DomainTag;
use super::legend::ColorLegend;
use super::mask::MaskIndexed;
use super::sample::{Dataset, HiddenTruth, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn write_png(path: &Path, image: &DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// `[3, H, W]` tensor with values in `[0, 1]`.
pub fn image_to_tensor(image: &RgbImage) -> Tensor {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data).expect("image dimensions are positive")
}

pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let (h, w) = match t.shape() {
        &[3, h, w] => (h, w),
        other => return Err(Error::Dimension(format!("expected [3, H, W], got {other:?}"))),
    };
    let d = t.data();
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = (d[c * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(img)
}

/// Reads a mask PNG: single-channel files hold class indices directly,
/// color files are decoded through the legend.
pub fn read_mask(path: &Path, legend: &ColorLegend, tolerance: u8) -> Result<MaskIndexed> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mask = match img.color() {
        ColorType::L8 | ColorType::L16 => {
            let g = img.to_luma8();
            MaskIndexed::new(g.height() as usize, g.width() as usize, g.into_raw())?
        }
        _ => legend.color_to_index(&img.to_rgb8(), tolerance)?,
    };
    mask.validate(legend.len())
        .map_err(|e| Error::Label(format!("{}: {e}", path.display())))?;
    Ok(mask)
}

pub fn write_index_mask(path: &Path, mask: &MaskIndexed) -> Result<()> {
    let g = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.values().to_vec())
        .expect("mask buffer matches its size");
    write_png(path, &DynamicImage::ImageLuma8(g))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub tag: String,
    pub labelled: bool,
    pub legend: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut tag = None;
        let mut labelled = None;
        let mut legend = None;
        let mut entries = Vec::new();
        let mut in_body = false;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line == "---" {
                in_body = true;
                continue;
            }
            if in_body {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let entry = match parts.as_slice() {
                    [img] => ManifestEntry {
                        image: PathBuf::from(img),
                        mask: None,
                    },
                    [img, mask] => ManifestEntry {
                        image: PathBuf::from(img),
                        mask: Some(PathBuf::from(mask)),
                    },
                    _ => return Err(Error::Format(format!("manifest line {}: expected 1 or 2 paths", n + 1))),
                };
                entries.push(entry);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected key = value", n + 1)))?;
            let v = v.trim().to_string();
            match k.trim() {
                "name" => name = Some(v),
                "tag" => tag = Some(v),
                "labelled" => {
                    labelled = Some(v.parse::<bool>().map_err(|_| {
                        Error::Format(format!("manifest line {}: labelled must be true or false", n + 1))
                    })?)
                }
                "legend" => legend = Some(v),
                other => return Err(Error::Format(format!("manifest line {}: unknown key {other:?}", n + 1))),
            }
        }
        let tag = tag.ok_or_else(|| Error::Format("manifest has no tag".into()))?;
        let labelled = labelled.ok_or_else(|| Error::Format("manifest has no labelled flag".into()))?;
        for e in &entries {
            if e.mask.is_some() != labelled {
                return Err(Error::Format(format!(
                    "entry {} does not match labelled = {labelled}",
                    e.image.display()
                )));
            }
        }
        Ok(Self {
            name: name.unwrap_or_else(|| tag.clone()),
            tag,
            labelled,
            legend: legend.unwrap_or_else(|| "aerial6".into()),
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "name = {}\ntag = {}\nlabelled = {}\nlegend = {}\n---\n",
            self.name, self.tag, self.labelled, self.legend
        );
        for e in &self.entries {
            s.push_str(&e.image.to_string_lossy());
            if let Some(m) = &e.mask {
                s.push(' ');
                s.push_str(&m.to_string_lossy());
            }
            s.push('\n');
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// Loads every image (and mask) a manifest lists.
pub fn load_dataset(manifest_path: &Path, num_domains: usize, tolerance: u8) -> Result<Dataset> {
    let m = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let tag = DomainTag::from_letter(&m.tag, num_domains)?;
    let legend = ColorLegend::by_name(&m.legend)?;
    let mut samples = Vec::with_capacity(m.entries.len());
    for e in &m.entries {
        let image = image_to_tensor(&read_rgb(&base.join(&e.image))?);
        let mask = match &e.mask {
            Some(p) => Some(read_mask(&base.join(p), &legend, tolerance)?),
            None => None,
        };
        samples.push(Sample {
            id: stem(&e.image),
            image,
            mask,
            domain: tag.clone(),
        });
    }
    Dataset::new(m.name, tag, m.labelled, legend, samples)
}

fn legend_name(legend: &ColorLegend) -> Result<String> {
    legend
        .builtin_name()
        .ok_or_else(|| Error::Config("only built-in legends can be named in a manifest".into()))
}

/// Writes `<dir>/<tag>/images/*.png`, color masks under `<dir>/<tag>/masks/`
/// for labelled datasets, and the manifest `<dir>/<tag>.manifest`. Returns
/// the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let tag = dataset.tag().symbol();
    let mut entries = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let image = PathBuf::from(tag).join("images").join(format!("{}.png", s.id));
        write_png(&dir.join(&image), &DynamicImage::ImageRgb8(tensor_to_image(&s.image)?))?;
        let mask = match &s.mask {
            Some(m) => {
                let p = PathBuf::from(tag).join("masks").join(format!("{}.png", s.id));
                write_png(&dir.join(&p), &DynamicImage::ImageRgb8(dataset.legend().index_to_color(m)?))?;
                Some(p)
            }
            None => None,
        };
        entries.push(ManifestEntry { image, mask });
    }
    let manifest = Manifest {
        name: dataset.name().to_string(),
        tag: tag.to_string(),
        labelled: dataset.is_labelled(),
        legend: legend_name(dataset.legend())?,
        entries,
    };
    let path = dir.join(format!("{tag}.manifest"));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes withheld masks under `<dir>/hidden_truth/<tag>/masks/` with a
/// labelled manifest `<dir>/hidden_truth/<tag>.manifest` that points back at
/// the dataset's images. Intended for evaluation only.
pub fn write_hidden_truth(dataset: &Dataset, hidden: &HiddenTruth, dir: &Path) -> Result<PathBuf> {
    let tag = dataset.tag().symbol();
    let root = dir.join("hidden_truth");
    let mut entries = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        let mask = hidden
            .get(&s.id)
            .ok_or_else(|| Error::Contract(format!("no hidden mask for {}", s.id)))?;
        let rel = PathBuf::from(tag).join("masks").join(format!("{}.png", s.id));
        write_png(&root.join(&rel), &DynamicImage::ImageRgb8(dataset.legend().index_to_color(mask)?))?;
        entries.push(ManifestEntry {
            image: PathBuf::from("..").join(tag).join("images").join(format!("{}.png", s.id)),
            mask: Some(rel),
        });
    }
    let manifest = Manifest {
        name: format!("{}-hidden", dataset.name()),
        tag: tag.to_string(),
        labelled: true,
        legend: legend_name(dataset.legend())?,
        entries,
    };
    let path = root.join(format!("{tag}.manifest"));
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_and_rejects_unknown_keys() {
        let text = "name = demo\ntag = B\nlabelled = true\nlegend = aerial6\n---\nimg/a.png m/a.png # one\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert!(Manifest::parse("tag = A\nlabelled = true\ncolour = x\n---\n").is_err());
        assert!(Manifest::parse("tag = A\nlabelled = false\n---\na.png b.png\n").is_err());
    }

    #[test]
    fn index_png_and_color_png_decode_to_the_same_mask() {
        let dir = tempfile::tempdir().unwrap();
        let legend = ColorLegend::default();
        let mask = MaskIndexed::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        let idx = dir.path().join("idx.png");
        let col = dir.path().join("col.png");
        write_index_mask(&idx, &mask).unwrap();
        write_png(&col, &DynamicImage::ImageRgb8(legend.index_to_color(&mask).unwrap())).unwrap();
        assert_eq!(read_mask(&idx, &legend, 8).unwrap(), mask);
        assert_eq!(read_mask(&col, &legend, 8).unwrap(), mask);
    }

    #[test]
    fn tensor_image_round_trip_is_exact_on_byte_values() {
        let t = Tensor::new(vec![3, 2, 2], (0..12).map(|i| (i * 20) as f64 / 255.0).collect()).unwrap();
        assert_eq!(image_to_tensor(&tensor_to_image(&t).unwrap()), t);
    }
}
