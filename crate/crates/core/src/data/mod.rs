//! Labeled pose images: synthetic generation, directory datasets, angle
//! filtering, splitting and augmentation.

mod augment;
mod render;
mod rotation;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use augment::{augment, AugmentConfig};
pub use render::{draw_pose, render_synthetic, Canvas, Rgb, BLUE, GREEN, MAX_SYNTHETIC_ANGLE, RED};
pub use rotation::{apply, determinant, euler_to_rotation, mat_mul, transpose, Mat3, IDENTITY};

use crate::error::{Error, Result};
use crate::model::HeadPose;
use crate::tensor::Tensor;

pub const POSES_FILE: &str = "poses.csv";
pub const IMAGES_DIR: &str = "images";
pub const DEFAULT_ANGLE_LIMIT: f64 = 99.0;

/// One labeled image, `[3,H,W]` with values in `[0,1]`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub pose: HeadPose,
    pub id: String,
}

impl Sample {
    pub fn from_canvas(canvas: Canvas, pose: HeadPose, id: impl Into<String>) -> Result<Self> {
        let image = Tensor::from_vec(&[3, canvas.height, canvas.width], canvas.data)?;
        Ok(Sample {
            image,
            pose,
            id: id.into(),
        })
    }

    pub fn to_canvas(&self) -> Canvas {
        Canvas {
            width: self.image.shape()[2],
            height: self.image.shape()[1],
            data: self.image.to_vec(),
        }
    }
}

pub fn generate_synthetic_sample(pose: HeadPose, size: usize, seed: u64, noise_level: f64) -> Result<Sample> {
    let canvas = render_synthetic(pose, size, seed, noise_level)?;
    Sample::from_canvas(canvas, pose, format!("synthetic-{seed}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub filename: String,
    pub pose: HeadPose,
    /// Grouping key (for example a video id) for group-wise splits.
    pub group: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Split per entry; empty until `split_dataset` runs.
    pub splits: Vec<Split>,
    pub split_seed: Option<u64>,
    /// Rows skipped at load time because their image was missing.
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.root.join(IMAGES_DIR).join(&self.entries[index].filename)
    }

    /// Writes `poses.csv` for the current entries.
    pub fn write_poses(&self) -> Result<()> {
        let path = self.root.join(POSES_FILE);
        let grouped = self.entries.iter().any(|e| e.group.is_some());
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let mut header = vec!["filename", "yaw", "pitch", "roll"];
        if grouped {
            header.push("group");
        }
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for e in &self.entries {
            let mut row = vec![
                e.filename.clone(),
                e.pose.yaw.to_string(),
                e.pose.pitch.to_string(),
                e.pose.roll.to_string(),
            ];
            if grouped {
                row.push(e.group.clone().unwrap_or_default());
            }
            w.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

/// Reads `root/poses.csv` and keeps the rows whose image exists under
/// `root/images`. Missing images are skipped with a warning.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(POSES_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(&path, e))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let grouped = match cols.as_slice() {
        ["filename", "yaw", "pitch", "roll"] => false,
        ["filename", "yaw", "pitch", "roll", "group"] => true,
        _ => {
            return Err(Error::Parse {
                path,
                line: 1,
                message: format!(
                    "expected header filename,yaw,pitch,roll[,group], got {}",
                    cols.join(",")
                ),
            })
        }
    };
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        ..Default::default()
    };
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let angle = |i: usize, name: &str| -> Result<f64> {
            let raw = record[i].trim();
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line,
                    message: format!("invalid {name} angle {raw:?}"),
                })
        };
        let entry = ManifestEntry {
            filename: record[0].trim().to_string(),
            pose: HeadPose::new(angle(1, "yaw")?, angle(2, "pitch")?, angle(3, "roll")?),
            group: grouped.then(|| record[4].trim().to_string()),
        };
        if root.join(IMAGES_DIR).join(&entry.filename).is_file() {
            manifest.entries.push(entry);
        } else {
            log::warn!(
                "{}:{line}: image {} not found, skipping",
                path.display(),
                entry.filename
            );
            manifest.skipped += 1;
        }
    }
    Ok(manifest)
}

/// Drops entries with any angle magnitude above `limit`; the boundary is kept.
pub fn filter_angle_range(manifest: &DatasetManifest, limit: f64) -> DatasetManifest {
    let keep: Vec<bool> = manifest.entries.iter().map(|e| e.pose.max_abs() <= limit).collect();
    let pick = |i: &usize| keep[*i];
    DatasetManifest {
        root: manifest.root.clone(),
        entries: (0..manifest.len())
            .filter(pick)
            .map(|i| manifest.entries[i].clone())
            .collect(),
        splits: (0..manifest.splits.len())
            .filter(pick)
            .map(|i| manifest.splits[i])
            .collect(),
        split_seed: manifest.split_seed,
        skipped: manifest.skipped,
    }
}

/// Part sizes for `n` items: `floor(f·n)` for every part but the last, which
/// takes the remainder.
pub fn split_counts(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    let used: usize = counts.iter().sum();
    counts.push(n.saturating_sub(used));
    counts
}

/// Shuffles with `seed` and partitions into (train, test) or
/// (train, val, test). When every entry has a group, whole groups are
/// assigned.
pub fn split_dataset(manifest: &DatasetManifest, fractions: &[f64], seed: u64) -> Result<DatasetManifest> {
    let parts: &[Split] = match fractions.len() {
        2 => &[Split::Train, Split::Test],
        3 => &[Split::Train, Split::Val, Split::Test],
        n => return Err(Error::config(format!("expected 2 or 3 split fractions, got {n}"))),
    };
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {fractions:?} must be in [0,1] and sum to 1"
        )));
    }
    let grouped = !manifest.is_empty() && manifest.entries.iter().all(|e| e.group.is_some());
    // Units are either single entries or whole groups, in first-seen order.
    let mut units: Vec<Vec<usize>> = Vec::new();
    if grouped {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            let key = e.group.as_deref().unwrap_or_default();
            let u = *index.entry(key).or_insert_with(|| {
                units.push(Vec::new());
                units.len() - 1
            });
            units[u].push(i);
        }
    } else {
        units = (0..manifest.len()).map(|i| vec![i]).collect();
    }
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; manifest.len()];
    let mut cursor = 0;
    for (count, &part) in split_counts(units.len(), fractions).into_iter().zip(parts) {
        for &u in &order[cursor..cursor + count] {
            for &i in &units[u] {
                splits[i] = part;
            }
        }
        cursor += count;
    }
    Ok(DatasetManifest {
        splits,
        split_seed: Some(seed),
        ..manifest.clone()
    })
}

pub fn read_image(path: &Path, size: Option<usize>) -> Result<Canvas> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rgb = img.to_rgb8();
    if let Some(s) = size {
        if rgb.width() as usize != s || rgb.height() as usize != s {
            rgb = image::imageops::resize(&rgb, s as u32, s as u32, image::imageops::FilterType::Triangle);
        }
    }
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(Canvas {
        width: w,
        height: h,
        data,
    })
}

pub fn write_image(path: &Path, canvas: &Canvas) -> Result<()> {
    let plane = canvas.width * canvas.height;
    let img = image::RgbImage::from_fn(canvas.width as u32, canvas.height as u32, |x, y| {
        let i = y as usize * canvas.width + x as usize;
        image::Rgb([0, 1, 2].map(|c| (canvas.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Poses drawn uniformly from `[-limit, limit]` and rounded to four decimals,
/// so they survive a CSV round trip exactly.
pub fn random_poses(n: usize, seed: u64, limit: f64) -> Vec<HeadPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || (rng.random_range(-limit..=limit) * 1e4).round() / 1e4;
    (0..n).map(|_| HeadPose::new(draw(), draw(), draw())).collect()
}

/// Settings for a synthetic dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 1000,
            size: 64,
            seed: 0,
            noise_level: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn filename(index: usize) -> String {
        format!("{index:06}.png")
    }

    /// Image `i` is rendered with seed `seed + i`, so parallel and serial
    /// generation agree.
    pub fn generate(&self) -> Result<Vec<Sample>> {
        random_poses(self.count, self.seed, MAX_SYNTHETIC_ANGLE)
            .into_par_iter()
            .enumerate()
            .map(|(i, pose)| {
                let canvas = render_synthetic(pose, self.size, self.seed.wrapping_add(i as u64), self.noise_level)?;
                Sample::from_canvas(canvas, pose, Self::filename(i))
            })
            .collect()
    }

    /// Writes `root/images/*.png` and `root/poses.csv`.
    pub fn write(&self, root: &Path) -> Result<DatasetManifest> {
        let images = root.join(IMAGES_DIR);
        fs::create_dir_all(&images).map_err(|e| Error::io(format!("creating {}", images.display()), e))?;
        let samples = self.generate()?;
        samples
            .par_iter()
            .try_for_each(|s| write_image(&images.join(&s.id), &s.to_canvas()))?;
        let manifest = DatasetManifest {
            root: root.to_path_buf(),
            entries: samples
                .iter()
                .map(|s| ManifestEntry {
                    filename: s.id.clone(),
                    pose: s.pose,
                    group: None,
                })
                .collect(),
            ..Default::default()
        };
        manifest.write_poses()?;
        Ok(manifest)
    }
}

/// Samples held in memory together with their split assignment.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Every sample is assigned to `split`.
    pub fn single(samples: Vec<Sample>, split: Split) -> Self {
        let splits = vec![split; samples.len()];
        Dataset { samples, splits }
    }

    pub fn from_parts(train: Vec<Sample>, val: Vec<Sample>, test: Vec<Sample>) -> Self {
        let mut d = Dataset::default();
        for (part, split) in [(train, Split::Train), (val, Split::Val), (test, Split::Test)] {
            d.splits.extend(std::iter::repeat_n(split, part.len()));
            d.samples.extend(part);
        }
        d
    }

    /// Reads every image of a split manifest, resized to `size`.
    pub fn load(manifest: &DatasetManifest, size: usize) -> Result<Self> {
        if manifest.splits.len() != manifest.len() {
            return Err(Error::Contract("manifest has no split assignment".into()));
        }
        let samples = (0..manifest.len())
            .into_par_iter()
            .map(|i| {
                let e = &manifest.entries[i];
                let canvas = read_image(&manifest.image_path(i), Some(size))?;
                Sample::from_canvas(canvas, e.pose, e.filename.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            splits: manifest.splits.clone(),
        })
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples
            .iter()
            .zip(&self.splits)
            .filter(|(_, s)| **s == split)
            .map(|(x, _)| x)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Stacks `[3,H,W]` images into `[B,3,H,W]`, with poses as `[B,3]`.
pub fn batch(samples: &[&Sample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Contract("cannot batch zero samples".into()))?;
    let shape = first.image.shape().to_vec();
    let mut images = Vec::with_capacity(samples.len() * first.image.numel());
    let mut poses = Vec::with_capacity(samples.len() * 3);
    for s in samples {
        if s.image.shape() != shape.as_slice() {
            return Err(Error::shape(format!(
                "sample {} has shape {:?}, expected {shape:?}",
                s.id,
                s.image.shape()
            )));
        }
        images.extend_from_slice(s.image.data());
        poses.extend(s.pose.to_array().map(|v| v as f32));
    }
    let mut batch_shape = vec![samples.len()];
    batch_shape.extend(&shape);
    Ok((
        Tensor::from_vec(&batch_shape, images)?,
        Tensor::from_vec(&[samples.len(), 3], poses)?,
    ))
}
