//! Dataset ingestion: image-folder trees and the synthetic grating
//! generator used for desk-scale experiments.
//!
//! Folder layout: `root/<class_name>/*.ppm` (PGM/PNG also accepted),
//! 8-bit, all images square and equal-sized; classes map to labels in
//! lexicographic order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::freq::{apply_filter, FilterSpec};
use crate::image_io::{read_image, write_image, RgbImage};
use crate::rng::Pcg32;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// In-memory labeled dataset of square 8-bit RGB images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub side: usize,
    /// 3*side*side RGB bytes per image.
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<usize>,
}

/// Per-channel normalization statistics computed from a training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub fn identity() -> Normalization {
        Normalization {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Where a dataset comes from: an image-folder tree on disk, or the
/// synthetic generator.
#[derive(Debug, Clone)]
pub enum DatasetSource {
    /// `root/<class_name>/*.ppm` with lexicographic class ordering;
    /// `class_subset` samples that many classes with the given seed.
    Folder {
        root: PathBuf,
        class_subset: Option<(usize, u64)>,
    },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    /// Materializes the dataset; `seed` drives the synthetic generator.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Folder { root, class_subset } => {
                load_image_folder(root, *class_subset)
            }
            DatasetSource::Synthetic(spec) => synthetic_dataset(spec, seed),
        }
    }
}

/// Synthetic generator description: class k is a sinusoidal grating with
/// orientation pi*k/C and spatial frequency 2 + k cycles per image,
/// amplitude 0.5 around mean 0.5, plus Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub side: usize,
    pub per_class: usize,
    pub sigma: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.side == 0 || self.per_class == 0 {
            return Err(Error::Validation(
                "synthetic spec needs classes, side and per_class >= 1".into(),
            ));
        }
        if self.sigma < 0.0 {
            return Err(Error::Validation("sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Parses `classes=10,side=32,per_class=200,sigma=0.05`.
    pub fn parse(text: &str) -> Result<SyntheticSpec> {
        let mut spec = SyntheticSpec {
            num_classes: 10,
            side: 32,
            per_class: 200,
            sigma: 0.05,
        };
        for pair in text.split(',') {
            let pair = pair.trim();
            if pair.is_empty() {
                continue;
            }
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("expected key=value, got '{pair}'")))?;
            let value = value.trim();
            match key.trim() {
                "classes" => spec.num_classes = value.parse().map_err(|_| bad(pair))?,
                "side" => spec.side = value.parse().map_err(|_| bad(pair))?,
                "per_class" => spec.per_class = value.parse().map_err(|_| bad(pair))?,
                "sigma" => spec.sigma = value.parse().map_err(|_| bad(pair))?,
                other => {
                    return Err(Error::Validation(format!(
                        "unknown synthetic key '{other}' (classes, side, per_class, sigma)"
                    )))
                }
            }
        }
        spec.validate()?;
        return Ok(spec);

        fn bad(pair: &str) -> Error {
            Error::Validation(format!("bad synthetic value in '{pair}'"))
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Per-channel mean and standard deviation over the whole set, with
    /// pixels mapped to [0, 1].
    pub fn normalization(&self) -> Normalization {
        let mut mean = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut count = 0usize;
        for image in &self.images {
            for px in image.chunks_exact(3) {
                for c in 0..3 {
                    let v = px[c] as f64 / 255.0;
                    mean[c] += v;
                    sq[c] += v * v;
                }
            }
            count += image.len() / 3;
        }
        let n = count.max(1) as f64;
        let mut std = [0.0f64; 3];
        for c in 0..3 {
            mean[c] /= n;
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            // Floor keeps constant channels from dividing by zero.
            std[c] = var.sqrt().max(1e-6);
        }
        Normalization { mean, std }
    }

    /// Assembles a batch tensor: pixels to [0, 1], optional spectral
    /// filtering with a clamp back to [0, 1], then normalization.
    pub fn batch<S: Scalar>(
        &self,
        indices: &[usize],
        filter: Option<&FilterSpec>,
        norm: &Normalization,
    ) -> Result<(Tensor4<S>, Vec<usize>)> {
        let side = self.side;
        let shape = Shape::new(indices.len(), 3, side, side);
        let mut raw = Tensor4::<S>::zeros(shape);
        let mut labels = Vec::with_capacity(indices.len());
        for (bi, &idx) in indices.iter().enumerate() {
            let image = &self.images[idx];
            labels.push(self.labels[idx]);
            for k in 0..side {
                for l in 0..side {
                    let base = (k * side + l) * 3;
                    for c in 0..3 {
                        *raw.at_mut(bi, c, k, l) =
                            S::from_f64(image[base + c] as f64 / 255.0);
                    }
                }
            }
        }
        let mut x = match filter {
            Some(f) => {
                let filtered = apply_filter(&raw, f)?;
                filtered.map(|v| v.maximum(S::ZERO).minimum(S::ONE))
            }
            None => raw,
        };
        for bi in 0..indices.len() {
            for c in 0..3 {
                let mean = S::from_f64(norm.mean[c]);
                let inv_std = S::from_f64(1.0 / norm.std[c]);
                for k in 0..side {
                    for l in 0..side {
                        let v = x.at(bi, c, k, l);
                        *x.at_mut(bi, c, k, l) = (v - mean) * inv_std;
                    }
                }
            }
        }
        Ok((x, labels))
    }
}

/// Deterministic synthetic dataset; identical bytes for identical
/// (spec, seed).
pub fn synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = Pcg32::new(seed, 0x5ce9_e31a_7f1c_0a11);
    let mut normal_cache = None;
    let side = spec.side;
    let mut images = Vec::with_capacity(spec.num_classes * spec.per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for k in 0..spec.num_classes {
        let theta = std::f64::consts::PI * k as f64 / spec.num_classes as f64;
        let freq = (2 + k) as f64;
        let (cos_t, sin_t) = (theta.cos(), theta.sin());
        let mut base = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let u = x as f64 / side as f64;
                let v = y as f64 / side as f64;
                let phase = std::f64::consts::TAU * freq * (u * cos_t + v * sin_t);
                base.push(0.5 + 0.5 * phase.sin());
            }
        }
        for _ in 0..spec.per_class {
            let mut pixels = Vec::with_capacity(side * side * 3);
            for &b in &base {
                let noisy = if spec.sigma > 0.0 {
                    b + spec.sigma * rng.normal(&mut normal_cache)
                } else {
                    b
                };
                let byte = (noisy.clamp(0.0, 1.0) * 255.0).round() as u8;
                pixels.extend_from_slice(&[byte, byte, byte]);
            }
            images.push(pixels);
            labels.push(k);
        }
    }
    Ok(Dataset {
        class_names: (0..spec.num_classes).map(|k| format!("grating_{k:02}")).collect(),
        side,
        images,
        labels,
    })
}

fn sorted_entries(dir: &Path, dirs_only: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        let path = entry.path();
        if dirs_only == path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads `root/<class_name>/*.{ppm,pgm,png}` with lexicographic
/// class-to-label mapping. `class_subset` randomly samples that many
/// classes (seeded) before loading.
pub fn load_image_folder(root: &Path, class_subset: Option<(usize, u64)>) -> Result<Dataset> {
    let mut class_dirs = sorted_entries(root, true)?;
    if class_dirs.is_empty() {
        return Err(Error::Validation(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    if let Some((k, seed)) = class_subset {
        if k == 0 || k > class_dirs.len() {
            return Err(Error::Validation(format!(
                "class subset {k} out of range [1, {}]",
                class_dirs.len()
            )));
        }
        let mut rng = Pcg32::new(seed, 0x9d2c_5680_1f83_d9ab);
        let picked = rng.sample_indices(class_dirs.len(), k);
        class_dirs = picked.into_iter().map(|i| class_dirs[i].clone()).collect();
    }

    let mut class_names = Vec::new();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut side: Option<usize> = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        class_names.push(name);
        for file in sorted_entries(dir, false)? {
            let ext = file
                .extension()
                .and_then(|e| e.to_str())
                .unwrap_or_default()
                .to_ascii_lowercase();
            if !matches!(ext.as_str(), "ppm" | "pgm" | "png") {
                continue;
            }
            let image = read_image(&file)?;
            if image.width != image.height {
                return Err(Error::Validation(format!(
                    "{}: images must be square, got {}x{}",
                    file.display(),
                    image.width,
                    image.height
                )));
            }
            match side {
                None => side = Some(image.width),
                Some(s) if s != image.width => {
                    return Err(Error::Validation(format!(
                        "{}: image side {} differs from dataset side {s}",
                        file.display(),
                        image.width
                    )))
                }
                _ => {}
            }
            images.push(image.pixels);
            labels.push(label);
        }
    }
    if images.is_empty() {
        return Err(Error::Validation(format!(
            "no images found under {}",
            root.display()
        )));
    }
    Ok(Dataset {
        class_names,
        side: side.unwrap(),
        images,
        labels,
    })
}

/// Materializes a dataset as `root/<class_name>/img_<i>.ppm`.
pub fn write_image_folder(dataset: &Dataset, root: &Path) -> Result<()> {
    let mut per_class_counter = vec![0usize; dataset.num_classes()];
    for (image, &label) in dataset.images.iter().zip(&dataset.labels) {
        let dir = root.join(&dataset.class_names[label]);
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let index = per_class_counter[label];
        per_class_counter[label] += 1;
        let path = dir.join(format!("img_{index:05}.ppm"));
        let rgb = RgbImage::new(dataset.side, dataset.side, image.clone())?;
        write_image(&path, &rgb)?;
    }
    Ok(())
}
