//! In-memory image classification datasets and batch assembly.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{Real, Shape, Tensor4};

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

/// Raw pixels in `[0, 1]`, `(n, 3, h, w)` flat, plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub hw: (usize, usize),
}

/// Per-channel normalisation applied when batches are built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalize {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalize {
    fn default() -> Self {
        Normalize {
            mean: CIFAR_MEAN,
            std: CIFAR_STD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        3 * self.hw.0 * self.hw.1
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let l = self.image_len();
        &self.pixels[i * l..(i + 1) * l]
    }

    /// Normalised batch of the given sample indices; `flip[k]` mirrors sample `k` left-right.
    pub fn batch<T: Real>(
        &self,
        idx: &[usize],
        norm: &Normalize,
        flip: Option<&[bool]>,
    ) -> Result<Batch<T>> {
        if idx.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (h, w) = self.hw;
        let mut images = Tensor4::zeros(Shape::new(idx.len(), 3, h, w));
        let plane = h * w;
        for (k, &i) in idx.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::invalid(format!(
                    "sample {i} out of range for {} samples",
                    self.len()
                )));
            }
            let src = self.image(i);
            let mirror = flip.is_some_and(|f| f[k]);
            let dst = &mut images.data_mut()[k * 3 * plane..(k + 1) * 3 * plane];
            for c in 0..3 {
                let (m, s) = (norm.mean[c], norm.std[c]);
                for y in 0..h {
                    for x in 0..w {
                        let sx = if mirror { w - 1 - x } else { x };
                        let v = src[c * plane + y * w + sx] as f64;
                        dst[c * plane + y * w + x] = T::lit((v - m) / s);
                    }
                }
            }
        }
        Ok(Batch {
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Shuffled index batches for one epoch; the last one may be short.
    pub fn epoch_order(&self, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut stream(seed, EPOCH_STREAM ^ epoch));
        idx.chunks(batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// First `n` samples and the rest.
    pub fn split(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let cut = n * self.image_len();
        let part = |px: &[f32], lb: &[usize]| Dataset {
            pixels: px.to_vec(),
            labels: lb.to_vec(),
            num_classes: self.num_classes,
            hw: self.hw,
        };
        (
            part(&self.pixels[..cut], &self.labels[..n]),
            part(&self.pixels[cut..], &self.labels[n..]),
        )
    }
}

const EPOCH_STREAM: u64 = 0x5348_5546 << 32;
const SYNTH_STREAM: u64 = 0x5359_4e54 << 32;
pub const SYNTH_HW: usize = 32;
const STRIPE_PERIOD: f64 = 8.0;

/// Class-conditional oriented stripes: class `k` of `K` has orientation
/// `k·π/K`, so class 0 is vertical stripes and, for even `K`, class `K/2`
/// is horizontal. Phase, contrast, tint and noise vary per image.
/// Labels cycle `0, 1, ..., K-1`.
pub fn synth_dataset(num_classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    if num_classes == 0 || n == 0 {
        return Err(Error::invalid(
            "synth needs at least one class and one sample",
        ));
    }
    let hw = SYNTH_HW;
    let plane = hw * hw;
    let mut rng = stream(seed, SYNTH_STREAM);
    let noise = Normal::new(0.0, 0.08).expect("valid normal");
    let mut pixels = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        let theta = k as f64 * PI / num_classes as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        let phase = rng.random_range(-PI / 4.0..PI / 4.0);
        let amp = rng.random_range(0.25..0.4);
        let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.8..1.2));
        for t in tint {
            for y in 0..hw {
                for x in 0..hw {
                    let arg = 2.0 * PI * (x as f64 * ct + y as f64 * st) / STRIPE_PERIOD + phase;
                    let v = 0.5 + t * amp * arg.cos() + noise.sample(&mut rng);
                    pixels.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        labels.push(k);
    }
    Ok(Dataset {
        pixels,
        labels,
        num_classes,
        hw: (hw, hw),
    })
}

/// Parses CIFAR-10 binary records (`label`, then 1024 R, G, B bytes each).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    let rem = bytes.len() % CIFAR_RECORD;
    if rem != 0 || bytes.is_empty() {
        return Err(Error::Parse {
            offset: (bytes.len() - rem) as u64,
            msg: format!(
                "length {} is not a positive multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Parse {
                offset: (r * CIFAR_RECORD) as u64,
                msg: format!("label {label} out of range"),
            });
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(Dataset {
        pixels,
        labels,
        num_classes: CIFAR_CLASSES,
        hw: (32, 32),
    })
}

fn cifar_files(path: &Path, train: bool) -> Vec<PathBuf> {
    if path.is_file() {
        return vec![path.to_path_buf()];
    }
    if train {
        (1..=5)
            .map(|i| path.join(format!("data_batch_{i}.bin")))
            .collect()
    } else {
        vec![path.join("test_batch.bin")]
    }
}

/// Loads a single CIFAR-10 binary file, or the train/test split of a
/// directory holding `data_batch_{1..5}.bin` and `test_batch.bin`.
pub fn load_cifar10(path: impl AsRef<Path>, train: bool) -> Result<Dataset> {
    let mut out: Option<Dataset> = None;
    for f in cifar_files(path.as_ref(), train) {
        let d = parse_cifar10(&fs::read(&f).map_err(|e| Error::io(&f, e))?)?;
        match &mut out {
            None => out = Some(d),
            Some(o) => {
                o.pixels.extend(d.pixels);
                o.labels.extend(d.labels);
            }
        }
    }
    out.ok_or_else(|| Error::invalid("no CIFAR-10 files"))
}

/// Training accuracy of classifying each sample by its nearest class-mean image.
pub fn nearest_centroid_accuracy(d: &Dataset) -> f64 {
    let l = d.image_len();
    let mut cent = vec![vec![0.0f64; l]; d.num_classes];
    let mut counts = vec![0usize; d.num_classes];
    for i in 0..d.len() {
        counts[d.labels[i]] += 1;
        for (c, &p) in cent[d.labels[i]].iter_mut().zip(d.image(i)) {
            *c += p as f64;
        }
    }
    for (c, &n) in cent.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let hits = (0..d.len())
        .filter(|&i| {
            let dist = |c: &Vec<f64>| {
                c.iter()
                    .zip(d.image(i))
                    .map(|(a, &b)| (a - b as f64).powi(2))
                    .sum::<f64>()
            };
            let best = (0..d.num_classes)
                .min_by(|&a, &b| dist(&cent[a]).total_cmp(&dist(&cent[b])))
                .unwrap();
            best == d.labels[i]
        })
        .count();
    hits as f64 / d.len() as f64
}
