//! Histogram-intersection similarity of luminance, contrast and saturation
//! distributions over image patches.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::image::{crop_patches, global_features, LinearImage};
use crate::par;

pub const BINS: usize = 32;
pub const PATCHES_PER_IMAGE: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyleHistogram {
    pub bins: Vec<u64>,
    pub total: u64,
}

impl Default for StyleHistogram {
    fn default() -> Self {
        Self::new(BINS)
    }
}

impl StyleHistogram {
    pub fn new(bins: usize) -> Self {
        Self {
            bins: vec![0; bins],
            total: 0,
        }
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let n = self.bins.len();
        if value.is_nan() || value <= 0.0 {
            return 0;
        }
        ((value * n as f64) as usize).min(n - 1)
    }

    pub fn add(&mut self, value: f64) {
        let b = self.bin_of(value);
        self.bins[b] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &StyleHistogram) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn normalized(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.bins.len()];
        }
        self.bins.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

/// Sum of elementwise minima of two normalized histograms, in percent.
pub fn intersection(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    let s: f64 = a.iter().zip(b).map(|(x, y)| x.min(*y)).sum();
    Ok((100.0 * s).clamp(0.0, 100.0))
}

pub fn histogram_intersection(h1: &StyleHistogram, h2: &StyleHistogram) -> Result<f64> {
    intersection(&h1.normalized(), &h2.normalized())
}

/// Luminance, contrast and saturation histograms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureHistograms {
    pub luminance: StyleHistogram,
    pub contrast: StyleHistogram,
    pub saturation: StyleHistogram,
}

impl FeatureHistograms {
    fn merge(&mut self, other: &FeatureHistograms) {
        self.luminance.merge(&other.luminance);
        self.contrast.merge(&other.contrast);
        self.saturation.merge(&other.saturation);
    }
}

fn crop_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Histograms over `PATCHES_PER_IMAGE` crops per image. Crop positions for
/// image `i` depend only on `seed` and `i`.
pub fn image_histograms(images: &[LinearImage], seed: u64) -> Result<FeatureHistograms> {
    if images.is_empty() {
        return Err(Error::Dataset("no images to measure".into()));
    }
    let parts: Vec<Result<FeatureHistograms>> = par::map_range(images.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(crop_seed(seed, i));
        let mut h = FeatureHistograms::default();
        for patch in crop_patches(&images[i], PATCHES_PER_IMAGE, &mut rng)? {
            let f = global_features(&patch);
            h.luminance.add(f.luminance);
            h.contrast.add(f.contrast);
            h.saturation.add(f.saturation);
        }
        Ok(h)
    });
    let mut total = FeatureHistograms::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

pub fn dataset_histograms(dir: impl AsRef<Path>, seed: u64) -> Result<FeatureHistograms> {
    let images: Vec<LinearImage> = load_dataset(dir)?.into_iter().map(|(_, i)| i).collect();
    image_histograms(&images, seed)
}

/// Intersection percentages for the three quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub luminance: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl EvalReport {
    pub fn compare(a: &FeatureHistograms, b: &FeatureHistograms) -> Result<Self> {
        Ok(Self {
            luminance: histogram_intersection(&a.luminance, &b.luminance)?,
            contrast: histogram_intersection(&a.contrast, &b.contrast)?,
            saturation: histogram_intersection(&a.saturation, &b.saturation)?,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>14}", "Quantity", "Intersection")?;
        writeln!(f, "{:<12} {:>13.2}%", "Luminance", self.luminance)?;
        writeln!(f, "{:<12} {:>13.2}%", "Contrast", self.contrast)?;
        write!(f, "{:<12} {:>13.2}%", "Saturation", self.saturation)
    }
}

pub fn evaluate_images(outputs: &[LinearImage], targets: &[LinearImage], seed: u64) -> Result<EvalReport> {
    EvalReport::compare(&image_histograms(outputs, seed)?, &image_histograms(targets, seed)?)
}

pub fn evaluate_dirs(outputs: impl AsRef<Path>, targets: impl AsRef<Path>, seed: u64) -> Result<EvalReport> {
    EvalReport::compare(&dataset_histograms(outputs, seed)?, &dataset_histograms(targets, seed)?)
}
