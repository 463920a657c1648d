//! Linear-RGB rasters, resampling, crops and global statistics.

pub mod color;
mod io;

use rand::Rng;

use crate::error::{Error, Result};
pub use color::{luminance, LUM_WEIGHTS};
pub use io::{load_image, save_image, ImageFormat};

/// A row-major linear-RGB image. Values are nominally in [0,1] but may leave
/// that range between edit steps; saving clamps.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimensions { width, height });
        }
        if data.len() != width * height * 3 {
            return Err(Error::shape(width * height * 3, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Image with every pixel set to `rgb`.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let data = std::iter::repeat(rgb)
            .take(width * height)
            .flatten()
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized image");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn same_size(&self, other: &LinearImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mean_value(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copy with every channel clamped to [0,1].
    pub fn clamped(&self) -> LinearImage {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::from_raw_unchecked(self.width, self.height, data)
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LinearImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Invalid(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Ok(Self::from_raw_unchecked(w, h, data))
    }

    /// Largest absolute per-channel difference.
    pub fn max_abs_diff(&self, other: &LinearImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn mean_abs_diff(&self, other: &LinearImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }
}

/// Area-average weights mapping `src` samples onto `dst` samples.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut w: Vec<(usize, f64)> = (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect();
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            for (_, v) in &mut w {
                *v /= total;
            }
            w
        })
        .collect()
}

/// Box (area-averaging) resample to `side`×`side`. Aspect ratio is not preserved.
pub fn downsample(image: &LinearImage, side: usize) -> Result<LinearImage> {
    if side == 0 {
        return Err(Error::Invalid("downsample side must be at least 1".into()));
    }
    let wx = area_weights(image.width, side);
    let wy = area_weights(image.height, side);
    let mut out = Vec::with_capacity(side * side * 3);
    for ys in &wy {
        for xs in &wx {
            let mut acc = [0.0; 3];
            for &(y, fy) in ys {
                let row = y * image.width;
                for &(x, fx) in xs {
                    let i = (row + x) * 3;
                    let f = fy * fx;
                    acc[0] += f * image.data[i];
                    acc[1] += f * image.data[i + 1];
                    acc[2] += f * image.data[i + 2];
                }
            }
            out.extend_from_slice(&acc);
        }
    }
    Ok(LinearImage::from_raw_unchecked(side, side, out))
}

/// Mean luminance, contrast (twice the luminance variance) and mean HSL saturation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureTriple {
    pub luminance: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl FeatureTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.luminance, self.contrast, self.saturation]
    }
}

pub fn global_features(image: &LinearImage) -> FeatureTriple {
    let n = image.pixel_count() as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut sat = 0.0;
    for p in image.pixels() {
        let l = luminance(p);
        sum += l;
        sum_sq += l * l;
        sat += color::hsl_saturation(p);
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    FeatureTriple {
        luminance: mean,
        contrast: 2.0 * var,
        saturation: sat / n,
    }
}

/// Per-pixel gradients of the three global features, each laid out like the image data.
pub fn global_feature_gradients(image: &LinearImage) -> [Vec<f64>; 3] {
    let n = image.pixel_count() as f64;
    let mean = image.pixels().map(luminance).sum::<f64>() / n;
    let len = image.data.len();
    let mut g_lum = Vec::with_capacity(len);
    let mut g_con = Vec::with_capacity(len);
    let mut g_sat = Vec::with_capacity(len);
    for p in image.pixels() {
        let dl = 4.0 * (luminance(p) - mean) / n;
        let ds = color::hsl_saturation_grad(p);
        for c in 0..3 {
            g_lum.push(LUM_WEIGHTS[c] / n);
            g_con.push(dl * LUM_WEIGHTS[c]);
            g_sat.push(ds[c] / n);
        }
    }
    [g_lum, g_con, g_sat]
}

/// `count` square crops with side equal to half the shorter image side, placed
/// uniformly at random.
pub fn crop_patches<R: Rng + ?Sized>(
    image: &LinearImage,
    count: usize,
    rng: &mut R,
) -> Result<Vec<LinearImage>> {
    if count == 0 {
        return Err(Error::Invalid("patch count must be at least 1".into()));
    }
    let side = image.width.min(image.height) / 2;
    if side == 0 {
        return Err(Error::Dimensions {
            width: image.width,
            height: image.height,
        });
    }
    (0..count)
        .map(|_| {
            let x = rng.gen_range(0..=image.width - side);
            let y = rng.gen_range(0..=image.height - side);
            image.crop(x, y, side, side)
        })
        .collect()
}
