//! Image directories and procedurally generated image sets.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{load_image, save_image, ImageFormat, LinearImage};
use crate::par;

/// Supported image files in `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no .ppm or .pfm images in {}", dir.display())));
    }
    Ok(paths)
}

/// Loads every image in `dir` as (file name, image), sorted by name.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(String, LinearImage)>> {
    let paths = list_images(dir)?;
    par::map(&paths, |p| {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        load_image(p).map(|img| (name, img))
    })
    .into_iter()
    .collect()
}

/// Saves images as `{prefix}{index:04}.pfm` under `dir`, creating it.
pub fn save_dataset(dir: impl AsRef<Path>, prefix: &str, images: &[LinearImage]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("{prefix}{i:04}.pfm"));
            save_image(img, &p).map(|_| p)
        })
        .collect()
}

/// A smooth procedural scene: a tinted gradient with a few soft blobs.
/// Channel values stay within [lo, hi].
pub fn procedural_image(side: usize, seed: u64, lo: f64, hi: f64) -> LinearImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let tint: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..rng.gen_range(1..4))
        .map(|_| {
            (
                [rng.gen(), rng.gen()],
                rng.gen_range(0.08..0.3),
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            )
        })
        .collect();
    let exposure: f64 = rng.gen_range(0.25..1.0);
    LinearImage::from_fn(side, side, |x, y| {
        let u = (x as f64 + 0.5) / side as f64;
        let v = (y as f64 + 0.5) / side as f64;
        let t = 0.5 + 0.5 * ((u - 0.5) * dx + (v - 0.5) * dy) * 1.4;
        let mut p = [0.0; 3];
        for c in 0..3 {
            p[c] = base[c] * (1.0 - t) + tint[c] * t;
        }
        for (centre, r, col) in &blobs {
            let d2 = (u - centre[0]).powi(2) + (v - centre[1]).powi(2);
            let w = (-d2 / (2.0 * r * r)).exp();
            for c in 0..3 {
                p[c] += 0.4 * w * col[c];
            }
        }
        p.map(|c| lo + (hi - lo) * (c * exposure).clamp(0.0, 1.0))
    })
}

/// `n` procedural images of the given side; image `i` uses seed `seed + i`.
pub fn procedural_set(n: usize, side: usize, seed: u64, lo: f64, hi: f64) -> Vec<LinearImage> {
    par::map_range(n, |i| procedural_image(side, seed.wrapping_add(i as u64), lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn procedural_range_and_determinism() {
        let a = procedural_image(32, 5, 0.02, 0.48);
        assert!(a.data().iter().all(|&v| (0.02..=0.48).contains(&v)));
        assert_eq!(a, procedural_image(32, 5, 0.02, 0.48));
        assert_ne!(a, procedural_image(32, 6, 0.02, 0.48));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = procedural_set(3, 8, 1, 0.0, 1.0);
        save_dataset(dir.path(), "img", &imgs).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].0, "img0000.pfm");
        for ((_, b), a) in back.iter().zip(&imgs) {
            assert!(b.max_abs_diff(a) < 1e-7);
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(empty.path()), Err(Error::Dataset(_))));
    }
}
