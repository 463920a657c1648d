//! Binary PPM (P6, sRGB, 8-bit) and PFM (linear float32) codecs.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::color::{linear_to_srgb, srgb_to_linear};
use super::LinearImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Pfm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("pfm") => Ok(ImageFormat::Pfm),
            other => Err(Error::UnsupportedFormat(format!(
                "extension {:?} (expected .ppm or .pfm)",
                other.unwrap_or("")
            ))),
        }
    }
}

/// Reads a PPM or PFM file, sniffing the magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(..2) {
        Some(b"P6") => decode_ppm(&bytes, path),
        Some(b"PF") => decode_pfm(&bytes, path),
        _ => Err(Error::UnsupportedFormat(format!(
            "{}: unrecognised magic bytes",
            path.display()
        ))),
    }
}

/// Writes the image, choosing the codec from the file extension. Values are
/// clamped to [0,1] in both formats.
pub fn save_image(image: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match ImageFormat::from_path(path)? {
        ImageFormat::Ppm => encode_ppm(image),
        ImageFormat::Pfm => encode_pfm(image),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Pulls whitespace-separated header tokens, skipping `#` comments.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn token(&mut self) -> Option<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.bytes[start..self.pos]).ok())?
    }

    fn number<T: std::str::FromStr>(&mut self, path: &Path, what: &str) -> Result<T> {
        self.token()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::malformed(path, format!("bad {what}")))
    }

    /// Consumes the single whitespace byte that ends the header.
    fn body(self) -> &'a [u8] {
        &self.bytes[(self.pos + 1).min(self.bytes.len())..]
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        Err(Error::Dimensions { width, height })
    } else {
        Ok(())
    }
}

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<LinearImage> {
    let mut h = Header { bytes, pos: 2 };
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let maxval: u32 = h.number(path, "maxval")?;
    check_dims(width, height)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("PPM maxval {maxval}")));
    }
    let body = h.body();
    let n = width * height * 3;
    if body.len() < n {
        return Err(Error::malformed(path, "truncated pixel data"));
    }
    let lut: Vec<f64> = (0..=maxval)
        .map(|v| srgb_to_linear(v as f64 / maxval as f64))
        .collect();
    let data = body[..n].iter().map(|&b| lut[b as usize]).collect();
    LinearImage::new(width, height, data)
}

fn encode_ppm(image: &LinearImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (linear_to_srgb(v) * 255.0).round() as u8),
    );
    out
}

fn decode_pfm(bytes: &[u8], path: &Path) -> Result<LinearImage> {
    let mut h = Header { bytes, pos: 0 };
    match h.token() {
        Some("PF") => {}
        Some(other) => return Err(Error::UnsupportedFormat(format!("PFM variant {other}"))),
        None => return Err(Error::malformed(path, "missing magic")),
    }
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let scale: f64 = h.number(path, "scale")?;
    check_dims(width, height)?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::malformed(path, "zero scale"));
    }
    let little = scale < 0.0;
    let body = h.body();
    let n = width * height * 3;
    if body.len() < n * 4 {
        return Err(Error::malformed(path, "truncated pixel data"));
    }
    let mut data = vec![0.0; n];
    for (i, chunk) in body[..n * 4].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // Rows are stored bottom-to-top.
        let file_row = i / (width * 3);
        let rest = i % (width * 3);
        data[(height - 1 - file_row) * width * 3 + rest] = v as f64;
    }
    LinearImage::new(width, height, data)
}

fn encode_pfm(image: &LinearImage) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 12);
    for row in (0..h).rev() {
        for v in &image.data()[row * w * 3..(row + 1) * w * 3] {
            out.extend_from_slice(&(v.clamp(0.0, 1.0) as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn ppm_single_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let white = write(&dir, "w.ppm", b"P6\n1 1\n255\n\xff\xff\xff");
        assert_eq!(load_image(&white).unwrap().data(), &[1.0, 1.0, 1.0]);
        let black = write(&dir, "b.ppm", b"P6 1 1 255\n\x00\x00\x00");
        assert_eq!(load_image(&black).unwrap().data(), &[0.0, 0.0, 0.0]);
        let gray = write(&dir, "g.ppm", b"P6\n# comment\n1 1\n255\n\x80\x80\x80");
        let c: f64 = 128.0 / 255.0;
        let oracle = ((c + 0.055) / 1.055).powf(2.4);
        for v in load_image(&gray).unwrap().data() {
            assert!((v - oracle).abs() < 1e-12 && (v - 0.2158).abs() < 1e-4);
        }
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.ppm")),
            Err(Error::Io { .. })
        ));
        let bad = write(&dir, "x.ppm", b"P3\n1 1\n255\n0 0 0");
        assert!(matches!(load_image(&bad), Err(Error::UnsupportedFormat(_))));
        let zero = write(&dir, "z.ppm", b"P6\n0 1\n255\n");
        assert!(matches!(load_image(&zero), Err(Error::Dimensions { .. })));
        let short = write(&dir, "s.ppm", b"P6\n2 2\n255\n\x00\x00");
        assert!(matches!(load_image(&short), Err(Error::Malformed { .. })));
        let img = LinearImage::filled(1, 1, [0.0; 3]);
        assert!(save_image(&img, dir.path().join("a.png")).is_err());
        assert!(save_image(&img, dir.path().join("no/such/dir/a.pfm")).is_err());
    }

    #[test]
    fn pfm_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = LinearImage::from_fn(7, 5, |_, _| {
            [rng.gen::<f32>() as f64, rng.gen::<f32>() as f64, rng.gen::<f32>() as f64]
        });
        let p = dir.path().join("r.pfm");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn pfm_reads_big_endian_and_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = b"PF\n1 2\n1.0\n".to_vec();
        for v in [0.25f32, 0.25, 0.25, 0.75, 0.75, 0.75] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let img = load_image(write(&dir, "be.pfm", &bytes)).unwrap();
        // First stored row is the bottom row.
        assert_eq!(img.pixel(0, 0), [0.75; 3]);
        assert_eq!(img.pixel(0, 1), [0.25; 3]);
    }

    #[test]
    fn save_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let img = LinearImage::new(2, 1, vec![1.7, -0.2, 0.5, 0.0, 1.0, 2.0]).unwrap();
        let ppm = dir.path().join("c.ppm");
        save_image(&img, &ppm).unwrap();
        let bytes = fs::read(&ppm).unwrap();
        let px = &bytes[bytes.len() - 6..];
        assert_eq!(px[0], 255);
        assert_eq!(px[1], 0);
        let pfm = dir.path().join("c.pfm");
        save_image(&img, &pfm).unwrap();
        assert_eq!(load_image(&pfm).unwrap().data(), &[1.0, 0.0, 0.5, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn ppm_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = LinearImage::from_fn(9, 4, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let p = dir.path().join("q.ppm");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        // Compare in the encoded domain where the quantisation step is 1/255.
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((linear_to_srgb(*a) - linear_to_srgb(*b)).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }
}
