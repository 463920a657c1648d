//! Minimal convolutional networks with exact gradients.

mod adam;
mod checkpoint;
mod network;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{arch_hash, load_sections, save_sections, Section};
pub use network::{BackboneSpec, Backward, Gradients, Layer, Network, Tape, LEAKY_SLOPE};
pub use tensor::Tensor;
pub(crate) use tensor::{axpy, dot};

use crate::image::{downsample, LinearImage};

/// Side of the square proxy image fed to every network.
pub const PROXY_SIDE: usize = 64;

/// Stacks an image's RGB planes (channel-major) with constant planes.
pub fn input_with_planes(image: &LinearImage, planes: &[f64]) -> Tensor {
    let side_w = image.width();
    let side_h = image.height();
    let n = side_w * side_h;
    let mut data = vec![0.0; (3 + planes.len()) * n];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c];
        }
    }
    for (k, &v) in planes.iter().enumerate() {
        data[(3 + k) * n..(4 + k) * n].fill(v);
    }
    Tensor::new(vec![3 + planes.len(), side_h, side_w], data).expect("sizes agree")
}

/// Extracts the RGB part of an input gradient back into interleaved layout.
pub fn rgb_gradient(grad: &[f64], width: usize, height: usize) -> Vec<f64> {
    let n = width * height;
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            out[3 * i + c] = grad[c * n + i];
        }
    }
    out
}

/// Square proxy of `image` at the network input resolution.
pub fn proxy(image: &LinearImage, side: usize) -> crate::Result<LinearImage> {
    if image.width() == side && image.height() == side {
        Ok(image.clone())
    } else {
        downsample(image, side)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planes_layout() {
        let img = LinearImage::from_fn(2, 1, |x, _| [x as f64, 0.5, 1.0]);
        let t = input_with_planes(&img, &[0.25]);
        assert_eq!(t.shape(), &[4, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.5, 0.5, 1.0, 1.0, 0.25, 0.25]);
        let back = rgb_gradient(t.data(), 2, 1);
        assert_eq!(back, vec![0.0, 0.5, 1.0, 1.0, 0.5, 1.0]);
    }
}
