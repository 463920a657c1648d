//! Wasserstein critic with gradient penalty. Scores images by how close they
//! look to the target style.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{global_feature_gradients, global_features, LinearImage};
use crate::nn::{dot, input_with_planes, rgb_gradient, Adam, BackboneSpec, Gradients, Network, Tape, Tensor};
use crate::par;

/// Penalty coefficient on the gradient-norm deviation.
pub const DEFAULT_LAMBDA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    net: Network,
    pub lambda: f64,
}

/// Loss value, its parts and the weight gradient of one critic batch.
#[derive(Clone, Debug)]
pub struct CriticLoss {
    pub loss: f64,
    /// mean D(targets) - mean D(generated).
    pub emd: f64,
    /// Mean squared deviation of the gradient norm from 1 (before lambda).
    pub penalty: f64,
    pub grads: Gradients,
}

struct SampleTerms {
    d_gen: f64,
    d_tgt: f64,
    penalty: f64,
    grads: Gradients,
}

impl Critic {
    /// Backbone critic over RGB plus the three global feature planes.
    pub fn new(side: usize, widths: [usize; 4], seed: u64) -> Result<Self> {
        let spec = BackboneSpec {
            in_channels: 6,
            side,
            widths,
            hidden: 128,
            outputs: 1,
            dropout: 0.0,
        };
        Ok(Self::with_network(Network::backbone(&spec, seed)?))
    }

    /// Wraps any single-output network over 6-channel inputs.
    pub fn with_network(net: Network) -> Self {
        Self {
            net,
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn input(image: &LinearImage) -> Tensor {
        input_with_planes(image, &global_features(image).as_array())
    }

    fn forward(&self, image: &LinearImage) -> Result<(f64, Tape)> {
        // The critic has no dropout; the generator is never consulted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, tape) = self.net.forward(&Self::input(image), &mut rng)?;
        if out.len() != 1 {
            return Err(Error::shape(1, out.len()));
        }
        Ok((out.data()[0], tape))
    }

    pub fn score(&self, image: &LinearImage) -> Result<f64> {
        Ok(self.forward(image)?.0)
    }

    pub fn scores(&self, images: &[LinearImage]) -> Result<Vec<f64>> {
        par::map(images, |img| self.score(img)).into_iter().collect()
    }

    /// Gradient of an input-tensor gradient pulled back to pixels, including
    /// the feature-plane paths.
    fn pixel_gradient(image: &LinearImage, grad: &[f64]) -> Vec<f64> {
        let n = image.pixel_count();
        let mut g = rgb_gradient(grad, image.width(), image.height());
        let feats = global_feature_gradients(image);
        for (k, fg) in feats.iter().enumerate() {
            let plane: f64 = grad[(3 + k) * n..(4 + k) * n].iter().sum();
            if plane != 0.0 {
                crate::nn::axpy(&mut g, plane, fg);
            }
        }
        g
    }

    /// D(image) and its gradient with respect to the pixels, laid out like image data.
    pub fn score_with_gradient(&self, image: &LinearImage) -> Result<(f64, Vec<f64>)> {
        let (d, tape) = self.forward(image)?;
        let b = self.net.backward(&tape, &Tensor::vector(vec![1.0]), false, true)?;
        Ok((d, Self::pixel_gradient(image, &b.input.unwrap())))
    }

    pub fn score_input_gradient(&self, image: &LinearImage) -> Result<Vec<f64>> {
        Ok(self.score_with_gradient(image)?.1)
    }

    /// Gradient norm measured against the RMS pixel distance:
    /// sqrt(M) * ||grad||_2 with M the number of values in the image.
    pub fn gradient_norm(image: &LinearImage, grad: &[f64]) -> f64 {
        ((image.data().len() as f64) * dot(grad, grad)).sqrt()
    }

    fn sample_terms(&self, gen: &LinearImage, tgt: &LinearImage, eps: f64, scale: f64) -> Result<SampleTerms> {
        if !gen.same_size(tgt) {
            return Err(Error::shape(
                format!("{}x{}", gen.width(), gen.height()),
                format!("{}x{}", tgt.width(), tgt.height()),
            ));
        }
        let (d_gen, tape_g) = self.forward(gen)?;
        let (d_tgt, tape_t) = self.forward(tgt)?;
        let mut grads = self
            .net
            .backward(&tape_g, &Tensor::vector(vec![scale]), true, false)?
            .weights
            .unwrap();
        grads.add_assign(
            &self
                .net
                .backward(&tape_t, &Tensor::vector(vec![-scale]), true, false)?
                .weights
                .unwrap(),
        );

        let mixed: Vec<f64> = gen
            .data()
            .iter()
            .zip(tgt.data())
            .map(|(g, t)| eps * g + (1.0 - eps) * t)
            .collect();
        let mixed = LinearImage::new(gen.width(), gen.height(), mixed)?;
        let (_, tape_m) = self.forward(&mixed)?;
        let dx = self
            .net
            .backward(&tape_m, &Tensor::vector(vec![1.0]), false, true)?
            .input
            .unwrap();
        let g = Self::pixel_gradient(&mixed, &dx);
        let m = g.len() as f64;
        let norm = Self::gradient_norm(&mixed, &g);
        let penalty = (norm - 1.0).powi(2);
        if norm > 0.0 {
            // d/dw of lambda (n - 1)^2 = c * g . d(g)/dw with c below; the
            // directional derivative of D along u = c*g carries it.
            let c = self.lambda * 2.0 * (norm - 1.0) * m / norm * scale;
            let u: Vec<f64> = g.iter().map(|v| c * v).collect();
            let feats = global_feature_gradients(&mixed);
            let planes: Vec<f64> = feats.iter().map(|fg| dot(fg, &u)).collect();
            let tangent = input_with_planes(
                &LinearImage::new(mixed.width(), mixed.height(), u)?,
                &planes,
            );
            let (_, tape_tan) = self.net.forward_tangent(&tape_m, &tangent)?;
            let gp = self
                .net
                .backward_tangent(&tape_m, &tape_tan, &Tensor::vector(vec![1.0]))?;
            grads.add_assign(&gp);
        }
        Ok(SampleTerms {
            d_gen,
            d_tgt,
            penalty,
            grads,
        })
    }

    /// Loss mean D(gen) - mean D(tgt) + lambda * mean (n - 1)^2 over pairwise
    /// interpolates `eps_i * gen_i + (1 - eps_i) * tgt_i`.
    pub fn loss(&self, generated: &[LinearImage], targets: &[LinearImage], eps: &[f64]) -> Result<CriticLoss> {
        let b = generated.len();
        if b == 0 || targets.len() != b || eps.len() != b {
            return Err(Error::Invalid(format!(
                "critic batch sizes {b}/{}/{}",
                targets.len(),
                eps.len()
            )));
        }
        let scale = 1.0 / b as f64;
        let terms: Vec<SampleTerms> = par::map_range(b, |i| {
            self.sample_terms(&generated[i], &targets[i], eps[i], scale)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros_like(&self.net);
        let (mut dg, mut dt, mut pen) = (0.0, 0.0, 0.0);
        for t in &terms {
            dg += t.d_gen;
            dt += t.d_tgt;
            pen += t.penalty;
            grads.add_assign(&t.grads);
        }
        let (dg, dt, pen) = (dg * scale, dt * scale, pen * scale);
        let loss = dg - dt + self.lambda * pen;
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        Ok(CriticLoss {
            loss,
            emd: dt - dg,
            penalty: pen,
            grads,
        })
    }

    /// One Adam step on a batch, drawing interpolation coefficients from `rng`.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        opt: &mut Adam,
        generated: &[LinearImage],
        targets: &[LinearImage],
        rng: &mut R,
        iteration: u64,
    ) -> Result<CriticLoss> {
        let eps: Vec<f64> = (0..generated.len()).map(|_| rng.gen::<f64>()).collect();
        let out = self.loss(generated, targets, &eps)?;
        opt.step(&mut self.net, &out.grads, iteration)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::LUM_WEIGHTS;
    use crate::nn::Layer;

    fn random_image(side: usize, seed: u64) -> LinearImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LinearImage::from_fn(side, side, |_, _| {
            [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
        })
    }

    fn small() -> Critic {
        Critic::new(16, [3, 4, 4, 4], 7).unwrap()
    }

    #[test]
    fn zero_critic() {
        let mut c = small();
        c.network_mut().zero_params();
        let img = random_image(16, 1);
        assert_eq!(c.score(&img).unwrap(), 0.0);
        assert!(c.score_input_gradient(&img).unwrap().iter().all(|&v| v == 0.0));
        let gen = vec![random_image(16, 2), random_image(16, 3)];
        let tgt = vec![random_image(16, 4), random_image(16, 5)];
        let l = c.loss(&gen, &tgt, &[0.3, 0.6]).unwrap();
        assert!((l.loss - c.lambda).abs() < 1e-12);
    }

    #[test]
    fn identical_batches_cancel() {
        let c = small();
        let imgs = vec![random_image(16, 2), random_image(16, 3)];
        let l = c.loss(&imgs, &imgs, &[0.3, 0.6]).unwrap();
        assert!(l.emd.abs() < 1e-12);
    }

    fn linear_critic(side: usize, seed: u64) -> Critic {
        let n = side * side;
        let mut net = Network::zeroed([6, side, side], vec![Layer::Dense { inputs: 6 * n, outputs: 1 }], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Unit norm under the RMS convention: sqrt(3n) * ||w|| = 1.
        let s = 1.0 / ((3 * n) as f64 * dot(&w, &w)).sqrt();
        w.iter_mut().for_each(|v| *v *= s);
        net.params_mut()[0][..3 * n].copy_from_slice(&w);
        Critic::with_network(net)
    }

    #[test]
    fn unit_linear_critic_has_no_penalty() {
        let c = linear_critic(4, 3);
        let gen = vec![random_image(4, 2), random_image(4, 8)];
        let tgt = vec![random_image(4, 4), random_image(4, 9)];
        let l = c.loss(&gen, &tgt, &[0.3, 0.9]).unwrap();
        assert!(l.penalty < 1e-20, "{}", l.penalty);
    }

    #[test]
    fn luminance_plane_gradient() {
        // Only the luminance plane is weighted: dD/dpixel = w_sum * LUM / n.
        let side = 4;
        let n = side * side;
        let mut net = Network::zeroed([6, side, side], vec![Layer::Dense { inputs: 6 * n, outputs: 1 }], 0).unwrap();
        net.params_mut()[0][3 * n..4 * n].fill(0.5);
        let c = Critic::with_network(net);
        let g = c.score_input_gradient(&random_image(side, 1)).unwrap();
        for px in g.chunks(3) {
            for ch in 0..3 {
                assert!((px[ch] - 0.5 * n as f64 * LUM_WEIGHTS[ch] / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_gradient_matches_differences() {
        let c = small();
        let img = random_image(16, 11);
        let (_, g) = c.score_with_gradient(&img).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..img.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-5;
        let shift = |s: f64| {
            let d: Vec<f64> = img.data().iter().zip(&u).map(|(a, b)| a + s * b).collect();
            c.score(&LinearImage::new(16, 16, d).unwrap()).unwrap()
        };
        let fd = (shift(h) - shift(-h)) / (2.0 * h);
        let an = dot(&g, &u);
        assert!((fd - an).abs() / an.abs().max(1e-5) < 1e-3, "{fd} vs {an}");
        for _ in 0..5 {
            let j = rng.gen_range(0..img.data().len());
            let mut p = img.data().to_vec();
            p[j] += h;
            let mut m = img.data().to_vec();
            m[j] -= h;
            let fd = (c.score(&LinearImage::new(16, 16, p).unwrap()).unwrap()
                - c.score(&LinearImage::new(16, 16, m).unwrap()).unwrap())
                / (2.0 * h);
            assert!((fd - g[j]).abs() / g[j].abs().max(1e-5) < 1e-3, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let c = small();
        let gen = vec![random_image(16, 20), random_image(16, 21)];
        let tgt = vec![random_image(16, 22), random_image(16, 23)];
        let eps = [0.25, 0.7];
        let l = c.loss(&gen, &tgt, &eps).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = rng.gen_range(0..c.net.params().len());
            let j = rng.gen_range(0..c.net.params()[t].len());
            let mut p = c.clone();
            p.net.params_mut()[t][j] += h;
            let mut m = c.clone();
            m.net.params_mut()[t][j] -= h;
            let fd = (p.loss(&gen, &tgt, &eps).unwrap().loss - m.loss(&gen, &tgt, &eps).unwrap().loss) / (2.0 * h);
            let an = l.grads.tensors[t][j];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-5) < 1e-4, "{t}/{j}: {fd} vs {an}");
        }
    }

    #[test]
    fn separable_toy_loss_falls() {
        let mut c = small();
        let gen: Vec<LinearImage> = (0..4).map(|_| LinearImage::filled(16, 16, [0.2; 3])).collect();
        let tgt: Vec<LinearImage> = (0..4).map(|_| LinearImage::filled(16, 16, [0.6; 3])).collect();
        let mut opt = Adam::new(c.network(), 1e-3, 1_000_000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut losses = Vec::new();
        for it in 0..200 {
            losses.push(c.update(&mut opt, &gen, &tgt, &mut rng, it).unwrap().loss);
        }
        let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
        let tail: f64 = losses[180..].iter().sum::<f64>() / 20.0;
        assert!(tail < head, "{head} -> {tail}");
        let sg: f64 = c.scores(&gen).unwrap().iter().sum();
        let st: f64 = c.scores(&tgt).unwrap().iter().sum();
        assert!(st > sg);
    }
}
