//! Fits a fixed-length operation sequence to paired before/after images by
//! gradient descent through the differentiable filters.

use std::collections::BTreeSet;
use std::path::Path;

use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::filters::{apply_filter, filter_vjp, EditScript, FilterAction, FilterKind};
use crate::image::LinearImage;
use crate::nn::proxy;
use crate::par;

const RAW_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub steps: usize,
    /// Adam iterations for the final refinement of each surviving candidate.
    pub iterations: usize,
    /// Adam iterations used to rank candidate kind sequences.
    pub search_iterations: usize,
    pub lr: f64,
    /// Pairs used while searching; the residual is reported over all pairs.
    pub search_images: usize,
    pub side: usize,
    pub beam_width: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            iterations: 400,
            search_iterations: 80,
            lr: 0.05,
            search_images: 8,
            side: 64,
            beam_width: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillResult {
    pub script: EditScript,
    /// Mean squared pixel error over all proxy pairs.
    pub residual: f64,
}

/// Loads `before` and `after` and pairs them by file name.
pub fn load_pairs(before: impl AsRef<Path>, after: impl AsRef<Path>) -> Result<Vec<(LinearImage, LinearImage)>> {
    let b = load_dataset(before)?;
    let a = load_dataset(after)?;
    let bn: BTreeSet<&str> = b.iter().map(|(n, _)| n.as_str()).collect();
    let an: BTreeSet<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    if bn != an {
        let missing: Vec<&str> = bn.symmetric_difference(&an).copied().take(5).collect();
        return Err(Error::Dataset(format!("unpaired file names: {}", missing.join(", "))));
    }
    let mut pairs = Vec::with_capacity(b.len());
    for ((_, x), (_, y)) in b.into_iter().zip(a) {
        if !x.same_size(&y) {
            return Err(Error::Dataset("paired images differ in size".into()));
        }
        pairs.push((x, y));
    }
    Ok(pairs)
}

struct Candidate {
    kinds: Vec<FilterKind>,
    z: Vec<Vec<f64>>,
    loss: f64,
}

fn actions(kinds: &[FilterKind], z: &[Vec<f64>]) -> Result<Vec<FilterAction>> {
    kinds
        .iter()
        .zip(z)
        .map(|(&k, zs)| FilterAction::new(k, zs.iter().map(|v| v.tanh().clamp(-RAW_LIMIT, RAW_LIMIT)).collect()))
        .collect()
}

/// Mean squared error over `pairs` and its gradient with respect to `z`.
fn loss_and_grad(kinds: &[FilterKind], z: &[Vec<f64>], pairs: &[(LinearImage, LinearImage)]) -> Result<(f64, Vec<Vec<f64>>)> {
    let acts = actions(kinds, z)?;
    let n: usize = pairs.iter().map(|(x, _)| x.data().len()).sum();
    let per: Vec<Result<(f64, Vec<Vec<f64>>)>> = par::map(pairs, |(x, y)| {
        let mut states = vec![x.clone()];
        for a in &acts {
            let next = apply_filter(a, states.last().unwrap());
            states.push(next);
        }
        let out = states.last().unwrap();
        let mut sq = 0.0;
        let mut up: Vec<f64> = out
            .data()
            .iter()
            .zip(y.data())
            .map(|(&o, t)| {
                // Stored images are clamped to [0, 1], so the prediction is too.
                let c = o.clamp(0.0, 1.0);
                sq += (c - t) * (c - t);
                if c == o {
                    2.0 * (c - t) / n as f64
                } else {
                    0.0
                }
            })
            .collect();
        let mut grads = vec![Vec::new(); acts.len()];
        for j in (0..acts.len()).rev() {
            let g = filter_vjp(&acts[j], &states[j], &up)?;
            grads[j] = g.raw;
            up = g.input;
        }
        Ok((sq, grads))
    });
    let mut loss = 0.0;
    let mut total: Vec<Vec<f64>> = z.iter().map(|v| vec![0.0; v.len()]).collect();
    for p in per {
        let (sq, g) = p?;
        loss += sq;
        for (t, gj) in total.iter_mut().zip(&g) {
            for (a, b) in t.iter_mut().zip(gj) {
                *a += b;
            }
        }
    }
    // Chain through raw = tanh(z).
    for (t, zs) in total.iter_mut().zip(z) {
        for (g, v) in t.iter_mut().zip(zs) {
            let th = v.tanh();
            *g *= 1.0 - th * th;
        }
    }
    Ok((loss / n as f64, total))
}

fn fit(cand: &mut Candidate, pairs: &[(LinearImage, LinearImage)], iterations: usize, lr: f64) -> Result<()> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m: Vec<Vec<f64>> = cand.z.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut v = m.clone();
    let mut best = (f64::INFINITY, cand.z.clone());
    for t in 1..=iterations {
        let (loss, g) = loss_and_grad(&cand.kinds, &cand.z, pairs)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("distill loss".into()));
        }
        if loss < best.0 {
            best = (loss, cand.z.clone());
        }
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for j in 0..cand.z.len() {
            for i in 0..cand.z[j].len() {
                m[j][i] = b1 * m[j][i] + (1.0 - b1) * g[j][i];
                v[j][i] = b2 * v[j][i] + (1.0 - b2) * g[j][i] * g[j][i];
                cand.z[j][i] -= lr * (m[j][i] / c1) / ((v[j][i] / c2).sqrt() + eps);
            }
        }
    }
    let (last, _) = loss_and_grad(&cand.kinds, &cand.z, pairs)?;
    if last < best.0 {
        best = (last, cand.z.clone());
    }
    cand.loss = best.0;
    cand.z = best.1;
    Ok(())
}

fn fresh(kinds: Vec<FilterKind>, prefix: &[Vec<f64>]) -> Candidate {
    let mut z = prefix.to_vec();
    z.extend(kinds[prefix.len()..].iter().map(|k| vec![0.0; k.arity()]));
    Candidate { kinds, z, loss: f64::INFINITY }
}

fn keep_best(mut cands: Vec<Candidate>, width: usize) -> Vec<Candidate> {
    cands.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    cands.truncate(width);
    cands
}

/// Searches kind sequences of length `cfg.steps` and fits their parameters.
/// Every sequence is tried when `steps <= 2`; longer ones use a beam search.
pub fn distill(pairs: &[(LinearImage, LinearImage)], cfg: &DistillConfig) -> Result<DistillResult> {
    if cfg.steps < 1 {
        return Err(Error::Invalid("distill needs at least one step".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("no image pairs".into()));
    }
    let proxies: Vec<(LinearImage, LinearImage)> = pairs
        .iter()
        .map(|(x, y)| Ok((proxy(x, cfg.side)?, proxy(y, cfg.side)?)))
        .collect::<Result<_>>()?;
    let search = &proxies[..cfg.search_images.clamp(1, proxies.len())];

    let mut beam = if cfg.steps <= 2 {
        let mut seqs: Vec<Vec<FilterKind>> = vec![Vec::new()];
        for _ in 0..cfg.steps {
            seqs = seqs
                .into_iter()
                .flat_map(|s| {
                    FilterKind::ALL.iter().map(move |&k| {
                        let mut t = s.clone();
                        t.push(k);
                        t
                    })
                })
                .collect();
        }
        let mut cands = Vec::with_capacity(seqs.len());
        for s in seqs {
            let mut c = fresh(s, &[]);
            fit(&mut c, search, cfg.search_iterations, cfg.lr)?;
            cands.push(c);
        }
        keep_best(cands, cfg.beam_width)
    } else {
        let mut beam = vec![Candidate { kinds: Vec::new(), z: Vec::new(), loss: f64::INFINITY }];
        for _ in 0..cfg.steps {
            let mut cands = Vec::new();
            for prefix in &beam {
                for &k in &FilterKind::ALL {
                    let mut kinds = prefix.kinds.clone();
                    kinds.push(k);
                    let mut c = fresh(kinds, &prefix.z);
                    fit(&mut c, search, cfg.search_iterations, cfg.lr)?;
                    cands.push(c);
                }
            }
            beam = keep_best(cands, cfg.beam_width);
        }
        beam
    };
    for c in &mut beam {
        fit(c, &proxies, cfg.iterations, cfg.lr)?;
    }
    let best = keep_best(beam, 1).pop().unwrap();
    Ok(DistillResult {
        script: EditScript::new(actions(&best.kinds, &best.z)?),
        residual: best.loss,
    })
}

pub fn distill_dirs(before: impl AsRef<Path>, after: impl AsRef<Path>, cfg: &DistillConfig) -> Result<DistillResult> {
    distill(&load_pairs(before, after)?, cfg)
}

/// Largest channel difference between two scripts applied to `probes` gray
/// levels spread evenly over [0, 1], with outputs clamped to [0, 1] as stored.
pub fn transfer_error(a: &EditScript, b: &EditScript, probes: usize) -> f64 {
    let ramp = LinearImage::from_fn(probes, 1, |x, _| [x as f64 / (probes - 1).max(1) as f64; 3]);
    a.apply(&ramp).clamped().max_abs_diff(&b.apply(&ramp).clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::procedural_set;

    fn pairs_for(script: &EditScript, n: usize) -> Vec<(LinearImage, LinearImage)> {
        procedural_set(n, 32, 40, 0.0, 1.0)
            .into_iter()
            .map(|x| {
                let y = script.apply(&x).clamped();
                (x, y)
            })
            .collect()
    }

    fn quick(steps: usize) -> DistillConfig {
        DistillConfig {
            steps,
            side: 32,
            search_images: 4,
            ..DistillConfig::default()
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let pairs = pairs_for(&EditScript::new(vec![FilterAction::exposure(0.5)]), 2);
        let kinds = [FilterKind::Exposure, FilterKind::Contrast];
        let z = vec![vec![0.1], vec![0.2]];
        let (_, g) = loss_and_grad(&kinds, &z, &pairs).unwrap();
        let h = 1e-5;
        for j in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j][0] += h;
            zm[j][0] -= h;
            let fd = (loss_and_grad(&kinds, &zp, &pairs).unwrap().0 - loss_and_grad(&kinds, &zm, &pairs).unwrap().0) / (2.0 * h);
            assert!((fd - g[j][0]).abs() < 1e-6 * (1.0 + fd.abs()), "{j}: {fd} vs {}", g[j][0]);
        }
    }

    #[test]
    fn recovers_exposure() {
        let truth = EditScript::new(vec![FilterAction::exposure(1.0)]);
        let r = distill(&pairs_for(&truth, 6), &quick(1)).unwrap();
        let a = &r.script.actions[0];
        assert_eq!(a.kind(), FilterKind::Exposure);
        assert!((a.resolved()[0] - 1.0).abs() < 0.02);
        assert!(r.residual < 1e-4);
    }

    #[test]
    fn identity_stays_near_neutral() {
        let pairs: Vec<_> = procedural_set(4, 32, 3, 0.0, 1.0).into_iter().map(|x| (x.clone(), x)).collect();
        let r = distill(&pairs, &quick(1)).unwrap();
        assert!(r.residual < 1e-6);
        let id = EditScript::new(Vec::new());
        assert!(transfer_error(&r.script, &id, 256) < 1e-2);
    }

    #[test]
    fn rejects_zero_steps() {
        let pairs = pairs_for(&EditScript::new(Vec::new()), 1);
        assert!(distill(&pairs, &quick(0)).is_err());
    }

    #[test]
    fn unpaired_directories() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let imgs = procedural_set(2, 8, 1, 0.0, 1.0);
        crate::dataset::save_dataset(a.path(), "x", &imgs).unwrap();
        crate::dataset::save_dataset(b.path(), "y", &imgs).unwrap();
        assert!(matches!(load_pairs(a.path(), b.path()), Err(Error::Dataset(_))));
        let c = tempfile::tempdir().unwrap();
        crate::dataset::save_dataset(c.path(), "x", &imgs).unwrap();
        assert_eq!(load_pairs(a.path(), c.path()).unwrap().len(), 2);
    }
}
