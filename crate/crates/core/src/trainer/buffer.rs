use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::agent::AgentState;
use crate::error::{Error, Result};
use crate::image::LinearImage;

/// Fixed-size pool of in-progress episodes stepped out of order.
#[derive(Clone, Debug)]
pub struct TrajectoryBuffer {
    entries: Vec<AgentState>,
}

impl TrajectoryBuffer {
    pub fn new(entries: Vec<AgentState>) -> Self {
        Self { entries }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[AgentState] {
        &self.entries
    }

    pub fn finished_count(&self) -> usize {
        self.entries.iter().filter(|s| s.is_finished()).count()
    }

    /// `b` distinct slot indices drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Vec<usize>> {
        if b > self.entries.len() {
            return Err(Error::Invalid(format!(
                "batch {b} exceeds buffer capacity {}",
                self.entries.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), b).into_vec())
    }

    pub fn get(&self, slot: usize) -> &AgentState {
        &self.entries[slot]
    }

    /// Writes `state` into `slot`, returning the previous occupant.
    pub fn replace(&mut self, slot: usize, state: AgentState) -> AgentState {
        std::mem::replace(&mut self.entries[slot], state)
    }
}

/// Endless stream of raw proxies: a reshuffled pass over the set each epoch.
#[derive(Clone, Debug)]
pub struct RawFeed {
    images: Vec<LinearImage>,
    order: Vec<usize>,
    pos: usize,
}

impl RawFeed {
    pub fn new<R: Rng + ?Sized>(images: Vec<LinearImage>, rng: &mut R) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Dataset("no raw images".into()));
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(rng);
        Ok(Self {
            images,
            order,
            pos: 0,
        })
    }

    pub fn next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> AgentState {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let img = self.images[self.order[self.pos]].clone();
        self.pos += 1;
        AgentState::new(img)
    }
}

/// FIFO of finished images with a fixed capacity.
#[derive(Clone, Debug)]
pub struct FinishedPool {
    images: VecDeque<LinearImage>,
    capacity: usize,
}

impl FinishedPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            images: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &LinearImage> + '_ {
        self.images.iter()
    }

    pub fn push(&mut self, image: LinearImage) {
        if self.images.len() == self.capacity {
            self.images.pop_front();
        }
        self.images.push_back(image);
    }

    /// `b` images: without replacement when enough are held, otherwise with.
    pub fn sample<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Vec<LinearImage> {
        sample_images(self.images.len(), b, rng)
            .into_iter()
            .map(|i| self.images[i].clone())
            .collect()
    }
}

/// Indices for a batch of `b` from `n` items; with replacement only if `n < b`.
pub fn sample_images<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Vec<usize> {
    if n >= b {
        rand::seq::index::sample(rng, n, b).into_vec()
    } else {
        (0..b).map(|_| rng.gen_range(0..n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn buffer(n: usize) -> TrajectoryBuffer {
        TrajectoryBuffer::new((0..n).map(|i| AgentState::new(LinearImage::filled(1, 1, [i as f64 / n as f64; 3]))).collect())
    }

    #[test]
    fn sample_and_replace_keep_capacity() {
        let mut b = buffer(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = b.sample(8, &mut rng).unwrap();
        let mut sorted = idx.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
        for &i in &idx {
            let s = b.get(i).clone();
            b.replace(i, s);
        }
        assert_eq!(b.capacity(), 32);
        assert!(b.sample(33, &mut rng).is_err());
        let again = buffer(32).sample(8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(idx, again);
    }

    #[test]
    fn slot_frequencies_are_uniform() {
        let b = buffer(64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = vec![0usize; 64];
        let rounds = 4000;
        for _ in 0..rounds {
            for i in b.sample(16, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 16.0 / 64.0;
        let mean = rounds as f64 * p;
        let sd = (rounds as f64 * p * (1.0 - p)).sqrt();
        // 3 sigma per slot, plus slack for the 64-way maximum.
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() < 4.0 * sd), "{counts:?}");
    }

    #[test]
    fn pool_is_fifo() {
        let mut p = FinishedPool::new(2);
        for v in [0.1, 0.2, 0.3] {
            p.push(LinearImage::filled(1, 1, [v; 3]));
        }
        assert_eq!(p.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = p.sample(2, &mut rng);
        assert!(s.iter().all(|i| i.data()[0] > 0.15));
        assert_eq!(p.sample(5, &mut rng).len(), 5);
    }

    #[test]
    fn feed_cycles_through_every_image() {
        let imgs: Vec<LinearImage> = (0..5).map(|i| LinearImage::filled(1, 1, [i as f64; 3])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut feed = RawFeed::new(imgs, &mut rng).unwrap();
        let mut seen: Vec<f64> = (0..5).map(|_| feed.next(&mut rng).image.data()[0]).collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(RawFeed::new(vec![], &mut rng).is_err());
    }
}
