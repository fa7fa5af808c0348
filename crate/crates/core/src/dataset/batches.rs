use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Shuffled index batches for one epoch. The order depends only on
/// `(n, seed, epoch)`; the last batch holds the remainder.
pub fn batch_plan(n: usize, batch: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch);
    order.shuffle(&mut rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Iterator over the batches of successive epochs.
#[derive(Debug, Clone)]
pub struct Batches {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl Batches {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            n,
            batch,
            seed,
            epoch: 0,
            pending: batch_plan(n, batch, seed, 0).into_iter(),
        }
    }

    /// Epoch of the batch the next call to `next` returns.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.n == 0 {
            return None;
        }
        if self.pending.len() == 0 {
            self.epoch += 1;
            self.pending = batch_plan(self.n, self.batch, self.seed, self.epoch).into_iter();
        }
        self.pending.next()
    }
}
