//! Deterministic batch schedules.
//!
//! The order of every epoch is a pure function of `(seed, epoch)`, so a run
//! can resume mid-epoch from its global step alone.

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{PairedExample, UnpairedDataset};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

const SOURCE_STREAM: u64 = 0;
const TARGET_STREAM: u64 = 1;

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 32);
    rng
}

/// Shuffled `0..n` for `(seed, stream, index)`.
pub fn permutation(n: usize, seed: u64, stream: u64, index: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut stream_rng(seed, stream, index));
    p
}

/// Full batches per epoch under drop-last.
pub fn batches_per_epoch(len: usize, batch_size: usize) -> Result<usize> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    if batch_size > len {
        return Err(Error::Data(format!("batch size {batch_size} exceeds dataset size {len}")));
    }
    Ok(len / batch_size)
}

/// Index sets of one batch. For paired data `target == source`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Batch index schedule over a source set and, for unpaired data, an
/// independently shuffled target set.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    source_len: usize,
    target_len: Option<usize>,
    batch_size: usize,
    seed: u64,
    per_epoch: usize,
}

impl BatchSchedule {
    pub fn paired(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            source_len: len,
            target_len: None,
            batch_size,
            seed,
            per_epoch: batches_per_epoch(len, batch_size)?,
        })
    }

    /// An epoch is one pass over the sources; targets are drawn from a
    /// stream of fresh permutations that continues across epochs.
    pub fn unpaired(source_len: usize, target_len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        batches_per_epoch(target_len, batch_size)?;
        Ok(Self {
            source_len,
            target_len: Some(target_len),
            batch_size,
            seed,
            per_epoch: batches_per_epoch(source_len, batch_size)?,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.per_epoch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn target_draws(&self, epoch: u64, len: usize) -> Vec<usize> {
        let count = self.per_epoch * self.batch_size;
        let start = epoch * count as u64;
        let mut out = Vec::with_capacity(count);
        let mut cycle = start / len as u64;
        let mut offset = (start % len as u64) as usize;
        while out.len() < count {
            let perm = permutation(len, self.seed, TARGET_STREAM, cycle);
            let take = (count - out.len()).min(len - offset);
            out.extend_from_slice(&perm[offset..offset + take]);
            offset = 0;
            cycle += 1;
        }
        out
    }

    /// All batches of `epoch`, in order.
    pub fn epoch(&self, epoch: u64) -> Vec<BatchIndices> {
        let source = permutation(self.source_len, self.seed, SOURCE_STREAM, epoch);
        let target = self.target_len.map(|len| self.target_draws(epoch, len));
        (0..self.per_epoch)
            .map(|b| {
                let s = source[b * self.batch_size..(b + 1) * self.batch_size].to_vec();
                let t = match &target {
                    Some(t) => t[b * self.batch_size..(b + 1) * self.batch_size].to_vec(),
                    None => s.clone(),
                };
                BatchIndices { source: s, target: t }
            })
            .collect()
    }
}

/// Dataset view accepted by [`iterate_batches`].
#[derive(Debug, Clone, Copy)]
pub enum DatasetRef<'a> {
    Paired(&'a [PairedExample]),
    Unpaired(&'a UnpairedDataset),
}

impl DatasetRef<'_> {
    pub fn schedule(&self, batch_size: usize, seed: u64) -> Result<BatchSchedule> {
        match self {
            DatasetRef::Paired(p) => BatchSchedule::paired(p.len(), batch_size, seed),
            DatasetRef::Unpaired(u) => BatchSchedule::unpaired(u.source.len(), u.target.len(), batch_size, seed),
        }
    }
}

/// Stacked `(B, C, H, W)` batch. For paired data `y` is the ground truth of `x`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub index: usize,
    pub x: Tensor,
    pub y: Tensor,
    pub indices: BatchIndices,
}

pub struct BatchIter<'a> {
    data: DatasetRef<'a>,
    plan: Vec<BatchIndices>,
    next: usize,
    device: Device,
}

impl BatchIter<'_> {
    /// Skips to batch `index` of the epoch without materializing earlier ones.
    pub fn start_at(mut self, index: usize) -> Self {
        self.next = index.min(self.plan.len());
        self
    }

    pub fn len(&self) -> usize {
        self.plan.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plan.is_empty()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let ids = self.plan.get(self.next)?.clone();
        let index = self.next;
        self.next += 1;
        let stacked = match self.data {
            DatasetRef::Paired(p) => {
                let xs: Vec<&ImageTensor> = ids.source.iter().map(|&i| &p[i].x).collect();
                let ys: Vec<&ImageTensor> = ids.source.iter().map(|&i| &p[i].y).collect();
                ImageTensor::stack(&xs, &self.device).and_then(|x| Ok((x, ImageTensor::stack(&ys, &self.device)?)))
            }
            DatasetRef::Unpaired(u) => {
                let xs: Vec<&ImageTensor> = ids.source.iter().map(|&i| &u.source[i]).collect();
                let ys: Vec<&ImageTensor> = ids.target.iter().map(|&i| &u.target[i]).collect();
                ImageTensor::stack(&xs, &self.device).and_then(|x| Ok((x, ImageTensor::stack(&ys, &self.device)?)))
            }
        };
        Some(stacked.map(|(x, y)| Batch {
            index,
            x,
            y,
            indices: ids,
        }))
    }
}

/// Batches of one epoch; paired or unpaired mode follows the dataset kind.
pub fn iterate_batches<'a>(data: DatasetRef<'a>, batch_size: usize, seed: u64, epoch: u64, device: &Device) -> Result<BatchIter<'a>> {
    let plan = data.schedule(batch_size, seed)?.epoch(epoch);
    Ok(BatchIter {
        data,
        plan,
        next: 0,
        device: device.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drop_last_arithmetic() {
        let s = BatchSchedule::paired(10, 4, 0).unwrap();
        assert_eq!(s.batches_per_epoch(), 2);
        assert_eq!(s.epoch(0).len(), 2);
        assert!(BatchSchedule::paired(3, 4, 0).is_err());
        assert!(BatchSchedule::paired(3, 0, 0).is_err());
    }

    #[test]
    fn schedules_are_deterministic_and_reshuffled() {
        let s = BatchSchedule::unpaired(12, 7, 3, 5).unwrap();
        assert_eq!(s.epoch(2), s.epoch(2));
        assert_ne!(s.epoch(0), s.epoch(1));
        let again = BatchSchedule::unpaired(12, 7, 3, 5).unwrap();
        assert_eq!(s.epoch(4), again.epoch(4));
    }

    #[test]
    fn epoch_visits_each_source_once() {
        let s = BatchSchedule::paired(9, 3, 1).unwrap();
        let mut seen: Vec<usize> = s.epoch(0).into_iter().flat_map(|b| b.source).collect();
        seen.sort();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn target_stream_cycles_through_permutations() {
        // 4 source batches of 2 draw 8 targets from a set of 5 per epoch.
        let s = BatchSchedule::unpaired(8, 5, 2, 0).unwrap();
        let draws: Vec<usize> = (0..5).flat_map(|e| s.epoch(e)).flat_map(|b| b.target).collect();
        for chunk in draws.chunks(5) {
            let mut c = chunk.to_vec();
            c.sort();
            assert_eq!(c, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn source_and_target_orders_are_independent() {
        let s = BatchSchedule::unpaired(20, 20, 1, 0).unwrap();
        let e = s.epoch(0);
        let src: Vec<usize> = e.iter().map(|b| b.source[0]).collect();
        let tgt: Vec<usize> = e.iter().map(|b| b.target[0]).collect();
        assert_ne!(src, tgt);
        assert_ne!(src, (0..20).collect::<Vec<_>>());
    }
}
