//! Shuffle buffer over one or more activation sources.
//!
//! Policy: fill to capacity, permute, drain batches until the buffered row
//! count falls to the refill threshold, top the buffer up again and permute
//! the whole buffer once more. When every source is exhausted the remainder
//! is drained, the final batch possibly short, so a full pass yields each
//! stored row exactly once.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::{ActivationBatch, ActivationReader};

/// Anything that can hand out rows of a fixed width.
pub trait RowSource {
    fn d(&self) -> usize;
    /// Appends up to `max_rows` rows to `out`, returning the count; 0 means
    /// the source is exhausted.
    fn next_rows(&mut self, max_rows: usize, out: &mut Vec<f32>) -> Result<usize>;
}

impl<R: Read> RowSource for ActivationReader<R> {
    fn d(&self) -> usize {
        self.header().d as usize
    }

    fn next_rows(&mut self, max_rows: usize, out: &mut Vec<f32>) -> Result<usize> {
        self.read_rows(max_rows, out)
    }
}

/// An in-memory batch read front to back.
#[derive(Debug, Clone)]
pub struct MemoryRows {
    batch: ActivationBatch,
    pos: usize,
}

impl MemoryRows {
    pub fn new(batch: ActivationBatch) -> Self {
        Self { batch, pos: 0 }
    }
}

impl RowSource for MemoryRows {
    fn d(&self) -> usize {
        self.batch.d()
    }

    fn next_rows(&mut self, max_rows: usize, out: &mut Vec<f32>) -> Result<usize> {
        let take = max_rows.min(self.batch.n() - self.pos);
        let d = self.batch.d();
        out.extend_from_slice(&self.batch.as_slice()[self.pos * d..(self.pos + take) * d]);
        self.pos += take;
        Ok(take)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleBuffer {
    /// Buffer size in rows.
    pub capacity: usize,
    /// Refill once the buffered fraction drops to this value, in (0, 1].
    pub refill_threshold: f64,
    pub seed: u64,
}

impl Default for ShuffleBuffer {
    fn default() -> Self {
        Self {
            capacity: 262_144,
            refill_threshold: 0.5,
            seed: 0,
        }
    }
}

pub struct ShuffledStream<S> {
    sources: VecDeque<S>,
    d: usize,
    buffer: Vec<f32>,
    capacity: usize,
    threshold_rows: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    exhausted: bool,
    refills: usize,
}

impl ShuffledStream<ActivationReader<std::io::BufReader<std::fs::File>>> {
    /// Opens every file up front so dimension mismatches surface before any
    /// batch is produced.
    pub fn open<P: AsRef<Path>>(
        paths: &[P],
        buffer: ShuffleBuffer,
        batch_size: usize,
    ) -> Result<Self> {
        let readers = paths
            .iter()
            .map(ActivationReader::open)
            .collect::<Result<Vec<_>>>()?;
        Self::new(readers, buffer, batch_size)
    }
}

impl<S: RowSource> ShuffledStream<S> {
    pub fn new(sources: Vec<S>, buffer: ShuffleBuffer, batch_size: usize) -> Result<Self> {
        let d = sources
            .first()
            .ok_or_else(|| Error::invalid("shuffle stream needs at least one source"))?
            .d();
        if let Some(bad) = sources.iter().find(|s| s.d() != d) {
            return Err(Error::DimensionMismatch {
                what: "source dimension",
                expected: d,
                found: bad.d(),
            });
        }
        if batch_size == 0 || buffer.capacity < batch_size {
            return Err(Error::invalid(format!(
                "buffer capacity {} must be at least the batch size {batch_size} (and positive)",
                buffer.capacity
            )));
        }
        if !(buffer.refill_threshold > 0.0 && buffer.refill_threshold <= 1.0) {
            return Err(Error::invalid("refill threshold must lie in (0, 1]"));
        }
        let threshold_rows = (buffer.refill_threshold * buffer.capacity as f64).floor() as usize;
        Ok(Self {
            sources: sources.into(),
            d,
            buffer: Vec::with_capacity(buffer.capacity * d),
            capacity: buffer.capacity,
            threshold_rows,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(buffer.seed),
            exhausted: false,
            refills: 0,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Number of refill events so far (each followed by a re-permutation).
    pub fn refills(&self) -> usize {
        self.refills
    }

    fn buffered(&self) -> usize {
        self.buffer.len() / self.d
    }

    fn refill(&mut self) -> Result<()> {
        let mut added = 0;
        while !self.exhausted && self.buffered() < self.capacity {
            let Some(src) = self.sources.front_mut() else {
                self.exhausted = true;
                break;
            };
            let want = self.capacity - self.buffer.len() / self.d;
            let got = src.next_rows(want, &mut self.buffer)?;
            if got == 0 {
                self.sources.pop_front();
            }
            added += got;
        }
        if added > 0 {
            self.permute();
            self.refills += 1;
        }
        Ok(())
    }

    fn permute(&mut self) {
        let d = self.d;
        let mut order: Vec<usize> = (0..self.buffered()).collect();
        order.shuffle(&mut self.rng);
        let mut next = Vec::with_capacity(self.buffer.capacity());
        for i in order {
            next.extend_from_slice(&self.buffer[i * d..(i + 1) * d]);
        }
        self.buffer = next;
    }

    fn next_batch(&mut self) -> Result<Option<ActivationBatch>> {
        let buffered = self.buffered();
        if !self.exhausted && (buffered <= self.threshold_rows || buffered < self.batch_size) {
            self.refill()?;
        }
        let buffered = self.buffered();
        if buffered == 0 {
            return Ok(None);
        }
        let take = self.batch_size.min(buffered);
        let start = (buffered - take) * self.d;
        let rows = self.buffer.split_off(start);
        ActivationBatch::new(rows, take, self.d).map(Some)
    }
}

impl<S: RowSource> Iterator for ShuffledStream<S> {
    type Item = Result<ActivationBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_batch() {
            Ok(b) => b.map(Ok),
            Err(e) => {
                self.exhausted = true;
                self.buffer.clear();
                Some(Err(e))
            }
        }
    }
}
