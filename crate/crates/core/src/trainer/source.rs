use crate::error::Result;
use crate::store::{ActivationBatch, RowSource, ShuffledStream, SyntheticGenerator};

/// Anything the training loop can pull batches from.
pub trait DataSource {
    fn d(&self) -> usize;

    /// Up to `rows` rows; fewer only at the end of the data, `None` once
    /// nothing is left.
    fn next_batch(&mut self, rows: usize) -> Result<Option<ActivationBatch>>;
}

impl DataSource for SyntheticGenerator {
    fn d(&self) -> usize {
        SyntheticGenerator::d(self)
    }

    fn next_batch(&mut self, rows: usize) -> Result<Option<ActivationBatch>> {
        self.sample(rows).map(Some)
    }
}

impl<S: DataSource + ?Sized> DataSource for Box<S> {
    fn d(&self) -> usize {
        (**self).d()
    }

    fn next_batch(&mut self, rows: usize) -> Result<Option<ActivationBatch>> {
        (**self).next_batch(rows)
    }
}

/// Adapts a [`ShuffledStream`] to arbitrary request sizes.
pub struct StreamSource<S> {
    stream: ShuffledStream<S>,
    carry: Vec<f32>,
}

impl<S: RowSource> StreamSource<S> {
    pub fn new(stream: ShuffledStream<S>) -> Self {
        Self {
            stream,
            carry: Vec::new(),
        }
    }
}

impl<S: RowSource> DataSource for StreamSource<S> {
    fn d(&self) -> usize {
        self.stream.d()
    }

    fn next_batch(&mut self, rows: usize) -> Result<Option<ActivationBatch>> {
        let d = self.stream.d();
        while self.carry.len() < rows * d {
            match self.stream.next() {
                Some(batch) => self.carry.extend_from_slice(batch?.as_slice()),
                None => break,
            }
        }
        if self.carry.is_empty() {
            return Ok(None);
        }
        let take = rows.min(self.carry.len() / d);
        let rest = self.carry.split_off(take * d);
        let data = std::mem::replace(&mut self.carry, rest);
        ActivationBatch::new(data, take, d).map(Some)
    }
}
