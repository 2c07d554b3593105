/// Tokens since each feature last fired.
///
/// A feature fires in a batch when it is in any input's active set, main
/// path or AuxK. It is dead once its counter reaches the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeadFeatureTracker {
    since_fired: Vec<u64>,
    window: u64,
}

impl DeadFeatureTracker {
    pub fn new(h: usize, window: u64) -> Self {
        Self {
            since_fired: vec![0; h],
            window,
        }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn since_fired(&self) -> &[u64] {
        &self.since_fired
    }

    /// Records one batch of `tokens` rows.
    pub fn observe(&mut self, fired: &[bool], tokens: u64) {
        debug_assert_eq!(fired.len(), self.since_fired.len());
        for (c, &f) in self.since_fired.iter_mut().zip(fired) {
            *c = if f { 0 } else { c.saturating_add(tokens) };
        }
    }

    pub fn is_dead(&self, j: usize) -> bool {
        self.since_fired[j] >= self.window
    }

    pub fn dead_mask(&self) -> Vec<bool> {
        (0..self.since_fired.len()).map(|j| self.is_dead(j)).collect()
    }

    pub fn dead_count(&self) -> usize {
        (0..self.since_fired.len()).filter(|&j| self.is_dead(j)).count()
    }

    pub fn dead_fraction(&self) -> f64 {
        self.dead_count() as f64 / self.since_fired.len() as f64
    }
}
