//! FIFO replay of fixed-length trajectory windows.

use std::collections::VecDeque;

use rand::Rng;

use crate::worldmodel::Window;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    windows: VecDeque<Window>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            windows: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends a window, evicting the oldest one at capacity.
    pub fn add(&mut self, window: Window) {
        if self.windows.len() == self.capacity {
            self.windows.pop_front();
        }
        self.windows.push_back(window);
    }

    pub fn get(&self, k: usize) -> Option<&Window> {
        self.windows.get(k)
    }

    /// `n` windows drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Window>> {
        if self.windows.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n)
            .map(|_| &self.windows[rng.random_range(0..self.windows.len())])
            .collect())
    }
}
