//! Instance memory queue: bounded cache of observed and predicted frames.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{InstanceSet, RolloutConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMemoryQueue {
    frames: VecDeque<InstanceSet>,
    capacity: usize,
}

impl InstanceMemoryQueue {
    pub fn with_capacity(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        InstanceMemoryQueue {
            frames: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Capacity h + f + 1.
    pub fn for_rollout(config: &RolloutConfig) -> Self {
        Self::with_capacity(config.h + config.f + 1)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn oldest_index(&self) -> Option<i64> {
        self.frames.front().map(|f| f.frame_index)
    }

    pub fn newest_index(&self) -> Option<i64> {
        self.frames.back().map(|f| f.frame_index)
    }

    pub fn newest(&self) -> Option<&InstanceSet> {
        self.frames.back()
    }

    pub fn get(&self, index: i64) -> Option<&InstanceSet> {
        let first = self.oldest_index()?;
        if index < first {
            return None;
        }
        self.frames.get((index - first) as usize)
    }

    /// Append the next frame, evicting the oldest one when full.
    pub fn push(&mut self, frame: InstanceSet) -> Result<()> {
        if let Some(newest) = self.newest_index() {
            if frame.frame_index != newest + 1 {
                return Err(Error::NonContiguousFrame {
                    expected: newest + 1,
                    got: frame.frame_index,
                });
            }
        }
        self.frames.push_back(frame);
        if self.frames.len() > self.capacity {
            self.frames.pop_front();
        }
        Ok(())
    }

    /// Frames `t-m ..= t` in ascending order.
    pub fn window(&self, t: i64, m: usize) -> Result<Vec<&InstanceSet>> {
        let first = t - m as i64;
        (first..=t)
            .map(|i| {
                self.get(i).ok_or_else(|| Error::InsufficientHistory {
                    first,
                    last: t,
                    held: self.held(),
                })
            })
            .collect()
    }

    /// Like [`window`](Self::window) but repeats the oldest stored frame when
    /// history is short. Returns the number of padded entries.
    pub fn window_padded(&self, t: i64, m: usize) -> Result<(Vec<&InstanceSet>, usize)> {
        let oldest = self.oldest_index().ok_or_else(|| Error::InsufficientHistory {
            first: t - m as i64,
            last: t,
            held: self.held(),
        })?;
        if self.get(t).is_none() {
            return Err(Error::InsufficientHistory {
                first: t - m as i64,
                last: t,
                held: self.held(),
            });
        }
        let mut out = Vec::with_capacity(m + 1);
        let mut padded = 0;
        for i in t - m as i64..=t {
            if i < oldest {
                padded += 1;
                out.push(self.get(oldest).expect("oldest frame present"));
            } else {
                out.push(self.get(i).expect("contiguous frames"));
            }
        }
        Ok((out, padded))
    }

    pub fn iter(&self) -> impl Iterator<Item = &InstanceSet> {
        self.frames.iter()
    }

    fn held(&self) -> String {
        match (self.oldest_index(), self.newest_index()) {
            (Some(a), Some(b)) => format!("{a}..={b}"),
            _ => "nothing".into(),
        }
    }
}
