//! Shared id and record types used across the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Dense user index assigned at ingest time (order of first appearance).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct UserId(pub u32);

/// Dense item index assigned at ingest time (order of first appearance).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One observed user-item event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
}

/// A (user, item) pair with a binary training label: 1 for an observed
/// interaction, 0 for a sampled negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledExample {
    pub user: UserId,
    pub item: ItemId,
    pub label: bool,
}
