//! Outbound SMS queue standing in for the carrier network.

use serde::{Deserialize, Serialize};

use crate::messaging::OutboundMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeliveryState {
    Queued,
    Fetched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboxEntry {
    pub id: u64,
    pub line: String,
    pub message: OutboundMessage,
    pub state: DeliveryState,
}

/// A line handed to the channel by [`Outbox::drain`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub id: u64,
    pub line: String,
    pub state: DeliveryState,
}

/// Global FIFO; entries are fetched in queue order, each at most once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outbox {
    entries: Vec<OutboxEntry>,
    /// Index of the first entry still `Queued`.
    cursor: usize,
}

impl Outbox {
    pub fn push(&mut self, line: String, message: OutboundMessage) -> u64 {
        let id = self.entries.len() as u64 + 1;
        self.entries.push(OutboxEntry { id, line, message, state: DeliveryState::Queued });
        id
    }

    pub fn drain(&mut self, max: usize) -> Vec<Delivery> {
        let end = self.cursor.saturating_add(max).min(self.entries.len());
        let out = self.entries[self.cursor..end]
            .iter_mut()
            .map(|e| {
                e.state = DeliveryState::Fetched;
                Delivery { id: e.id, line: e.line.clone(), state: e.state }
            })
            .collect();
        self.cursor = end;
        out
    }

    pub fn entries(&self) -> &[OutboxEntry] {
        &self.entries
    }

    pub fn pending(&self) -> usize {
        self.entries.len() - self.cursor
    }
}
