//! Communication accounting for simulated federated rounds.
//!
//! Only shared parameter segments ever cross the client/server boundary:
//! the ledger's entry point takes a shared-segment element count and a
//! segment label, so raw data tensors and projector parameters have no
//! representation here at all.

use crate::eval::CommRow;

/// Bytes per transmitted element (f64 payloads).
pub const BYTES_PER_ELEMENT: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Upload,
    Download,
}

impl Direction {
    fn as_str(self) -> &'static str {
        match self {
            Direction::Upload => "upload",
            Direction::Download => "download",
        }
    }
}

#[derive(Clone, Debug)]
struct LedgerRow {
    round: usize,
    client: usize,
    direction: Direction,
    segment: String,
    elements: u64,
}

/// Per-round upload/download element and byte counts, per client, plus the
/// round index of every aggregation event.
#[derive(Clone, Debug, Default)]
pub struct CommLedger {
    rows: Vec<LedgerRow>,
    agg_rounds: Vec<usize>,
}

impl CommLedger {
    pub fn new() -> Self {
        CommLedger::default()
    }

    /// Records one aggregation event: every client uploads its shared
    /// segment and downloads the broadcast mean.
    pub fn record_aggregation(
        &mut self,
        round: usize,
        clients: &[usize],
        segment: &str,
        elements_per_client: u64,
    ) {
        for &client in clients {
            self.rows.push(LedgerRow {
                round,
                client,
                direction: Direction::Upload,
                segment: segment.to_string(),
                elements: elements_per_client,
            });
            self.rows.push(LedgerRow {
                round,
                client,
                direction: Direction::Download,
                segment: segment.to_string(),
                elements: elements_per_client,
            });
        }
        self.agg_rounds.push(round);
    }

    /// Round index of each aggregation event, in order.
    pub fn aggregation_rounds(&self) -> &[usize] {
        &self.agg_rounds
    }

    pub fn aggregation_events_in_round(&self, round: usize) -> usize {
        self.agg_rounds.iter().filter(|&&r| r == round).count()
    }

    pub fn total_events(&self) -> usize {
        self.agg_rounds.len()
    }

    /// Cumulative bytes (uploads + downloads, all clients) through `round`.
    pub fn cumulative_bytes_through(&self, round: usize) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.round <= round)
            .map(|r| r.elements * BYTES_PER_ELEMENT)
            .sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.rows.iter().map(|r| r.elements * BYTES_PER_ELEMENT).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Every distinct segment label that crossed the boundary.
    pub fn segment_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.rows.iter().map(|r| r.segment.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn to_rows(&self) -> Vec<CommRow> {
        self.rows
            .iter()
            .map(|r| CommRow {
                round: r.round,
                client: r.client,
                direction: r.direction.as_str(),
                segment: r.segment.clone(),
                elements: r.elements,
                bytes: r.elements * BYTES_PER_ELEMENT,
            })
            .collect()
    }
}
