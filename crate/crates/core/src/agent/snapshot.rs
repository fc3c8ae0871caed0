use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::ballistics::BallParams;
use crate::sqp::SqpStatus;
use crate::stage_ocp::{horizon, StageControl, StageState};

/// A solved plan, decodable over `[x0.t, t_f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSnapshot {
    pub x0: StageState,
    pub controls: Vec<StageControl>,
    pub t_f: f64,
    pub status: SqpStatus,
    pub ball: BallParams,
    pub objective: f64,
    pub seqno: u64,
}

impl PlanSnapshot {
    /// Whether the snapshot is internally consistent.
    pub fn is_consistent(&self) -> bool {
        (self.x0.t + horizon(&self.controls) - self.t_f).abs() <= 1e-12 * self.t_f.abs().max(1.0)
    }
}

#[derive(Debug, Default)]
struct CellState {
    snapshot: Option<Arc<PlanSnapshot>>,
    stale: bool,
    next_seqno: u64,
    epoch: u64,
}

/// Single-writer, many-reader cell with whole-snapshot replacement.
#[derive(Debug, Default)]
pub struct SnapshotCell {
    state: Mutex<CellState>,
}

impl SnapshotCell {
    pub fn new() -> Self {
        Self::default()
    }

    /// Latest snapshot and whether the last solve after it failed.
    pub fn read(&self) -> (Option<Arc<PlanSnapshot>>, bool) {
        let state = self.state.lock().expect("snapshot lock");
        (state.snapshot.clone(), state.stale)
    }

    pub fn epoch(&self) -> u64 {
        self.state.lock().expect("snapshot lock").epoch
    }

    /// Publishes a plan computed for `epoch`; plans for older epochs are dropped.
    pub fn publish(&self, epoch: u64, mut snapshot: PlanSnapshot) -> Option<u64> {
        let mut state = self.state.lock().expect("snapshot lock");
        if state.epoch != epoch {
            return None;
        }
        state.next_seqno += 1;
        snapshot.seqno = state.next_seqno;
        state.snapshot = Some(Arc::new(snapshot));
        state.stale = false;
        Some(state.next_seqno)
    }

    pub fn mark_stale(&self, epoch: u64) {
        let mut state = self.state.lock().expect("snapshot lock");
        if state.epoch == epoch {
            state.stale = true;
        }
    }

    /// Drops the current plan and starts a new epoch.
    pub fn clear(&self) -> u64 {
        let mut state = self.state.lock().expect("snapshot lock");
        state.snapshot = None;
        state.stale = false;
        state.epoch += 1;
        state.epoch
    }
}
