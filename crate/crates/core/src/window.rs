//! Discrete tick windows and the per-step window algebra.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;

/// A tick on the simulation time axis. Ticks before 0 only appear in
/// lag-shifted input windows.
pub type Tick = i64;

/// Half-open tick interval `[lo, hi)`.
///
/// Serialized as a two-element array `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(Tick, Tick)", into = "(Tick, Tick)")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[cfg_attr(feature = "schema", schemars(with = "(Tick, Tick)"))]
pub struct TickWindow {
    pub lo: Tick,
    pub hi: Tick,
}

impl From<(Tick, Tick)> for TickWindow {
    fn from((lo, hi): (Tick, Tick)) -> Self {
        Self { lo, hi }
    }
}

impl From<TickWindow> for (Tick, Tick) {
    fn from(w: TickWindow) -> Self {
        (w.lo, w.hi)
    }
}

impl TickWindow {
    pub const fn new(lo: Tick, hi: Tick) -> Self {
        Self { lo, hi }
    }

    pub const fn len(&self) -> u64 {
        if self.hi > self.lo {
            (self.hi - self.lo) as u64
        } else {
            0
        }
    }

    pub const fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub const fn contains(&self, t: Tick) -> bool {
        self.lo <= t && t < self.hi
    }

    /// `other ⊆ self`. The empty window is contained in everything.
    pub const fn contains_window(&self, other: &TickWindow) -> bool {
        other.is_empty() || (self.lo <= other.lo && other.hi <= self.hi)
    }

    pub const fn intersects(&self, other: &TickWindow) -> bool {
        self.lo < other.hi && other.lo < self.hi && !self.is_empty() && !other.is_empty()
    }

    pub fn intersection(&self, other: &TickWindow) -> Option<TickWindow> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(TickWindow { lo, hi })
    }

    /// Moves both bounds by `by` ticks.
    pub const fn shifted(&self, by: Tick) -> TickWindow {
        TickWindow { lo: self.lo + by, hi: self.hi + by }
    }

    /// The part of the window at or after tick 0.
    pub fn clamp_nonnegative(&self) -> Option<TickWindow> {
        self.intersection(&TickWindow { lo: 0, hi: Tick::MAX })
    }

    pub fn ticks(&self) -> std::ops::Range<Tick> {
        self.lo..self.hi
    }
}

impl fmt::Display for TickWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.lo, self.hi)
    }
}

/// Input and output windows of one execution step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepWindows {
    /// `None` for source models.
    pub input: Option<TickWindow>,
    pub output: TickWindow,
}

/// Windows of execution step `step` for `model`.
///
/// Both windows start at `step * shift`; the input window is absent when the
/// actor is a source.
pub fn step_windows(model: &ModelSpec, step: u64, is_source: bool) -> StepWindows {
    let start = (step * model.shift) as Tick;
    let output = TickWindow::new(start, start + model.output_scope.window as Tick);
    let input = (!is_source).then(|| TickWindow::new(start, start + model.input_scope.window as Tick));
    StepWindows { input, output }
}
