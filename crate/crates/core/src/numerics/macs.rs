//! Per-thread multiply-accumulate counters.
//!
//! Kernels report the MACs they actually execute in the forward pass.
//! Backward passes are not counted.

use std::cell::Cell;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MacKind {
    /// Linear projections and feed-forward layers.
    Dense,
    /// Depthwise and pointwise convolution.
    Conv,
    /// Attention score and value-mixing kernels.
    Attention,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCounts {
    pub dense: u64,
    pub conv: u64,
    pub attention: u64,
}

impl MacCounts {
    pub fn total(&self) -> u64 {
        self.dense + self.conv + self.attention
    }

    fn minus(self, earlier: MacCounts) -> MacCounts {
        MacCounts {
            dense: self.dense - earlier.dense,
            conv: self.conv - earlier.conv,
            attention: self.attention - earlier.attention,
        }
    }
}

thread_local! {
    static COUNTS: Cell<MacCounts> = const { Cell::new(MacCounts { dense: 0, conv: 0, attention: 0 }) };
    static KIND: Cell<MacKind> = const { Cell::new(MacKind::Dense) };
}

/// Adds `n` MACs under the kind currently in scope.
pub fn record(n: u64) {
    record_as(KIND.with(|k| k.get()), n);
}

pub fn record_as(kind: MacKind, n: u64) {
    COUNTS.with(|c| {
        let mut v = c.get();
        match kind {
            MacKind::Dense => v.dense += n,
            MacKind::Conv => v.conv += n,
            MacKind::Attention => v.attention += n,
        }
        c.set(v);
    });
}

/// Attributes MACs recorded by generic kernels (matmul) inside `f` to `kind`.
pub fn with_kind<R>(kind: MacKind, f: impl FnOnce() -> R) -> R {
    let prev = KIND.with(|k| k.replace(kind));
    let out = f();
    KIND.with(|k| k.set(prev));
    out
}

/// Runs `f` and returns the MACs it executed on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacCounts) {
    let before = COUNTS.with(|c| c.get());
    let out = f();
    let after = COUNTS.with(|c| c.get());
    (out, after.minus(before))
}
