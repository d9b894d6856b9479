//! Runtime op accounting. Ops report what they computed while a capture is
//! active on the current thread; nothing is recorded otherwise.

use std::cell::RefCell;

/// Work performed by one executed op.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpCost {
    /// Convolution: `macs` multiply-accumulates, `out_elems` output values
    /// (one bias add each when `bias`).
    Conv { macs: u64, out_elems: u64, bias: bool },
    /// Fully connected layer; `out_features` bias adds when `bias`.
    Linear {
        macs: u64,
        out_features: u64,
        bias: bool,
    },
    BatchNorm { elems: u64 },
    /// Rectifier-style activation over `elems` outputs.
    Activation { elems: u64 },
    /// Pooling over `in_elems` inputs.
    Pool { in_elems: u64 },
    /// Elementwise/indexing work (adds, scaling, gathers, sigmoid, loss).
    Elementwise { elems: u64 },
}

thread_local! {
    static RECORDER: RefCell<Option<Vec<OpCost>>> = const { RefCell::new(None) };
}

pub(crate) fn record(f: impl FnOnce() -> OpCost) {
    RECORDER.with(|r| {
        if let Some(log) = r.borrow_mut().as_mut() {
            log.push(f());
        }
    });
}

/// Runs `f` and returns every op it executed on this thread, in order.
pub fn capture<R>(f: impl FnOnce() -> R) -> (R, Vec<OpCost>) {
    let prev = RECORDER.with(|r| r.borrow_mut().replace(Vec::new()));
    let out = f();
    let log = RECORDER.with(|r| {
        let log = r.borrow_mut().take().unwrap_or_default();
        *r.borrow_mut() = prev;
        log
    });
    (out, log)
}
