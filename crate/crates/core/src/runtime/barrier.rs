use std::sync::{Condvar, Mutex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("counter barrier incremented past its target {target}")]
pub struct BarrierOverflow {
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("counter barrier cancelled at {count} of {target}")]
pub struct BarrierCancelled {
    pub count: usize,
    pub target: usize,
}

#[derive(Debug, Default)]
struct State {
    count: usize,
    cancelled: bool,
}

/// Completion counter a host waits on until every task of a parallel
/// section has finished.
#[derive(Debug)]
pub struct CounterBarrier {
    target: usize,
    state: Mutex<State>,
    changed: Condvar,
}

impl CounterBarrier {
    pub fn new(target: usize) -> Self {
        assert!(target > 0, "barrier target must be positive");
        Self {
            target,
            state: Mutex::new(State::default()),
            changed: Condvar::new(),
        }
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn count(&self) -> usize {
        self.state.lock().expect("barrier lock").count
    }

    /// Records one completion; returns the new count.
    pub fn increment(&self) -> Result<usize, BarrierOverflow> {
        let mut st = self.state.lock().expect("barrier lock");
        if st.count >= self.target {
            return Err(BarrierOverflow {
                target: self.target,
            });
        }
        st.count += 1;
        if st.count == self.target {
            self.changed.notify_all();
        }
        Ok(st.count)
    }

    /// Blocks until the count reaches the target or the barrier is cancelled.
    pub fn wait(&self) -> Result<(), BarrierCancelled> {
        let mut st = self.state.lock().expect("barrier lock");
        loop {
            if st.count == self.target {
                return Ok(());
            }
            if st.cancelled {
                return Err(BarrierCancelled {
                    count: st.count,
                    target: self.target,
                });
            }
            st = self.changed.wait(st).expect("barrier lock");
        }
    }

    /// Releases waiters without the target being met.
    pub fn cancel(&self) {
        self.state.lock().expect("barrier lock").cancelled = true;
        self.changed.notify_all();
    }
}
