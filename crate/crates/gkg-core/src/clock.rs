//! Monotonic time source abstraction.
//!
//! The core crate never reads a real clock; operations that report elapsed
//! time take a [`Clock`] so the std layer can inject a monotonic source while
//! training and tests stay deterministic with [`NullClock`].

/// Monotonic nanosecond counter.
pub trait Clock {
    fn now_ns(&self) -> u64;
}

/// Clock that always reads zero; keeps deterministic paths free of wall time.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullClock;

impl Clock for NullClock {
    fn now_ns(&self) -> u64 {
        0
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now_ns(&self) -> u64 {
        (**self).now_ns()
    }
}
