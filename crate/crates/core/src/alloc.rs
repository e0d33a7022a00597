//! Per-thread allocation metering.
//!
//! [`CountingAlloc`] forwards to the system allocator and keeps live-byte,
//! peak and largest-block counters in thread-local cells. A binary or test
//! target opts in with
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: ghostclip::alloc::CountingAlloc = ghostclip::alloc::CountingAlloc;
//! ```
//!
//! and then wraps the code of interest in [`measure`].

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct CountingAlloc;

thread_local! {
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
    static LARGEST: Cell<usize> = const { Cell::new(0) };
    static COUNT: Cell<usize> = const { Cell::new(0) };
}

fn on_alloc(size: usize) {
    let _ = LIVE.try_with(|live| {
        let now = live.get() + size as isize;
        live.set(now);
        let _ = PEAK.try_with(|p| p.set(p.get().max(now)));
    });
    let _ = LARGEST.try_with(|l| l.set(l.get().max(size)));
    let _ = COUNT.try_with(|c| c.set(c.get() + 1));
}

fn on_dealloc(size: usize) {
    let _ = LIVE.try_with(|live| live.set(live.get() - size as isize));
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc(layout);
        if !ptr.is_null() {
            on_alloc(layout.size());
        }
        ptr
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = System.alloc_zeroed(layout);
        if !ptr.is_null() {
            on_alloc(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        on_dealloc(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let out = System.realloc(ptr, layout, new_size);
        if !out.is_null() {
            on_dealloc(layout.size());
            on_alloc(new_size);
        }
        out
    }
}

/// Allocation activity of the current thread during one [`measure`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AllocStats {
    /// Highest live byte count reached, relative to the live bytes at entry.
    pub peak_bytes: usize,
    /// Largest single block requested.
    pub largest_bytes: usize,
    pub allocations: usize,
    /// Live bytes at exit minus live bytes at entry (clamped at zero).
    pub retained_bytes: usize,
}

impl AllocStats {
    pub fn peak_reals(&self) -> usize {
        self.peak_bytes.div_ceil(std::mem::size_of::<f64>())
    }

    pub fn largest_reals(&self) -> usize {
        self.largest_bytes.div_ceil(std::mem::size_of::<f64>())
    }
}

/// Runs `f` and reports the allocations it made on this thread. All zeros when
/// [`CountingAlloc`] is not the global allocator.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    let base = LIVE.with(Cell::get);
    let outer_peak = PEAK.with(|p| p.replace(base));
    let outer_largest = LARGEST.with(|l| l.replace(0));
    let count0 = COUNT.with(Cell::get);

    let out = f();

    let live = LIVE.with(Cell::get);
    let peak = PEAK.with(Cell::get);
    let largest = LARGEST.with(Cell::get);
    PEAK.with(|p| p.set(outer_peak.max(peak)));
    LARGEST.with(|l| l.set(outer_largest.max(largest)));
    let stats = AllocStats {
        peak_bytes: (peak - base).max(0) as usize,
        largest_bytes: largest,
        allocations: COUNT.with(Cell::get) - count0,
        retained_bytes: (live - base).max(0) as usize,
    };
    (out, stats)
}

/// Whether [`CountingAlloc`] is installed as the global allocator.
pub fn is_installed() -> bool {
    let (_, stats) = measure(|| std::hint::black_box(Vec::<u8>::with_capacity(64)));
    stats.allocations > 0
}
