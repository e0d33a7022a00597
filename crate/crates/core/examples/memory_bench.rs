// Largest batch under a memory budget for each clipping mode, using the
// counting allocator.

use ghostclip::alloc::CountingAlloc;
use ghostclip::harness::{bench, BenchConfig};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

pub fn run() -> ghostclip::Result<()> {
    let cfg = BenchConfig {
        dims: vec!["4096:32:32".parse()?, "512:32:64".parse()?],
        float_budget: 1 << 21,
        max_batch_cap: 1 << 10,
        timing_reps: 1,
        ..BenchConfig::default()
    };
    let result = bench(&cfg)?;
    print!("{}", result.table.to_text());
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
