// Fixed number of updates at a fixed budget across sampling rates: larger
// batches see less effective noise and a higher signal-to-noise ratio.

use ghostclip::harness::{snr_sweep, RunConfig, TaskConfig};

pub fn run() -> ghostclip::Result<()> {
    let base = RunConfig {
        task: TaskConfig {
            n: 4096,
            eval_n: 512,
            ..TaskConfig::default()
        },
        learning_rate: 0.01,
        ..RunConfig::default()
    };
    let sweep = snr_sweep(&base, &[0.005, 0.02, 0.1], 60, &[0, 1])?;
    println!("{:>7} {:>10} {:>10} {:>8} {:>8}", "q", "σ", "σ_eff", "r̄", "loss");
    for r in &sweep.rows {
        println!(
            "{:>7} {:>10.4} {:>10.2} {:>8.4} {:>8.4}",
            r.q,
            r.sigma,
            r.sigma_eff,
            r.median_rbar(),
            r.median_loss()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
