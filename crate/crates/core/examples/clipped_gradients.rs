// Clipped per-example gradient sums under every clipping mode, plus the
// analytic memory ledger for each.

use ghostclip::clipping::{clipped_sum_scaled, mem_cost, ClippingMode};
use ghostclip::model::{ModelSpec, SeqBatch, SeqModel};
use ghostclip::tensor::SeededRng;

pub fn run() -> ghostclip::Result<()> {
    let mut rng = SeededRng::new(3);
    let (vocab, t, b) = (1000, 24, 8);
    let spec = ModelSpec::standard(vocab, 32, &[16], 4, true)?;
    let model = SeqModel::init(spec.clone(), &mut rng);
    let ids = (0..b * t).map(|_| rng.below(vocab)).collect();
    let labels = (0..b).map(|_| rng.below(4)).collect();
    let batch = SeqBatch::new(ids, labels, t)?;

    let fwd = model.forward(&batch)?;
    println!("mean loss {:.5} over {b} sequences of length {t}", fwd.losses().mean());
    let threshold = 0.5;
    let mut reference: Option<Vec<f64>> = None;
    for mode in ClippingMode::ALL {
        let out = clipped_sum_scaled(&fwd, threshold, mode, 1.0)?;
        let norms = out.norms.norms();
        let diff = reference.as_ref().map_or(0.0, |r| {
            r.iter().zip(&out.sum).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        });
        println!(
            "{:<10} norms [{:.3} .. {:.3}], clipped {}/{b}, max |Δ| vs naive {diff:.2e}",
            mode.name(),
            norms.iter().copied().fold(f64::INFINITY, f64::min),
            norms.iter().copied().fold(0.0, f64::max),
            out.factors.clipped_count(),
        );
        reference.get_or_insert(out.sum);
    }

    println!("transient reals for the norm pass at B = {b}:");
    let dims = spec.param_layer_dims(t);
    for mode in ClippingMode::ALL {
        let ledger = mem_cost(&dims, b, mode);
        println!("  {:<10} peak {}", mode.name(), ledger.peak);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
