// Loss scaling: clipping by `K·C` and unscaling after the noise keeps the
// update identical to `K = 1`; clipping the scaled gradients by `C` does not.

use ghostclip::clipping::ClippingMode;
use ghostclip::model::{ModelSpec, SeqBatch, SeqModel};
use ghostclip::optim::{scaled_privatized_step, LossScale, NoiseSpec, ScaleRecipe};
use ghostclip::tensor::SeededRng;

pub fn run() -> ghostclip::Result<()> {
    let mut rng = SeededRng::new(5);
    let spec = ModelSpec::standard(40, 8, &[8], 3, true)?;
    let model = SeqModel::init(spec, &mut rng);
    let ids = (0..16 * 10).map(|_| rng.below(40)).collect();
    let labels = (0..16).map(|_| rng.below(3)).collect();
    let batch = SeqBatch::new(ids, labels, 10)?;
    let spec = NoiseSpec::new(1.0, 0.8, 16)?;

    let step = |k: f64, recipe| {
        scaled_privatized_step(
            &model,
            &batch,
            &spec,
            ClippingMode::Ghost,
            LossScale::new(k)?,
            recipe,
            &mut SeededRng::new(11),
        )
    };
    let base = step(1.0, ScaleRecipe::Consistent)?.grad;
    for k in [2.0, 16.0, 1000.0] {
        let good = step(k, ScaleRecipe::Consistent)?.grad;
        let bad = step(k, ScaleRecipe::UnscaledThreshold)?.grad;
        let dist = |v: &[f64]| v.iter().zip(&base).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!(
            "K = {k:>6}: consistent ‖Δ‖ = {:.2e}, unscaled threshold ‖Δ‖ = {:.2e}",
            dist(&good),
            dist(&bad)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
