// Per-example gradient norms of a linear layer and an embedding table from
// Gram matrices, checked against the materialized gradients.

use ghostclip::clipping::{ghost_norm_embedding, ghost_norm_linear};
use ghostclip::model::per_example_grad_linear;
use ghostclip::tensor::{gaussian_noise, DenseTensor, SeededRng};

pub fn run() -> ghostclip::Result<()> {
    let mut rng = SeededRng::new(7);
    let (t, d, p) = (12, 300, 200);
    let a = gaussian_noise(&[t, d], 1.0, &mut rng)?;
    let g = gaussian_noise(&[t, p], 1.0, &mut rng)?;

    let full = per_example_grad_linear(&a, &g)?;
    let direct = full.data().iter().map(|x| x * x).sum::<f64>();
    let ghost = ghost_norm_linear(&a, &g)?;
    println!("linear  T={t} d={d} p={p}");
    println!("  materialized p×d gradient: {} reals, ‖G‖² = {direct:.6}", full.len());
    println!("  two T×T Grams:             {} reals, ‖G‖² = {ghost:.6}", 2 * t * t);

    // Repeated tokens exercise the Boolean Gram.
    let vocab = 50;
    let ids = [3, 17, 3, 42, 17, 3, 8, 0, 49, 42, 3, 1];
    let g = gaussian_noise(&[ids.len(), 16], 1.0, &mut rng)?;
    let mut one_hot = DenseTensor::zeros(&[ids.len(), vocab]);
    for (s, &id) in ids.iter().enumerate() {
        one_hot.data_mut()[s * vocab + id] = 1.0;
    }
    let via_one_hot = ghost_norm_linear(&one_hot, &g)?;
    let boolean = ghost_norm_embedding(&ids, vocab, &g)?;
    println!("embedding V={vocab} with repeated ids {ids:?}");
    println!("  one-hot Gram {via_one_hot:.6}, Boolean Gram {boolean:.6}");
    assert!((via_one_hot - boolean).abs() <= 1e-12 * boolean);
    assert!((direct - ghost).abs() <= 1e-10 * direct);
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
