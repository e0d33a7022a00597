// DP-Adam on the synthetic sequence task, driven step by step through
// `DpTrainer`, then the same run through the config-driven harness.

use ghostclip::accountant::{solve_sigma, PrivacyBudget, SamplingPlan};
use ghostclip::clipping::ClippingMode;
use ghostclip::harness::train::{evaluate, train_on};
use ghostclip::harness::{gen_synthetic_task, BatchSpec, Duration, RunConfig, TaskConfig};
use ghostclip::model::{ModelSpec, SeqModel};
use ghostclip::optim::{DpTrainer, LossScale, NoiseSpec, OptimizerKind, ScaleRecipe, TrainerConfig};
use ghostclip::tensor::SeededRng;

pub fn run() -> ghostclip::Result<()> {
    let task_cfg = TaskConfig {
        n: 4096,
        eval_n: 1024,
        ..TaskConfig::default()
    };
    let task = gen_synthetic_task(&task_cfg)?;
    let (n, batch, epochs) = (task_cfg.n, 256, 3);
    let plan = SamplingPlan::from_dataset(n, batch, epochs)?;
    let budget = PrivacyBudget::with_auto_delta(3.0, n)?;
    let sigma = solve_sigma(budget, plan)?.sigma;
    println!("N = {n}, B = {batch}, S = {}, σ = {sigma:.4}", plan.steps);

    let spec = ModelSpec::standard(task_cfg.vocab, task_cfg.embed_dim, &[], task_cfg.classes, true)?;
    let rng = SeededRng::new(1);
    let model = SeqModel::init(spec, &mut rng.fork(0));
    let cfg = TrainerConfig {
        noise: NoiseSpec::new(0.1, sigma, batch)?,
        mode: ClippingMode::Ghost,
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        sampling_rate: plan.q,
        loss_scale: LossScale::ONE,
        recipe: ScaleRecipe::Consistent,
    };
    let mut trainer = DpTrainer::new(model, cfg, rng.fork(1))?;
    for s in 0..plan.steps {
        let rec = trainer.step(&task.train)?;
        if s % 12 == 0 {
            println!(
                "step {:>3}  |B| = {:>3}  loss {:.4}  r = {:.3}",
                rec.step, rec.batch_size, rec.batch_loss, rec.snr
            );
        }
    }
    let eval = evaluate(trainer.model(), &task.eval)?;
    println!(
        "from scratch: eval loss {:.4}, accuracy {:.3}",
        eval.loss, eval.accuracy
    );

    let run_cfg = RunConfig {
        task: task_cfg,
        batch: BatchSpec::Size(batch),
        duration: Duration::Epochs(epochs),
        learning_rate: 0.01,
        ..RunConfig::default()
    };
    let run = train_on(&run_cfg, &task)?;
    let s = &run.summary;
    println!(
        "harness (pretrained embedding): σ = {:.4}, ε spent {:.4}, eval accuracy {:.3}, teacher {:.3}",
        s.calibration.sigma, s.calibration.realized_epsilon, s.eval.accuracy, s.teacher_eval_accuracy
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
