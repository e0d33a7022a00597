// Rényi-DP accounting for Poisson-subsampled Gaussian steps: spent ε, noise
// calibration, the CLT estimate and the square-root rule.

use ghostclip::accountant::{
    default_orders, dyadic_grid, effective_noise_multiplier, epsilon, epsilon_with, gdp_clt_epsilon, solve_sigma,
    solve_sigma_with, sqrt_rule_check, Conversion, PrivacyBudget, SamplingPlan,
};

pub fn run() -> ghostclip::Result<()> {
    let n = 50_000;
    let plan = SamplingPlan::from_dataset(n, 256, 20)?;
    let delta = 1e-5;
    println!("q = {:.6}, S = {}", plan.q, plan.steps);

    for sigma in [0.8, 1.0, 1.5] {
        let classic = epsilon(sigma, plan, delta)?;
        let improved = epsilon_with(sigma, plan, delta, &default_orders(), Conversion::Improved)?;
        let gdp = gdp_clt_epsilon(sigma, plan.q, plan.steps, delta)?;
        println!(
            "σ = {sigma}: ε = {:.4} (α = {}), improved {:.4}, CLT estimate {gdp:.4}",
            classic.epsilon, classic.order, improved.epsilon
        );
    }

    let budget = PrivacyBudget::new(3.0, delta)?;
    let solved = solve_sigma(budget, plan)?;
    let loose = solve_sigma_with(budget, plan, Conversion::Improved)?;
    println!(
        "ε = 3: σ = {:.5} (spends {:.5}), improved conversion σ = {:.5}, σ_eff = {:.2}",
        solved.sigma,
        solved.achieved_epsilon,
        loose.sigma,
        effective_noise_multiplier(solved.sigma, plan.q)?
    );

    let table = sqrt_rule_check(budget, 20, &dyadic_grid(10))?;
    println!("σ ≈ c·√q with c = {:.4}", table.c);
    for r in &table.rows {
        println!(
            "  q = 2^{:<3} σ = {:>8.4}  c√q = {:>8.4}  residual {:>+7.1}%",
            r.q.log2().round(),
            r.sigma,
            r.predicted,
            100.0 * r.residual
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ghostclip::Result<()> {
    run()
}
