//! Accountant queries rendered as tables.

use crate::accountant::{
    default_orders, dyadic_grid, epsilon_with, gdp_clt_epsilon, solve_sigma_with, sqrt_rule_check, Conversion,
    PrivacyBudget, SamplingPlan,
};
use crate::error::Result;

use super::report::CsvTable;

/// `ε` spent by `S` steps at noise `σ`, with the order that attains it and the
/// CLT estimate for comparison.
pub fn epsilon_table(sigma: f64, plan: SamplingPlan, delta: f64, conversion: Conversion) -> Result<CsvTable> {
    let rdp = epsilon_with(sigma, plan, delta, &default_orders(), conversion)?;
    let gdp = gdp_clt_epsilon(sigma, plan.q, plan.steps, delta)?;
    let mut t = CsvTable::new(&[
        "sigma",
        "q",
        "steps",
        "delta",
        "epsilon_rdp",
        "order",
        "epsilon_gdp_clt",
    ]);
    t.push(vec![
        sigma.into(),
        plan.q.into(),
        plan.steps.into(),
        delta.into(),
        rdp.epsilon.into(),
        rdp.order.into(),
        gdp.into(),
    ]);
    t.note("conversion", conversion.to_string());
    Ok(t)
}

/// Smallest `σ` meeting the budget.
pub fn sigma_table(budget: PrivacyBudget, plan: SamplingPlan, conversion: Conversion) -> Result<CsvTable> {
    let r = solve_sigma_with(budget, plan, conversion)?;
    let gdp = gdp_clt_epsilon(r.sigma, plan.q, plan.steps, budget.delta)?;
    let mut t = CsvTable::new(&[
        "epsilon",
        "delta",
        "q",
        "steps",
        "sigma",
        "achieved_epsilon",
        "sigma_eff",
        "epsilon_gdp_clt",
    ]);
    t.push(vec![
        budget.epsilon.into(),
        budget.delta.into(),
        plan.q.into(),
        plan.steps.into(),
        r.sigma.into(),
        r.achieved_epsilon.into(),
        (r.sigma / plan.q).into(),
        gdp.into(),
    ]);
    t.note("conversion", conversion.to_string());
    t.note("bracket_width", r.bracket_width);
    t.note("hit_lower_bound", r.hit_lower_bound.to_string());
    Ok(t)
}

/// Numerically calibrated `σ` against the fitted `c·√q` over `q = 2^-k`.
pub fn sweep_table(budget: PrivacyBudget, epochs: u64, max_exp: i32) -> Result<CsvTable> {
    let table = sqrt_rule_check(budget, epochs, &dyadic_grid(max_exp))?;
    let mut t = CsvTable::new(&["q", "log2_q", "steps", "sigma", "sqrt_rule", "residual", "in_fit_range"]);
    for r in &table.rows {
        t.push(vec![
            r.q.into(),
            r.q.log2().into(),
            r.steps.into(),
            r.sigma.into(),
            r.predicted.into(),
            r.residual.into(),
            r.in_fit_range.to_string().into(),
        ]);
    }
    t.note("c", table.c);
    t.note("epsilon", budget.epsilon);
    t.note("delta", budget.delta);
    t.note("epochs", epochs);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_gaussian() {
        let plan = SamplingPlan::new(1.0, 1).unwrap();
        let t = epsilon_table(1.0, plan, 1e-5, Conversion::Classic).unwrap();
        let eps = t.column("epsilon_rdp").unwrap()[0];
        assert!((eps - 5.3026).abs() < 1e-3);
        assert_eq!(t.column("order").unwrap()[0], 6.0);
    }

    #[test]
    fn sigma_reference() {
        let plan = SamplingPlan::new(0.02435, 410).unwrap();
        let budget = PrivacyBudget::new(8.0, 1.19e-5).unwrap();
        let t = sigma_table(budget, plan, Conversion::Classic).unwrap();
        // 50-digit reference accountant.
        assert!((t.column("sigma").unwrap()[0] - 0.750_832_0).abs() < 1e-3);
    }
}
