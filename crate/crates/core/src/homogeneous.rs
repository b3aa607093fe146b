//! Closed-form pricing and recruitment threshold for a single client type.
//!
//! With identical clients `(s, tau)` and `D = (T - T_th) / tau`, the optimal
//! price in slot `t < T_th` is
//!
//! ```text
//! p(t) = ( b^3 tau^3 D^2 r^(5 T_th - 5t - 6) (1 - r^2)^3 / (16 alpha^3 s (1 - r^(2 T_th))^3) )^(1/5)
//! ```
//!
//! which rises towards the recruitment deadline. The resulting cost is convex
//! in `T_th`, so the best threshold is found from the sign of its derivative
//! (see [`stationarity_residual`]) and a comparison of the two neighbouring
//! integers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    evaluate_schedule, iterations, ClientType, MarketParams, PriceSchedule, COST_TIE_TOL,
};
use crate::solve::{argmin_with_tol, bisect_increasing};

/// `4^(-4/5) + 4^(1/5)`, the constant shared by payment and accuracy terms at the optimum.
pub(crate) fn cost_constant() -> f64 {
    4f64.powf(-0.8) + 4f64.powf(0.2)
}

const ROOT_WIDTH_TOL: f64 = 1e-9;
const ROOT_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRegime {
    /// `tau >= psi_bar^(5/3)`: recruit for a single slot.
    HighTrainingTime,
    /// Interior root of the stationarity equation.
    LowTrainingTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdAnalysis {
    pub psi_bar: f64,
    pub regime: TrainingRegime,
    /// Real root of the stationarity equation (low regime only).
    pub root: Option<f64>,
    pub t_th_star: u32,
    pub cost: f64,
}

fn geometric_r2(r: f64, t_th: u32) -> f64 {
    (0..t_th).map(|i| r.powi(2 * i as i32)).sum()
}

/// Optimal dynamic prices for slots `0..T_th`.
///
/// Prices are clamped at `b (T - T_th)`; the clamp never binds when
/// `alpha >= 0.5`, `b >= 1`, `r >= 0.5` and `s/tau >= 1`, and clamped entries
/// are flagged in `cap_active` otherwise.
pub fn price_schedule(params: &MarketParams, ty: &ClientType, t_th: u32) -> Result<PriceSchedule> {
    let d = iterations(params, t_th, ty.tau)?;
    let MarketParams { alpha, b, r, .. } = *params;
    let cap = b * params.training_slots(t_th);
    let scale = b.powi(3) * ty.tau.powi(3) * d * d * (1.0 - r * r).powi(3)
        / (16.0 * alpha.powi(3) * ty.s * (1.0 - r.powi(2 * t_th as i32)).powi(3));

    let mut prices = Vec::with_capacity(t_th as usize);
    let mut capped = Vec::with_capacity(t_th as usize);
    for t in 0..t_th as i32 {
        let p = (scale * r.powi(5 * t_th as i32 - 5 * t - 6)).powf(0.2);
        capped.push(vec![p > cap]);
        prices.push(vec![p.min(cap)]);
    }
    Ok(PriceSchedule {
        prices,
        cap_active: capped,
    })
}

/// Expected data size at the end of recruitment under the optimal prices.
pub fn final_data_size(params: &MarketParams, ty: &ClientType, t_th: u32) -> Result<f64> {
    let d = iterations(params, t_th, ty.tau)?;
    let MarketParams { alpha, b, r, .. } = *params;
    let inner = alpha * ty.s * ty.s / (4.0 * b * ty.tau) * r * r * geometric_r2(r, t_th);
    Ok(d.powf(-0.6) * inner.powf(0.4))
}

/// Total expected cost `U` at threshold `t_th` under the optimal prices.
pub fn total_cost(params: &MarketParams, ty: &ClientType, t_th: u32) -> Result<f64> {
    params.check_threshold(t_th)?;
    let MarketParams { alpha, b, r, .. } = *params;
    let tau = ty.tau;
    let per_slot = tau / params.training_slots(t_th);
    let first = cost_constant()
        * (b * tau / (alpha * ty.s * ty.s * r * r)).powf(0.2)
        * ((1.0 - r * r) / (1.0 - r.powi(2 * t_th as i32))).powf(0.2)
        * per_slot.powf(0.2);
    Ok(first + per_slot)
}

/// Training-time classifier: `tau^(3/5) >= psi_bar` means the derivative of
/// the cost is already nonnegative at `T_th = 1`.
pub fn psi_bar(params: &MarketParams, ty: &ClientType) -> f64 {
    let MarketParams { alpha, b, r, .. } = *params;
    let m = f64::from(params.horizon) - 1.0;
    0.2 * (b / (alpha * ty.s * ty.s * r * r)).powf(0.2)
        * cost_constant()
        * (2.0 * r.ln().abs() * r * r / (1.0 - r * r) * m.powf(1.8) - m.powf(0.8))
}

/// Derivative of the cost with respect to a real-valued threshold; strictly
/// increasing on `[1, T)`.
pub fn stationarity_residual(params: &MarketParams, ty: &ClientType, t_th: f64) -> Result<f64> {
    let horizon = f64::from(params.horizon);
    if !(t_th >= 1.0 && t_th < horizon) {
        return Err(Error::Domain(format!(
            "threshold {t_th} outside [1, {horizon})"
        )));
    }
    let MarketParams { alpha, b, r, .. } = *params;
    let tau = ty.tau;
    let rest = horizon - t_th;
    let r2t = r.powf(2.0 * t_th);
    let base = b * tau * tau * (1.0 - r * r) / (alpha * ty.s * ty.s * r * r * (1.0 - r2t) * rest);
    Ok(
        0.2 * cost_constant() * base.powf(0.2) * (2.0 * r2t * r.ln() / (1.0 - r2t) + 1.0 / rest)
            + tau / (rest * rest),
    )
}

/// Pick the cheaper of `floor(root)` and `floor(root) + 1`, clipped to `[1, T-1]`.
pub(crate) fn integer_neighbours(root: f64, horizon: u32) -> Vec<u32> {
    let max = horizon - 1;
    let lo = (root.floor().max(1.0) as u32).min(max);
    let hi = (lo + 1).min(max);
    if lo == hi {
        vec![lo]
    } else {
        vec![lo, hi]
    }
}

/// Optimal integer recruitment threshold.
pub fn optimal_threshold(params: &MarketParams, ty: &ClientType) -> Result<ThresholdAnalysis> {
    params.check()?;
    let psi = psi_bar(params, ty);
    let max = params.horizon - 1;
    if psi <= 0.0 || ty.tau.powf(0.6) >= psi {
        return Ok(ThresholdAnalysis {
            psi_bar: psi,
            regime: TrainingRegime::HighTrainingTime,
            root: None,
            t_th_star: 1,
            cost: total_cost(params, ty, 1)?,
        });
    }

    let residual = |x: f64| stationarity_residual(params, ty, x).expect("x within [1, T-1]");
    let hi = f64::from(max);
    let root = if max == 1 || residual(hi) <= 0.0 {
        hi
    } else {
        bisect_increasing(residual, 1.0, hi, ROOT_WIDTH_TOL, ROOT_RESIDUAL_TOL)
    };

    let candidates = integer_neighbours(root, params.horizon);
    let costs = candidates
        .iter()
        .map(|&k| total_cost(params, ty, k))
        .collect::<Result<Vec<_>>>()?;
    let (idx, cost) = argmin_with_tol(costs, COST_TIE_TOL).expect("at least one candidate");
    Ok(ThresholdAnalysis {
        psi_bar: psi,
        regime: TrainingRegime::LowTrainingTime,
        root: Some(root),
        t_th_star: candidates[idx],
        cost,
    })
}

/// Best single flat price over the recruitment slots, capped at `b (T - T_th)`.
pub fn static_price(params: &MarketParams, ty: &ClientType, t_th: u32) -> Result<f64> {
    let d = iterations(params, t_th, ty.tau)?;
    let MarketParams { alpha, b, r, .. } = *params;
    let k = f64::from(t_th);
    let p = (d * d * b.powi(3) * ty.tau.powi(3) * (1.0 - r)
        / (16.0 * k * k * alpha.powi(3) * ty.s * r * (1.0 - r.powi(t_th as i32))))
    .powf(0.2);
    Ok(p.min(b * params.training_slots(t_th)))
}

/// The flat schedule built from [`static_price`].
pub fn static_schedule(params: &MarketParams, ty: &ClientType, t_th: u32) -> Result<PriceSchedule> {
    Ok(PriceSchedule::flat(
        static_price(params, ty, t_th)?,
        t_th as usize,
        1,
    ))
}

/// Threshold minimizing the evaluated cost of the flat schedule, by direct scan.
pub fn optimal_static_threshold(params: &MarketParams, ty: &ClientType) -> Result<(u32, f64)> {
    params.check()?;
    let single = [*ty];
    let costs = (1..params.horizon)
        .map(|k| Ok(evaluate_schedule(params, k, &static_schedule(params, ty, k)?, &single)?.total))
        .collect::<Result<Vec<_>>>()?;
    let (idx, cost) = argmin_with_tol(costs, COST_TIE_TOL)
        .ok_or_else(|| Error::InvalidParams("horizon must be at least 2".into()))?;
    Ok((idx as u32 + 1, cost))
}

/// Costate `lambda(t) = -(1/2) r^(T_th - t) D^(-1/2) B(T_th)^(-3/2)` of the
/// pricing problem, for `t` in `0..=T_th`. Diagnostic only.
pub fn costate(params: &MarketParams, ty: &ClientType, t_th: u32, t: u32) -> Result<f64> {
    if t > t_th {
        return Err(Error::Domain(format!("slot {t} beyond threshold {t_th}")));
    }
    let d = iterations(params, t_th, ty.tau)?;
    let data = final_data_size(params, ty, t_th)?;
    Ok(-0.5 * params.r.powi((t_th - t) as i32) * d.powf(-0.5) * data.powf(-1.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{evaluate_schedule, expected_path};

    fn base() -> (MarketParams, ClientType) {
        (MarketParams::baseline(10), ClientType::baseline())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn single_slot_price_and_data() {
        let (p, ty) = base();
        let s = price_schedule(&p, &ty, 1).unwrap();
        // 40.5^(1/5)
        assert!(rel(s.prices[0][0], 2.096_481_356_314_738) < 1e-12);
        assert!(!s.any_capped());
        let data = final_data_size(&p, &ty, 1).unwrap();
        assert!(rel(data, 0.058_235_593_230_964_94) < 1e-12);
    }

    #[test]
    fn total_cost_reference_values() {
        let (p, ty) = base();
        let expected = [
            (1, 1.276_453_910_382_023),
            (2, 1.257_940_624_737_546),
            (3, 1.287_302_482_655_453),
        ];
        for (t_th, u) in expected {
            assert!(
                rel(total_cost(&p, &ty, t_th).unwrap(), u) < 1e-12,
                "T_th={t_th}"
            );
        }
    }

    #[test]
    fn closed_form_agrees_with_evaluator() {
        let (p, ty) = base();
        for t_th in 1..10 {
            let s = price_schedule(&p, &ty, t_th).unwrap();
            let path = expected_path(&p, t_th, &s, &[ty]).unwrap();
            assert!(rel(path.final_data(), final_data_size(&p, &ty, t_th).unwrap()) < 1e-10);
            let cost = evaluate_schedule(&p, t_th, &s, &[ty]).unwrap();
            assert!(rel(cost.total, total_cost(&p, &ty, t_th).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn prices_rise_and_respect_cap() {
        let (p, ty) = base();
        let s = price_schedule(&p, &ty, 3).unwrap().first_column();
        assert!(s[0] < s[1] && s[1] < s[2]);
        assert!(s.iter().all(|&x| x <= 7.0));
    }

    #[test]
    fn clamp_flagged_outside_regime() {
        // slow, sparse arrivals push the last price above b (T - T_th)
        let p = MarketParams {
            alpha: 0.05,
            b: 1.0,
            r: 0.3,
            horizon: 4,
        };
        let ty = ClientType::single(0.1, 1.0);
        let s = price_schedule(&p, &ty, 3).unwrap();
        assert!(s.any_capped());
        assert!(s.max_price() <= 1.0);
        assert!(*s.cap_active.last().unwrap().first().unwrap());
    }

    #[test]
    fn range_errors() {
        let (p, ty) = base();
        assert!(price_schedule(&p, &ty, 0).is_err());
        assert!(final_data_size(&p, &ty, 10).is_err());
        assert!(total_cost(&p, &ty, 10).is_err());
        assert!(static_price(&p, &ty, 0).is_err());
        assert!(stationarity_residual(&p, &ty, 10.0).is_err());
    }

    #[test]
    fn psi_bar_at_two_slots() {
        let p = MarketParams::baseline(2);
        let ty = ClientType::baseline();
        let r: f64 = 0.5;
        let expected = 0.2
            * (1.0 / (0.5 * r * r)).powf(0.2)
            * cost_constant()
            * (2.0 * r.ln().abs() * r * r / (1.0 - r * r) - 1.0);
        assert!((psi_bar(&p, &ty) - expected).abs() < 1e-15);
        // T = 2 leaves only T_th = 1
        assert_eq!(optimal_threshold(&p, &ty).unwrap().t_th_star, 1);
    }

    #[test]
    fn psi_bar_grows_with_horizon() {
        let ty = ClientType::baseline();
        let values: Vec<f64> = [20, 50, 100, 200]
            .iter()
            .map(|&t| psi_bar(&MarketParams::baseline(t), &ty))
            .collect();
        assert!(values.iter().all(|&v| v > 0.0));
        assert!(values.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn residual_sign_at_one_matches_classifier() {
        for horizon in [3u32, 5, 10, 30] {
            for tau in [0.05, 0.3, 0.5, 1.0, 3.0, 20.0] {
                let p = MarketParams::baseline(horizon);
                let ty = ClientType::single(1.0, tau);
                let at_one = stationarity_residual(&p, &ty, 1.0).unwrap();
                let high = tau.powf(0.6) >= psi_bar(&p, &ty);
                assert_eq!(at_one >= 0.0, high, "T={horizon} tau={tau}");
                let last = stationarity_residual(&p, &ty, f64::from(horizon - 1)).unwrap();
                assert!(last > 0.0);
            }
        }
    }

    #[test]
    fn residual_is_increasing() {
        let (p, ty) = base();
        let xs: Vec<f64> = (0..=80).map(|i| 1.0 + i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| stationarity_residual(&p, &ty, x).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn residual_matches_finite_difference_of_cost() {
        // closed-form cost extended to real T_th
        let (p, ty) = base();
        let cost = |x: f64| {
            let r = p.r;
            let per = ty.tau / (10.0 - x);
            cost_constant()
                * (p.b * ty.tau / (p.alpha * r * r)).powf(0.2)
                * ((1.0 - r * r) / (1.0 - r.powf(2.0 * x))).powf(0.2)
                * per.powf(0.2)
                + per
        };
        for x in [1.5, 2.0, 3.7, 6.0, 8.5] {
            let h = 1e-5;
            let fd = (cost(x + h) - cost(x - h)) / (2.0 * h);
            let analytic = stationarity_residual(&p, &ty, x).unwrap();
            assert!((fd - analytic).abs() < 1e-6, "x={x}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn optimum_for_reference_setting() {
        let (p, ty) = base();
        let a = optimal_threshold(&p, &ty).unwrap();
        assert_eq!(a.regime, TrainingRegime::LowTrainingTime);
        assert_eq!(a.t_th_star, 2);
        let root = a.root.unwrap();
        assert!((1.0..3.0).contains(&root));
        assert!(rel(a.cost, total_cost(&p, &ty, 2).unwrap()) < 1e-15);
    }

    #[test]
    fn long_training_time_recruits_one_slot() {
        let p = MarketParams::baseline(10);
        let ty = ClientType::single(1.0, 50.0);
        let a = optimal_threshold(&p, &ty).unwrap();
        assert_eq!(a.regime, TrainingRegime::HighTrainingTime);
        assert_eq!(a.t_th_star, 1);
    }

    #[test]
    fn nonpositive_psi_bar_is_high_regime() {
        // short horizon: psi_bar < 0
        let p = MarketParams::baseline(3);
        let ty = ClientType::single(1.0, 0.5);
        assert!(psi_bar(&p, &ty) <= 0.0);
        assert_eq!(
            optimal_threshold(&p, &ty).unwrap().regime,
            TrainingRegime::HighTrainingTime
        );
    }

    #[test]
    fn static_matches_dynamic_for_one_slot() {
        let (p, ty) = base();
        let st = static_price(&p, &ty, 1).unwrap();
        let dy = price_schedule(&p, &ty, 1).unwrap().prices[0][0];
        assert!(rel(st, dy) < 1e-12);
    }

    #[test]
    fn costate_makes_hamiltonian_stationary() {
        let (p, ty) = base();
        for t_th in 1..6 {
            let schedule = price_schedule(&p, &ty, t_th).unwrap();
            let rest = p.training_slots(t_th);
            for t in 0..t_th {
                let price = schedule.prices[t as usize][0];
                let lambda_next = costate(&p, &ty, t_th, t + 1).unwrap();
                let grad = 2.0 * p.alpha * price / (p.b * rest)
                    + lambda_next * p.r * p.alpha * ty.s / (p.b * rest);
                assert!(grad.abs() < 1e-12, "T_th={t_th} t={t}: {grad}");
            }
        }
        assert!(costate(&p, &ty, 2, 3).is_err());
    }
}
