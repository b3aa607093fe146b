//! Pricing, thresholds and client-type selection for heterogeneous clients.
//!
//! Types are sorted by ascending data size `s_i` and training time `tau_i`.
//! Rounds are synchronous, so inviting types `{1..j}` fixes the iteration
//! length at `tau_j` and `D = (T - T_th) / tau_j`. Type `i` is offered
//! `min(s_i * Gamma_t, b * tau_i * D)` where `Gamma_t` is shared by all types
//! and rises with `t`. Shares `q_i` are population shares and are not
//! renormalized over the invited prefix: arrivals of uninvited types simply
//! receive no offer.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::homogeneous::{cost_constant, integer_neighbours};
use crate::model::{
    check_prefix, evaluate_schedule, governing_tau, iterations, ClientType, ClientTypeSet,
    CostBreakdown, MarketParams, PriceSchedule, COST_TIE_TOL,
};
use crate::solve::{argmin_with_tol, bisect_increasing};

const ROOT_WIDTH_TOL: f64 = 1e-9;
const ROOT_RESIDUAL_TOL: f64 = 1e-12;

/// `Gamma_t` for `t` in `0..T_th`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSchedule {
    pub values: Vec<f64>,
    /// `sum_i q_i s_i^2 / tau_i` over the invited types.
    pub aggregate: f64,
}

/// `sum_i q_i s_i^2 / tau_i`.
pub fn aggregate_rate(types: &[ClientType]) -> f64 {
    types.iter().map(|t| t.q * t.s * t.s / t.tau).sum()
}

pub fn gamma_schedule(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
) -> Result<GammaSchedule> {
    check_prefix(types)?;
    let d = iterations(params, t_th, governing_tau(types))?;
    let MarketParams { alpha, b, r, .. } = *params;
    let aggregate = aggregate_rate(types);
    let scale = b.powi(3) * d * d * (1.0 - r * r).powi(3)
        / (16.0 * alpha.powi(3) * (1.0 - r.powi(2 * t_th as i32)).powi(3) * aggregate.powi(3));
    let values = (0..t_th as i32)
        .map(|t| (scale * r.powi(5 * t_th as i32 - 5 * t - 6)).powf(0.2))
        .collect();
    Ok(GammaSchedule { values, aggregate })
}

/// Per-type prices `min(s_i Gamma_t, b tau_i D)`.
///
/// Because `Gamma_t` increases in `t`, a type that hits its cap stays capped
/// for the rest of recruitment.
pub fn price_vector_schedule(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
) -> Result<PriceSchedule> {
    let gamma = gamma_schedule(params, types, t_th)?;
    let d = iterations(params, t_th, governing_tau(types))?;
    let caps: Vec<f64> = types.iter().map(|t| params.b * t.tau * d).collect();
    let mut prices = Vec::with_capacity(gamma.values.len());
    let mut cap_active = Vec::with_capacity(gamma.values.len());
    for g in &gamma.values {
        let raw: Vec<f64> = types.iter().map(|t| t.s * g).collect();
        cap_active.push(raw.iter().zip(&caps).map(|(p, c)| p > c).collect());
        prices.push(raw.iter().zip(&caps).map(|(p, c)| p.min(*c)).collect());
    }
    Ok(PriceSchedule { prices, cap_active })
}

fn closed_form_cost(params: &MarketParams, types: &[ClientType], t_th: u32) -> f64 {
    let MarketParams { alpha, b, r, .. } = *params;
    let per_slot = governing_tau(types) / params.training_slots(t_th);
    cost_constant()
        * (b / (alpha * r * r)).powf(0.2)
        * ((1.0 - r * r) / (1.0 - r.powi(2 * t_th as i32))).powf(0.2)
        * aggregate_rate(types).powf(-0.2)
        * per_slot.powf(0.2)
        + per_slot
}

/// Closed-form total cost when no cap binds anywhere.
pub fn prefix_cost_uncapped(params: &MarketParams, types: &[ClientType], t_th: u32) -> Result<f64> {
    let schedule = price_vector_schedule(params, types, t_th)?;
    if let Some((t, i)) = first_capped(&schedule) {
        return Err(Error::Precondition(format!(
            "cap binds for type {i} at slot {t}; closed form does not apply"
        )));
    }
    Ok(closed_form_cost(params, types, t_th))
}

fn first_capped(schedule: &PriceSchedule) -> Option<(usize, usize)> {
    schedule
        .cap_active
        .iter()
        .enumerate()
        .find_map(|(t, row)| row.iter().position(|&c| c).map(|i| (t, i)))
}

/// Cost of the (possibly capped) price vector schedule, by forward recursion.
pub fn prefix_cost_general(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
) -> Result<CostBreakdown> {
    let schedule = price_vector_schedule(params, types, t_th)?;
    evaluate_schedule(params, t_th, &schedule, types)
}

/// Closed form when uncapped, forward recursion otherwise.
pub fn prefix_cost(params: &MarketParams, types: &[ClientType], t_th: u32) -> Result<f64> {
    let schedule = price_vector_schedule(params, types, t_th)?;
    if schedule.any_capped() {
        Ok(evaluate_schedule(params, t_th, &schedule, types)?.total)
    } else {
        Ok(closed_form_cost(params, types, t_th))
    }
}

/// Derivative of the uncapped cost in a real-valued threshold. The final
/// term uses the governing (largest) training time.
pub fn stationarity_residual(
    params: &MarketParams,
    types: &[ClientType],
    t_th: f64,
) -> Result<f64> {
    check_prefix(types)?;
    let horizon = f64::from(params.horizon);
    if !(t_th >= 1.0 && t_th < horizon) {
        return Err(Error::Domain(format!(
            "threshold {t_th} outside [1, {horizon})"
        )));
    }
    let MarketParams { alpha, b, r, .. } = *params;
    let tau = governing_tau(types);
    let rest = horizon - t_th;
    let r2t = r.powf(2.0 * t_th);
    let base = b * tau * (1.0 - r * r) / (alpha * r * r * (1.0 - r2t) * rest);
    Ok(0.2
        * cost_constant()
        * aggregate_rate(types).powf(-0.2)
        * base.powf(0.2)
        * (2.0 * r2t * r.ln() / (1.0 - r2t) + 1.0 / rest)
        + tau / (rest * rest))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdChoice {
    pub t_th_star: u32,
    pub cost: f64,
    /// Root of the stationarity equation, clamped to `[1, T-1]`.
    pub root: f64,
    /// Whether a cap bound at the closed-form candidate, forcing a full scan.
    pub capped: bool,
}

/// Optimal threshold for a fixed set of invited types.
///
/// Solves the stationarity equation, compares the two neighbouring integers
/// with the closed-form cost and keeps the winner if no cap binds there.
/// Otherwise every integer threshold is evaluated with the capped schedule.
pub fn optimal_threshold(params: &MarketParams, types: &[ClientType]) -> Result<ThresholdChoice> {
    params.check()?;
    check_prefix(types)?;
    let max = params.horizon - 1;
    let residual = |x: f64| stationarity_residual(params, types, x).expect("x within [1, T-1]");
    let hi = f64::from(max);
    let root = if max == 1 || residual(1.0) >= 0.0 {
        1.0
    } else if residual(hi) <= 0.0 {
        hi
    } else {
        bisect_increasing(residual, 1.0, hi, ROOT_WIDTH_TOL, ROOT_RESIDUAL_TOL)
    };

    let candidates = integer_neighbours(root, params.horizon);
    let costs: Vec<f64> = candidates
        .iter()
        .map(|&k| closed_form_cost(params, types, k))
        .collect();
    let (idx, cost) = argmin_with_tol(costs, COST_TIE_TOL).expect("at least one candidate");
    let t_tilde = candidates[idx];
    if !price_vector_schedule(params, types, t_tilde)?.any_capped() {
        return Ok(ThresholdChoice {
            t_th_star: t_tilde,
            cost,
            root,
            capped: false,
        });
    }

    let costs = (1..=max)
        .map(|k| prefix_cost(params, types, k))
        .collect::<Result<Vec<_>>>()?;
    let (idx, cost) = argmin_with_tol(costs, COST_TIE_TOL).expect("T >= 2");
    Ok(ThresholdChoice {
        t_th_star: idx as u32 + 1,
        cost,
        root,
        capped: true,
    })
}

/// Optimal invited set `{1..j_star}` with its threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrefixChoice {
    pub j_star: usize,
    pub t_th_star: u32,
    pub cost: f64,
    /// Cap flags `(t, i)` of the optimal schedule.
    pub cap_active: Vec<Vec<bool>>,
    /// Per-prefix optimum for `j = 1..N`.
    pub per_prefix: Vec<ThresholdChoice>,
}

/// Linear scan over prefixes `{1..j}`; ties go to the smaller `j`.
pub fn select_client_types(params: &MarketParams, set: &ClientTypeSet) -> Result<PrefixChoice> {
    let per_prefix = (1..=set.len())
        .into_par_iter()
        .map(|j| optimal_threshold(params, set.prefix(j)))
        .collect::<Result<Vec<_>>>()?;
    let (idx, cost) =
        argmin_with_tol(per_prefix.iter().map(|c| c.cost), COST_TIE_TOL).expect("set is nonempty");
    let j_star = idx + 1;
    let t_th_star = per_prefix[idx].t_th_star;
    let cap_active = price_vector_schedule(params, set.prefix(j_star), t_th_star)?.cap_active;
    Ok(PrefixChoice {
        j_star,
        t_th_star,
        cost,
        cap_active,
        per_prefix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homogeneous;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn reference_set(mu: f64, beta: f64) -> ClientTypeSet {
        ClientTypeSet::linear_family(5, 1.0, mu, beta).unwrap()
    }

    #[test]
    fn single_type_reduces_to_homogeneous() {
        let p = MarketParams::baseline(10);
        let ty = ClientType::baseline();
        for t_th in 1..10 {
            let g = gamma_schedule(&p, &[ty], t_th).unwrap();
            let hom = homogeneous::price_schedule(&p, &ty, t_th)
                .unwrap()
                .first_column();
            for (gt, h) in g.values.iter().zip(&hom) {
                assert!(rel(ty.s * gt, *h) < 1e-12);
            }
            let j = prefix_cost_uncapped(&p, &[ty], t_th).unwrap();
            assert!(rel(j, homogeneous::total_cost(&p, &ty, t_th).unwrap()) < 1e-12);
        }
        let h = homogeneous::optimal_threshold(&p, &ty).unwrap();
        let c = optimal_threshold(&p, &[ty]).unwrap();
        assert_eq!(h.t_th_star, c.t_th_star);
    }

    #[test]
    fn gamma_ratio_is_inverse_r() {
        let p = MarketParams::baseline(10);
        let set = reference_set(1.0, 0.01);
        for t_th in 2..10 {
            let g = gamma_schedule(&p, set.types(), t_th).unwrap().values;
            assert!(g.windows(2).all(|w| w[1] > w[0]));
            let n = g.len();
            assert!(rel(g[n - 1] / g[n - 2], 1.0 / p.r) < 1e-12);
        }
    }

    #[test]
    fn uncapped_prices_proportional_to_size() {
        let p = MarketParams::baseline(10);
        let set = reference_set(1.0, 0.01);
        let s = price_vector_schedule(&p, set.types(), 3).unwrap();
        assert!(!s.any_capped());
        for row in &s.prices {
            for (i, ty) in set.types().iter().enumerate() {
                assert!(rel(row[i] / row[0], ty.s / set.types()[0].s) < 1e-12);
            }
        }
    }

    fn capped_pair() -> (MarketParams, Vec<ClientType>) {
        // sparse arrivals and small data sizes push prices into the caps
        let p = MarketParams {
            alpha: 0.1,
            ..MarketParams::baseline(6)
        };
        let types = vec![
            ClientType {
                s: 0.1,
                tau: 0.2,
                q: 0.5,
            },
            ClientType {
                s: 0.3,
                tau: 0.25,
                q: 0.5,
            },
        ];
        (p, types)
    }

    #[test]
    fn cap_onset_matches_direct_comparison() {
        let (p, types) = capped_pair();
        let t_th = 3;
        let s = price_vector_schedule(&p, &types, t_th).unwrap();
        let g = gamma_schedule(&p, &types, t_th).unwrap().values;
        let d = p.training_slots(t_th) / 0.25;
        for (t, gt) in g.iter().enumerate() {
            for (i, ty) in types.iter().enumerate() {
                assert_eq!(s.cap_active[t][i], ty.s * gt > p.b * ty.tau * d);
            }
        }
        assert!(s.cap_active.iter().any(|row| row[1]));
        for i in 0..types.len() {
            let col: Vec<bool> = s.cap_active.iter().map(|r| r[i]).collect();
            assert!(col.windows(2).all(|w| !w[0] || w[1]), "caps upward closed");
        }
        let onset = s.cap_active.iter().position(|row| row[1]).unwrap();
        for row in &s.prices[onset..] {
            assert!(rel(row[1], p.b * 0.25 * d) < 1e-15);
        }
        assert!(matches!(
            prefix_cost_uncapped(&p, &types, t_th),
            Err(Error::Precondition(_))
        ));
        // capped cost can only be above the unconstrained relaxation
        let general = prefix_cost_general(&p, &types, t_th).unwrap().total;
        assert!(general >= closed_form_cost(&p, &types, t_th));
    }

    #[test]
    fn general_cost_matches_closed_form_when_uncapped() {
        let p = MarketParams::baseline(10);
        let set = reference_set(1.0, 0.01);
        for j in 1..=5 {
            for t_th in 1..10 {
                let general = prefix_cost_general(&p, set.prefix(j), t_th).unwrap();
                let closed = prefix_cost_uncapped(&p, set.prefix(j), t_th).unwrap();
                assert!(rel(general.total, closed) < 1e-9);
            }
        }
    }

    #[test]
    fn adding_lower_types_never_hurts() {
        let p = MarketParams::baseline(10);
        let types = [
            ClientType {
                s: 1.0,
                tau: 0.1,
                q: 0.2,
            },
            ClientType {
                s: 2.0,
                tau: 0.3,
                q: 0.3,
            },
            ClientType {
                s: 3.0,
                tau: 0.4,
                q: 0.5,
            },
        ];
        for t_th in 1..10 {
            let j = |sel: &[ClientType]| prefix_cost(&p, sel, t_th).unwrap();
            assert!(j(&types[..2]) <= j(&types[1..2]));
            assert!(j(&types) < j(&[types[0], types[2]]));
            assert!(j(&types) < j(&types[1..]));
        }
    }

    #[test]
    fn empty_prefix_rejected() {
        let p = MarketParams::baseline(10);
        assert!(matches!(
            prefix_cost_general(&p, &[], 2),
            Err(Error::Precondition(_))
        ));
        assert!(optimal_threshold(&p, &[]).is_err());
    }

    #[test]
    fn reference_selection_invites_everyone() {
        let p = MarketParams::baseline(10);
        let choice = select_client_types(&p, &reference_set(1.0, 0.01)).unwrap();
        assert_eq!(choice.j_star, 5);
        assert_eq!(choice.per_prefix.len(), 5);
        assert!(choice.cap_active.iter().flatten().all(|&c| !c));
    }

    #[test]
    fn capped_threshold_equals_scan() {
        let (p, types) = capped_pair();
        let choice = optimal_threshold(&p, &types).unwrap();
        let scan: Vec<f64> = (1..p.horizon)
            .map(|k| prefix_cost(&p, &types, k).unwrap())
            .collect();
        let (idx, best) = argmin_with_tol(scan, COST_TIE_TOL).unwrap();
        assert_eq!(choice.t_th_star, idx as u32 + 1);
        assert_eq!(choice.cost, best);
    }
}
