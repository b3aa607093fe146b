//! Brute-force ground truth for the closed forms.
//!
//! Nothing here is clever on purpose: prices are enumerated on a grid,
//! thresholds are scanned one by one and client-type subsets are listed in
//! full. The searches are exponential and refuse inputs beyond small sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heterogeneous::prefix_cost;
use crate::model::{
    accuracy_term, check_prefix, evaluate_schedule, governing_tau, iterations, ClientType,
    ClientTypeSet, CostBreakdown, MarketParams, PriceSchedule, COST_TIE_TOL,
};
use crate::solve::argmin_with_tol;

/// Largest number of grid dimensions (slots times types) ever searched.
pub const MAX_GRID_DIMS: u32 = 4;
/// Largest client-type set for subset enumeration.
pub const MAX_SUBSET_TYPES: usize = 5;

/// Price grid for [`grid_search_prices`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spacing between candidate prices.
    pub step: f64,
    /// Largest threshold the search accepts.
    pub max_t_th: u32,
    /// Each price ranges over `[0, range_fraction * cap]`.
    pub range_fraction: f64,
}

impl GridSpec {
    /// Full `[0, cap]` range with the given spacing.
    pub fn new(step: f64, max_t_th: u32) -> Self {
        Self {
            step,
            max_t_th,
            range_fraction: 1.0,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "grid step must be positive (got {})",
                self.step
            )));
        }
        if self.max_t_th > MAX_GRID_DIMS {
            return Err(Error::InvalidParams(format!(
                "grid searches are limited to {MAX_GRID_DIMS} slots (got {})",
                self.max_t_th
            )));
        }
        if !(self.range_fraction > 0.0 && self.range_fraction <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "range fraction must lie in (0, 1] (got {})",
                self.range_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub schedule: PriceSchedule,
    pub cost: CostBreakdown,
    pub evaluated: u64,
}

/// Per-dimension candidate prices with their payment and inflow weights.
struct Axis {
    prices: Vec<f64>,
    payment: Vec<f64>,
    inflow: Vec<f64>,
    closes_slot: bool,
}

struct Grid {
    axes: Vec<Axis>,
    r: f64,
    d: f64,
}

impl Grid {
    fn cost(&self, payment: f64, level: f64) -> f64 {
        payment + accuracy_term(level, self.d) + 1.0 / self.d
    }

    /// Best completion of the search from axis `k`, writing its indices into `best_idx`.
    fn search(
        &self,
        k: usize,
        level: f64,
        inflow: f64,
        payment: f64,
        idx: &mut [usize],
        best: &mut (f64, Vec<usize>),
    ) {
        let axis = &self.axes[k];
        if k + 1 == self.axes.len() {
            // innermost axis always closes the last slot
            for (i, (&pay, &flow)) in axis.payment.iter().zip(&axis.inflow).enumerate() {
                let cost = self.cost(payment + pay, self.r * (level + inflow + flow));
                if cost < best.0 {
                    idx[k] = i;
                    best.0 = cost;
                    best.1.copy_from_slice(idx);
                }
            }
            return;
        }
        for i in 0..axis.prices.len() {
            idx[k] = i;
            let (next_level, next_inflow) = if axis.closes_slot {
                (self.r * (level + inflow + axis.inflow[i]), 0.0)
            } else {
                (level, inflow + axis.inflow[i])
            };
            self.search(
                k + 1,
                next_level,
                next_inflow,
                payment + axis.payment[i],
                idx,
                best,
            );
        }
    }
}

/// Exhaustive search over every schedule on the price grid.
///
/// Slots and types form the search dimensions (at most [`MAX_GRID_DIMS`]).
/// Candidates are scored with the expected-cost recursion accumulated along
/// the enumeration; the winner is re-scored with [`evaluate_schedule`]. Ties
/// keep the lexicographically first schedule.
pub fn grid_search_prices(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    grid: &GridSpec,
) -> Result<GridResult> {
    grid.check()?;
    check_prefix(types)?;
    let dims = t_th as usize * types.len();
    if t_th > grid.max_t_th || dims > MAX_GRID_DIMS as usize {
        return Err(Error::Refused(format!(
            "grid search over {t_th} slots and {} types exceeds the limit (max {} slots, {MAX_GRID_DIMS} dimensions)",
            types.len(),
            grid.max_t_th
        )));
    }
    let d = iterations(params, t_th, governing_tau(types))?;

    let mut axes = Vec::with_capacity(dims);
    for _slot in 0..t_th {
        for (i, ty) in types.iter().enumerate() {
            let cap = params.b * ty.tau * d;
            let top = grid.range_fraction * cap;
            let count = (top / grid.step + 1e-9).floor() as usize;
            let prices: Vec<f64> = (0..=count)
                .map(|k| (k as f64 * grid.step).min(cap))
                .collect();
            let accept = |p: f64| params.alpha * ty.q * p / cap;
            axes.push(Axis {
                payment: prices.iter().map(|&p| accept(p) * p).collect(),
                inflow: prices.iter().map(|&p| accept(p) * ty.s).collect(),
                prices,
                closes_slot: i + 1 == types.len(),
            });
        }
    }
    let search = Grid {
        axes,
        r: params.r,
        d,
    };

    let first = &search.axes[0];
    let partial: Vec<(f64, Vec<usize>)> = (0..first.prices.len())
        .into_par_iter()
        .map(|i| {
            let mut idx = vec![0; dims];
            idx[0] = i;
            let mut best = (f64::INFINITY, idx.clone());
            if dims == 1 {
                best.0 = search.cost(first.payment[i], search.r * first.inflow[i]);
            } else {
                let (level, inflow) = if first.closes_slot {
                    (search.r * first.inflow[i], 0.0)
                } else {
                    (0.0, first.inflow[i])
                };
                search.search(1, level, inflow, first.payment[i], &mut idx, &mut best);
            }
            best
        })
        .collect();
    let mut winner = partial[0].1.clone();
    let mut winner_cost = partial[0].0;
    for (cost, idx) in &partial[1..] {
        if *cost < winner_cost {
            winner_cost = *cost;
            winner = idx.clone();
        }
    }

    let n = types.len();
    let rows: Vec<Vec<f64>> = (0..t_th as usize)
        .map(|t| {
            (0..n)
                .map(|i| search.axes[t * n + i].prices[winner[t * n + i]])
                .collect()
        })
        .collect();
    let schedule = PriceSchedule::from_rows(rows);
    let cost = evaluate_schedule(params, t_th, &schedule, types)?;
    let evaluated = search.axes.iter().map(|a| a.prices.len() as u64).product();
    Ok(GridResult {
        schedule,
        cost,
        evaluated,
    })
}

/// Scan of every integer threshold with the (capped where needed) prefix cost.
pub fn exhaustive_threshold(params: &MarketParams, types: &[ClientType]) -> Result<(u32, f64)> {
    params.check()?;
    check_prefix(types)?;
    let costs = (1..params.horizon)
        .map(|k| prefix_cost(params, types, k))
        .collect::<Result<Vec<_>>>()?;
    let (idx, cost) = argmin_with_tol(costs, COST_TIE_TOL).expect("horizon >= 2");
    Ok((idx as u32 + 1, cost))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetChoice {
    /// Zero-based indices of the invited types, ascending.
    pub members: Vec<usize>,
    pub t_th_star: u32,
    pub cost: f64,
}

/// Best subset over all `2^N - 1` nonempty subsets.
///
/// Subsets are visited in lexicographic order of their member lists, so
/// `{0} < {0,1} < {0,1,2} < {0,2} < {1} ...`, and a later subset must be
/// cheaper by more than the tie tolerance to win.
pub fn exhaustive_subsets(params: &MarketParams, set: &ClientTypeSet) -> Result<SubsetChoice> {
    let n = set.len();
    if n > MAX_SUBSET_TYPES {
        return Err(Error::Refused(format!(
            "subset enumeration is limited to {MAX_SUBSET_TYPES} types (got {n})"
        )));
    }
    let mut subsets: Vec<Vec<usize>> = (1u32..1 << n)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort();

    let results = subsets
        .iter()
        .map(|members| {
            let chosen: Vec<ClientType> = members.iter().map(|&i| set.types()[i]).collect();
            exhaustive_threshold(params, &chosen)
        })
        .collect::<Result<Vec<_>>>()?;
    let (idx, cost) = argmin_with_tol(results.iter().map(|r| r.1), COST_TIE_TOL)
        .ok_or_else(|| Error::Precondition("client type set must be nonempty".into()))?;
    Ok(SubsetChoice {
        members: subsets[idx].clone(),
        t_th_star: results[idx].0,
        cost,
    })
}
