//! Sensitivity of the optimal policy to noisy data sizes.
//!
//! Arrivals of type `i` contribute a size anywhere in `[s_i - delta_i, s_i + delta_i]`
//! while prices stay those designed for the nominal `s_i`. The worst case is
//! every arrival contributing `s_i - delta_i`; the penalty it adds to the
//! nominal cost is
//!
//! ```text
//! Phi = (4 b tau_j (1 - r^2) / (alpha r^2 (T - T_th) (1 - r^(2 T_th))))^(1/5)
//!       * ( X^(3/10) / Y^(1/2) - X^(-1/5) )
//! X = sum_i q_i s_i^2 / tau_i,   Y = sum_i q_i s_i (s_i - delta_i) / tau_i
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heterogeneous::{aggregate_rate, price_vector_schedule};
use crate::model::{
    check_prefix, expected_path_with_sizes, governing_tau, ClientType, CostBreakdown, MarketParams,
};

/// Per-type noise half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub deltas: Vec<f64>,
}

impl NoiseModel {
    pub fn new(deltas: Vec<f64>) -> Self {
        Self { deltas }
    }

    /// The same half-width for each of `n` types.
    pub fn uniform(delta: f64, n: usize) -> Self {
        Self {
            deltas: vec![delta; n],
        }
    }

    pub fn check(&self, types: &[ClientType]) -> Result<()> {
        if self.deltas.len() != types.len() {
            return Err(Error::Domain(format!(
                "{} noise bounds for {} types",
                self.deltas.len(),
                types.len()
            )));
        }
        for (i, (d, ty)) in self.deltas.iter().zip(types).enumerate() {
            if !(*d >= 0.0 && *d < ty.s) {
                return Err(Error::Domain(format!(
                    "noise bound {d} for type {i} must satisfy 0 <= delta < s = {}",
                    ty.s
                )));
            }
        }
        Ok(())
    }
}

fn noisy_aggregate(types: &[ClientType], noise: &NoiseModel) -> f64 {
    types
        .iter()
        .zip(&noise.deltas)
        .map(|(t, d)| t.q * t.s * (t.s - d) / t.tau)
        .sum()
}

fn phi_scale(params: &MarketParams, types: &[ClientType], t_th: u32) -> Result<f64> {
    params.check_threshold(t_th)?;
    let MarketParams { alpha, b, r, .. } = *params;
    Ok((4.0 * b * governing_tau(types) * (1.0 - r * r)
        / (alpha * r * r * params.training_slots(t_th) * (1.0 - r.powi(2 * t_th as i32))))
    .powf(0.2))
}

/// Worst-case additive cost penalty `Phi`.
pub fn phi_bound(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    noise: &NoiseModel,
) -> Result<f64> {
    check_prefix(types)?;
    noise.check(types)?;
    let x = aggregate_rate(types);
    let y = noisy_aggregate(types, noise);
    Ok(phi_scale(params, types, t_th)? * (x.powf(0.3) / y.sqrt() - x.powf(-0.2)))
}

/// `dPhi/d delta_i` for every type.
pub fn phi_gradient(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    check_prefix(types)?;
    noise.check(types)?;
    let scale = phi_scale(params, types, t_th)?;
    let x = aggregate_rate(types);
    let y = noisy_aggregate(types, noise);
    Ok(types
        .iter()
        .map(|t| scale * x.powf(0.3) * 0.5 * y.powf(-1.5) * t.q * t.s / t.tau)
        .collect())
}

/// Cost when every arrival contributes `s_i - delta_i` under the nominal schedule.
pub fn worst_case_cost(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    noise: &NoiseModel,
) -> Result<CostBreakdown> {
    check_prefix(types)?;
    noise.check(types)?;
    let schedule = price_vector_schedule(params, types, t_th)?;
    let sizes: Vec<f64> = types
        .iter()
        .zip(&noise.deltas)
        .map(|(t, d)| t.s - d)
        .collect();
    Ok(expected_path_with_sizes(params, t_th, &schedule, types, &sizes)?.breakdown())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heterogeneous::prefix_cost_general;
    use crate::model::ClientTypeSet;

    fn setup() -> (MarketParams, ClientTypeSet) {
        (
            MarketParams::baseline(10),
            ClientTypeSet::linear_family(5, 1.0, 1.0, 0.01).unwrap(),
        )
    }

    #[test]
    fn zero_noise_has_zero_penalty() {
        let (p, set) = setup();
        let noise = NoiseModel::uniform(0.0, 5);
        assert!(phi_bound(&p, set.types(), 2, &noise).unwrap().abs() < 1e-14);
        let nominal = prefix_cost_general(&p, set.types(), 2).unwrap();
        let worst = worst_case_cost(&p, set.types(), 2, &noise).unwrap();
        assert_eq!(nominal, worst);
    }

    #[test]
    fn worst_case_identity() {
        let (p, set) = setup();
        for t_th in 1..10 {
            for delta in [0.1, 0.3, 0.6, 0.9] {
                let noise = NoiseModel::uniform(delta, 5);
                let nominal = prefix_cost_general(&p, set.types(), t_th).unwrap().total;
                let worst = worst_case_cost(&p, set.types(), t_th, &noise)
                    .unwrap()
                    .total;
                let phi = phi_bound(&p, set.types(), t_th, &noise).unwrap();
                assert!(
                    ((worst - nominal) - phi).abs() <= 1e-9 * phi,
                    "T_th={t_th} delta={delta}"
                );
                assert!(worst >= nominal);
            }
        }
    }

    #[test]
    fn penalty_grows_with_noise() {
        let (p, set) = setup();
        let phis: Vec<f64> = [0.05, 0.1, 0.2, 0.4, 0.8]
            .iter()
            .map(|&d| phi_bound(&p, set.types(), 2, &NoiseModel::uniform(d, 5)).unwrap())
            .collect();
        assert!(phis.windows(2).all(|w| w[1] > w[0]));
        let doubled = phi_bound(&p, set.types(), 2, &NoiseModel::uniform(0.2, 5)).unwrap();
        assert!(doubled > phis[1]);
    }

    #[test]
    fn invalid_noise_rejected() {
        let (p, set) = setup();
        assert!(phi_bound(&p, set.types(), 2, &NoiseModel::uniform(1.0, 5)).is_err());
        assert!(phi_bound(&p, set.types(), 2, &NoiseModel::uniform(-0.1, 5)).is_err());
        assert!(worst_case_cost(&p, set.types(), 2, &NoiseModel::uniform(0.1, 4)).is_err());
    }
}
