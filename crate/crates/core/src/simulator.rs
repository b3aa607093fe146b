//! Monte Carlo realization of the recruitment phase.
//!
//! Each replica owns a ChaCha8 generator seeded with
//! `ChaCha8Rng::seed_from_u64(seed)` and switched to stream `replica_index`.
//! Every slot consumes exactly four `f64` draws in the order arrival, type,
//! cost, noise, whether or not they are needed, so traces are reproducible
//! across platforms and independent of how replicas are scheduled.
//!
//! Realized data ages by the same factor `r` per slot as the expected
//! recursion, so the mean realized pool matches it exactly. Costs are
//! estimated with the plug-in rule `mean payment + 1/sqrt(mean B * D) + 1/D`,
//! which is the quantity the closed forms minimize; its standard error comes
//! from the delta method.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogeneous;
use crate::model::{
    check_prefix, evaluate_schedule, governing_tau, iterations, ClientEvent, ClientType,
    CostBreakdown, MarketParams, PriceSchedule,
};
use crate::robustness::NoiseModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaConfig {
    pub seed: u64,
    pub replicas: usize,
    /// Per-arrival sizes drawn uniformly from `[s - delta, s + delta]` when set.
    #[serde(default)]
    pub noise: Option<NoiseModel>,
}

impl ReplicaConfig {
    pub fn new(seed: u64, replicas: usize) -> Self {
        Self {
            seed,
            replicas,
            noise: None,
        }
    }

    pub fn with_noise(self, noise: NoiseModel) -> Self {
        Self {
            noise: Some(noise),
            ..self
        }
    }
}

/// One realized recruitment phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTrace {
    pub events: Vec<ClientEvent>,
    /// Realized data pool `B(0..=T_th)` after aging.
    pub realized_data: Vec<f64>,
    pub realized_payment: f64,
    pub final_cost: CostBreakdown,
}

struct Setup<'a> {
    params: &'a MarketParams,
    types: &'a [ClientType],
    schedule: &'a PriceSchedule,
    noise: Option<&'a NoiseModel>,
    d: f64,
}

impl<'a> Setup<'a> {
    fn new(
        params: &'a MarketParams,
        types: &'a [ClientType],
        t_th: u32,
        schedule: &'a PriceSchedule,
        noise: Option<&'a NoiseModel>,
    ) -> Result<Self> {
        check_prefix(types)?;
        let d = iterations(params, t_th, governing_tau(types))?;
        if schedule.slots() != t_th as usize {
            return Err(Error::MalformedSchedule(format!(
                "schedule has {} slots, expected {t_th}",
                schedule.slots()
            )));
        }
        for (slot, row) in schedule.prices.iter().enumerate() {
            if row.len() != types.len() {
                return Err(Error::MalformedSchedule(format!(
                    "slot {slot} has {} prices for {} types",
                    row.len(),
                    types.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(**p >= 0.0)) {
                return Err(Error::MalformedSchedule(format!(
                    "price {p} at slot {slot}"
                )));
            }
        }
        if let Some(noise) = noise {
            noise.check(types)?;
        }
        Ok(Self {
            params,
            types,
            schedule,
            noise,
            d,
        })
    }

    fn rng(seed: u64, replica: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replica);
        rng
    }

    /// Runs one replica, calling `record` once per slot.
    fn run<F: FnMut(ClientEvent, f64)>(&self, rng: &mut ChaCha8Rng, mut record: F) -> (f64, f64) {
        let MarketParams { alpha, b, r, .. } = *self.params;
        let mut level = 0.0;
        let mut payment = 0.0;
        for (slot, row) in self.schedule.prices.iter().enumerate() {
            let u_arrival: f64 = rng.gen();
            let u_type: f64 = rng.gen();
            let u_cost: f64 = rng.gen();
            let u_noise: f64 = rng.gen();

            let mut event = ClientEvent {
                slot,
                arrived: u_arrival < alpha,
                client_type: None,
                cost: None,
                price: 0.0,
                accepted: false,
                payoff: 0.0,
                contribution: 0.0,
            };
            if event.arrived {
                // mass beyond the prefix shares belongs to uninvited types
                let mut cumulative = 0.0;
                event.client_type = self.types.iter().position(|t| {
                    cumulative += t.q;
                    u_type < cumulative
                });
            }
            if let Some(i) = event.client_type {
                let ty = &self.types[i];
                let cost = b * u_cost;
                let price = row[i];
                let effort = cost * ty.tau * self.d;
                event.cost = Some(cost);
                event.price = price;
                if effort <= price {
                    let size = match self.noise {
                        Some(n) => ty.s + n.deltas[i] * (2.0 * u_noise - 1.0),
                        None => ty.s,
                    };
                    event.accepted = true;
                    event.payoff = price - effort;
                    event.contribution = size;
                    payment += price;
                }
            }
            level = r * (level + event.contribution);
            record(event, level);
        }
        (payment, level)
    }
}

/// Realizes one replica of the recruitment phase under `schedule`.
pub fn simulate_replica(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    schedule: &PriceSchedule,
    config: &ReplicaConfig,
    replica_index: u64,
) -> Result<SimulationTrace> {
    let setup = Setup::new(params, types, t_th, schedule, config.noise.as_ref())?;
    let mut rng = Setup::rng(config.seed, replica_index);
    let mut events = Vec::with_capacity(t_th as usize);
    let mut realized_data = vec![0.0];
    let (payment, final_data) = setup.run(&mut rng, |event, level| {
        events.push(event);
        realized_data.push(level);
    });
    Ok(SimulationTrace {
        events,
        realized_data,
        realized_payment: payment,
        final_cost: CostBreakdown::from_data(payment, final_data, setup.d),
    })
}

/// Aggregate of many replicas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub replicas: usize,
    /// Plug-in cost `mean payment + 1/sqrt(mean B * D) + 1/D`.
    pub mean_cost: f64,
    /// Delta-method standard error of `mean_cost`.
    pub std_error: f64,
    pub mean_payment: f64,
    pub mean_final_data: f64,
    pub final_data_se: f64,
    /// Fraction of replicas with an accepted client, per slot.
    pub acceptance_rate: Vec<f64>,
    pub acceptance_se: Vec<f64>,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of the expected cost of `schedule`.
///
/// Replicas run in parallel and are reduced in index order, so the result
/// does not depend on the thread count.
pub fn monte_carlo_cost(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    schedule: &PriceSchedule,
    config: &ReplicaConfig,
) -> Result<MonteCarloEstimate> {
    if config.replicas < 2 {
        return Err(Error::Precondition(format!(
            "at least 2 replicas are needed for a standard error (got {})",
            config.replicas
        )));
    }
    let setup = Setup::new(params, types, t_th, schedule, config.noise.as_ref())?;
    let outcomes: Vec<(f64, f64, Vec<bool>)> = (0..config.replicas as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = Setup::rng(config.seed, i);
            let mut accepted = Vec::with_capacity(t_th as usize);
            let (payment, data) = setup.run(&mut rng, |e, _| accepted.push(e.accepted));
            (payment, data, accepted)
        })
        .collect();

    let n = config.replicas as f64;
    let (mean_payment, _) = mean_and_se(outcomes.iter().map(|o| o.0), n);
    let (mean_final_data, final_data_se) = mean_and_se(outcomes.iter().map(|o| o.1), n);
    let d = setup.d;
    let mean_cost = CostBreakdown::from_data(mean_payment, mean_final_data, d).total;
    let std_error = if mean_final_data > 0.0 {
        let slope = -0.5 * d.powf(-0.5) * mean_final_data.powf(-1.5);
        mean_and_se(outcomes.iter().map(|o| o.0 + slope * o.1), n).1
    } else {
        f64::INFINITY
    };
    let (acceptance_rate, acceptance_se) = (0..t_th as usize)
        .map(|slot| {
            mean_and_se(
                outcomes.iter().map(|o| if o.2[slot] { 1.0 } else { 0.0 }),
                n,
            )
        })
        .unzip();

    Ok(MonteCarloEstimate {
        replicas: config.replicas,
        mean_cost,
        std_error,
        mean_payment,
        mean_final_data,
        final_data_se,
        acceptance_rate,
        acceptance_se,
    })
}

/// Expected acceptance probability per slot, `alpha * sum_i q_i min(p_i / cap_i, 1)`.
pub fn expected_acceptance(
    params: &MarketParams,
    types: &[ClientType],
    t_th: u32,
    schedule: &PriceSchedule,
) -> Result<Vec<f64>> {
    check_prefix(types)?;
    let d = iterations(params, t_th, governing_tau(types))?;
    Ok(schedule
        .prices
        .iter()
        .map(|row| {
            params.alpha
                * types
                    .iter()
                    .zip(row)
                    .map(|(t, p)| t.q * (p / (params.b * t.tau * d)).min(1.0))
                    .sum::<f64>()
        })
        .collect())
}

/// Static and dynamic pricing at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub horizon: u32,
    pub dynamic_t_th: u32,
    pub dynamic_cost: f64,
    pub static_t_th: u32,
    pub static_cost: f64,
    pub dynamic_mc: Option<MonteCarloEstimate>,
    pub static_mc: Option<MonteCarloEstimate>,
}

impl ComparisonRow {
    pub fn gap(&self) -> f64 {
        self.static_cost - self.dynamic_cost
    }
}

/// Optimal dynamic pricing against the best flat price for each horizon.
///
/// Each strategy uses the threshold that is best for it. With `mc` set both
/// schedules are also simulated.
pub fn compare_static_dynamic(
    params: &MarketParams,
    ty: &ClientType,
    horizons: &[u32],
    mc: Option<&ReplicaConfig>,
) -> Result<Vec<ComparisonRow>> {
    if horizons.is_empty() {
        return Err(Error::Precondition("horizon range must be nonempty".into()));
    }
    let single = [*ty];
    horizons
        .iter()
        .map(|&horizon| {
            let p = params.with_horizon(horizon);
            let dynamic = homogeneous::optimal_threshold(&p, ty)?;
            let dynamic_schedule = homogeneous::price_schedule(&p, ty, dynamic.t_th_star)?;
            let dynamic_cost =
                evaluate_schedule(&p, dynamic.t_th_star, &dynamic_schedule, &single)?.total;
            let (static_t_th, static_cost) = homogeneous::optimal_static_threshold(&p, ty)?;
            let (dynamic_mc, static_mc) = match mc {
                Some(cfg) => {
                    let static_schedule = homogeneous::static_schedule(&p, ty, static_t_th)?;
                    (
                        Some(monte_carlo_cost(
                            &p,
                            &single,
                            dynamic.t_th_star,
                            &dynamic_schedule,
                            cfg,
                        )?),
                        Some(monte_carlo_cost(
                            &p,
                            &single,
                            static_t_th,
                            &static_schedule,
                            cfg,
                        )?),
                    )
                }
                None => (None, None),
            };
            Ok(ComparisonRow {
                horizon,
                dynamic_t_th: dynamic.t_th_star,
                dynamic_cost,
                static_t_th,
                static_cost,
                dynamic_mc,
                static_mc,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (MarketParams, [ClientType; 1], PriceSchedule) {
        let p = MarketParams::baseline(10);
        let ty = [ClientType::baseline()];
        let schedule = homogeneous::price_schedule(&p, &ty[0], 2).unwrap();
        (p, ty, schedule)
    }

    #[test]
    fn no_arrivals_gives_infinite_loss() {
        let (p, ty, schedule) = reference();
        let silent = MarketParams { alpha: 0.0, ..p };
        let trace =
            simulate_replica(&silent, &ty, 2, &schedule, &ReplicaConfig::new(7, 1), 0).unwrap();
        assert_eq!(trace.realized_payment, 0.0);
        assert!(trace.realized_data.iter().all(|&b| b == 0.0));
        assert!(trace.final_cost.total.is_infinite());
        let mc = monte_carlo_cost(&silent, &ty, 2, &schedule, &ReplicaConfig::new(7, 10)).unwrap();
        assert!(mc.mean_cost.is_infinite());
    }

    #[test]
    fn capped_price_accepts_every_arrival() {
        let (p, ty, _) = reference();
        let cap = p.b * p.training_slots(2);
        let schedule = PriceSchedule::flat(cap, 2, 1);
        for i in 0..200 {
            let trace =
                simulate_replica(&p, &ty, 2, &schedule, &ReplicaConfig::new(3, 1), i).unwrap();
            assert!(trace.events.iter().all(|e| e.arrived == e.accepted));
        }
    }

    #[test]
    fn traces_are_reproducible_and_streams_differ() {
        let (p, ty, schedule) = reference();
        let cfg = ReplicaConfig::new(42, 1);
        let a = simulate_replica(&p, &ty, 2, &schedule, &cfg, 5).unwrap();
        let b = simulate_replica(&p, &ty, 2, &schedule, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let distinct = (0..20)
            .map(|i| {
                simulate_replica(&p, &ty, 2, &schedule, &cfg, i)
                    .unwrap()
                    .events
            })
            .collect::<Vec<_>>();
        assert!(distinct.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn realized_invariants_hold() {
        let (p, ty, schedule) = reference();
        for i in 0..100 {
            let t = simulate_replica(&p, &ty, 2, &schedule, &ReplicaConfig::new(9, 1), i).unwrap();
            let paid: f64 = t
                .events
                .iter()
                .filter(|e| e.accepted)
                .map(|e| e.price)
                .sum();
            assert_eq!(paid, t.realized_payment);
            for (k, e) in t.events.iter().enumerate() {
                assert!(e.payoff >= 0.0);
                assert_eq!(
                    t.realized_data[k + 1],
                    p.r * (t.realized_data[k] + e.contribution)
                );
            }
        }
    }

    #[test]
    fn estimate_is_thread_count_independent() {
        let (p, ty, schedule) = reference();
        let cfg = ReplicaConfig::new(1, 500);
        let a = monte_carlo_cost(&p, &ty, 2, &schedule, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| monte_carlo_cost(&p, &ty, 2, &schedule, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_replica_rejected() {
        let (p, ty, schedule) = reference();
        assert!(monte_carlo_cost(&p, &ty, 2, &schedule, &ReplicaConfig::new(1, 1)).is_err());
    }

    #[test]
    fn estimate_tracks_expectation() {
        let (p, ty, schedule) = reference();
        let mc = monte_carlo_cost(&p, &ty, 2, &schedule, &ReplicaConfig::new(11, 4000)).unwrap();
        let exact = evaluate_schedule(&p, 2, &schedule, &ty).unwrap().total;
        assert!(
            (mc.mean_cost - exact).abs() <= 4.0 * mc.std_error,
            "{mc:?} vs {exact}"
        );
        let rates = expected_acceptance(&p, &ty, 2, &schedule).unwrap();
        for (k, rate) in rates.iter().enumerate() {
            assert!((mc.acceptance_rate[k] - rate).abs() <= 4.0 * mc.acceptance_se[k]);
        }
    }

    #[test]
    fn dynamic_beats_static() {
        let p = MarketParams::baseline(10);
        let rows = compare_static_dynamic(&p, &ClientType::baseline(), &[5, 10, 20], None).unwrap();
        for row in rows {
            assert!(row.dynamic_cost <= row.static_cost + 1e-12);
        }
    }
}
