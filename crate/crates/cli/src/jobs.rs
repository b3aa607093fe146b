//! Job dispatch: each job turns a resolved config into result tables.

use dynprice::heterogeneous::{self, select_client_types};
use dynprice::homogeneous;
use dynprice::model::{evaluate_schedule, expected_path, validate_params};
use dynprice::robustness::{phi_bound, worst_case_cost, NoiseModel};
use dynprice::simulator::{
    compare_static_dynamic, expected_acceptance, monte_carlo_cost, ReplicaConfig,
};
use dynprice::{ClientType, PriceSchedule};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Job, Point};
use crate::error::{CliError, Result};
use crate::format::{Cell, Table};

/// Tables produced by a run, keyed by a file suffix (`""` for the main table).
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<(String, Table)>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn main(&self) -> &Table {
        &self.tables[0].1
    }
}

/// Threshold, invited types and schedule a point is evaluated at.
struct Plan {
    types: Vec<ClientType>,
    t_th: u32,
    schedule: PriceSchedule,
}

impl Plan {
    /// The configured threshold with every type, or the optimum otherwise.
    fn new(config: &ExperimentConfig, point: &Point) -> Result<Self> {
        let p = &point.market;
        let all = point.types.types();
        if let [ty] = all {
            let t_th = match config.t_th {
                Some(t) => t,
                None => homogeneous::optimal_threshold(p, ty)?.t_th_star,
            };
            return Ok(Plan {
                types: all.to_vec(),
                t_th,
                schedule: homogeneous::price_schedule(p, ty, t_th)?,
            });
        }
        let (types, t_th) = match config.t_th {
            Some(t) => (all.to_vec(), t),
            None => {
                let choice = select_client_types(p, &point.types)?;
                (point.types.prefix(choice.j_star).to_vec(), choice.t_th_star)
            }
        };
        let schedule = heterogeneous::price_vector_schedule(p, &types, t_th)?;
        Ok(Plan {
            types,
            t_th,
            schedule,
        })
    }

    fn noise(&self, delta: Option<f64>) -> Result<Option<NoiseModel>> {
        let Some(delta) = delta else { return Ok(None) };
        let noise = NoiseModel::uniform(delta, self.types.len());
        noise.check(&self.types)?;
        Ok(Some(noise))
    }
}

fn replica_config(config: &ExperimentConfig, noise: Option<NoiseModel>) -> Option<ReplicaConfig> {
    config.sim.replicas.map(|replicas| ReplicaConfig {
        seed: config.seed(),
        replicas,
        noise,
    })
}

fn single_type(point: &Point, job: Job) -> Result<ClientType> {
    match point.types.types() {
        [ty] => Ok(*ty),
        many => Err(CliError::Validation(format!(
            "`{job}` needs exactly one client type (got {})",
            many.len()
        ))),
    }
}

type Rows = Vec<Vec<Vec<Cell>>>;

fn price_rows(config: &ExperimentConfig, point: &Point) -> Result<Rows> {
    let plan = Plan::new(config, point)?;
    let d = point.market.training_slots(plan.t_th) / dynprice::model::governing_tau(&plan.types);
    let mut rows = Vec::new();
    for (t, (prices, capped)) in plan
        .schedule
        .prices
        .iter()
        .zip(&plan.schedule.cap_active)
        .enumerate()
    {
        for (i, (price, cap_active)) in prices.iter().zip(capped).enumerate() {
            let cap = point.market.b * plan.types[i].tau * d;
            rows.push(vec![
                point.market.horizon.into(),
                plan.t_th.into(),
                (i + 1).into(),
                t.into(),
                (*price).into(),
                cap.into(),
                (*cap_active).into(),
                config.seed().into(),
            ]);
        }
    }
    Ok(vec![rows])
}

fn threshold_rows(config: &ExperimentConfig, point: &Point) -> Result<Rows> {
    let p = &point.market;
    let row = match point.types.types() {
        [ty] => {
            let a = homogeneous::optimal_threshold(p, ty)?;
            let regime = match a.regime {
                homogeneous::TrainingRegime::HighTrainingTime => "high",
                homogeneous::TrainingRegime::LowTrainingTime => "low",
            };
            vec![
                p.horizon.into(),
                p.r.into(),
                1usize.into(),
                a.psi_bar.into(),
                regime.into(),
                a.root.into(),
                a.t_th_star.into(),
                a.cost.into(),
                false.into(),
                config.seed().into(),
            ]
        }
        types => {
            let c = heterogeneous::optimal_threshold(p, types)?;
            vec![
                p.horizon.into(),
                p.r.into(),
                types.len().into(),
                Cell::Empty,
                Cell::Empty,
                c.root.into(),
                c.t_th_star.into(),
                c.cost.into(),
                c.capped.into(),
                config.seed().into(),
            ]
        }
    };
    Ok(vec![vec![row]])
}

fn select_rows(config: &ExperimentConfig, point: &Point) -> Result<Rows> {
    let p = &point.market;
    let choice = select_client_types(p, &point.types)?;
    let capped = choice.cap_active.iter().flatten().any(|&c| c);
    Ok(vec![vec![vec![
        p.horizon.into(),
        point.types.len().into(),
        choice.j_star.into(),
        choice.t_th_star.into(),
        choice.cost.into(),
        capped.into(),
        config.seed().into(),
    ]]])
}

fn simulate_rows(config: &ExperimentConfig, point: &Point) -> Result<Rows> {
    let p = &point.market;
    let plan = Plan::new(config, point)?;
    let noise = plan.noise(point.delta)?;
    let mc_config = replica_config(config, noise).expect("simulate always has a replica count");
    let mc = monte_carlo_cost(p, &plan.types, plan.t_th, &plan.schedule, &mc_config)?;
    let path = expected_path(p, plan.t_th, &plan.schedule, &plan.types)?;
    let expected = expected_acceptance(p, &plan.types, plan.t_th, &plan.schedule)?;
    let summary = vec![
        p.horizon.into(),
        plan.t_th.into(),
        plan.types.len().into(),
        mc.replicas.into(),
        path.breakdown().total.into(),
        mc.mean_cost.into(),
        mc.std_error.into(),
        path.final_data().into(),
        mc.mean_final_data.into(),
        mc.final_data_se.into(),
        config.seed().into(),
    ];
    let slots = (0..plan.t_th as usize)
        .map(|t| {
            vec![
                p.horizon.into(),
                plan.t_th.into(),
                t.into(),
                plan.schedule.prices[t][0].into(),
                expected[t].into(),
                mc.acceptance_rate[t].into(),
                mc.acceptance_se[t].into(),
                config.seed().into(),
            ]
        })
        .collect();
    Ok(vec![vec![summary], slots])
}

fn compare_rows(config: &ExperimentConfig, point: &Point) -> Result<Rows> {
    let ty = single_type(point, Job::Compare)?;
    let mc = replica_config(config, None);
    let row = compare_static_dynamic(&point.market, &ty, &[point.market.horizon], mc.as_ref())?
        .pop()
        .expect("one horizon in, one row out");
    let mean = |m: &Option<dynprice::simulator::MonteCarloEstimate>| -> (Cell, Cell) {
        match m {
            Some(m) => (m.mean_cost.into(), m.std_error.into()),
            None => (Cell::Empty, Cell::Empty),
        }
    };
    let (dyn_mc, dyn_se) = mean(&row.dynamic_mc);
    let (stat_mc, stat_se) = mean(&row.static_mc);
    Ok(vec![vec![vec![
        row.horizon.into(),
        row.dynamic_t_th.into(),
        row.static_t_th.into(),
        row.dynamic_cost.into(),
        row.static_cost.into(),
        row.gap().into(),
        dyn_mc,
        dyn_se,
        stat_mc,
        stat_se,
        config.seed().into(),
    ]]])
}

fn robustness_rows(config: &ExperimentConfig, point: &Point) -> Result<Rows> {
    let p = &point.market;
    let delta = point.delta.ok_or_else(|| {
        CliError::Config("`robustness` needs a noise half-width (`delta` or --delta)".into())
    })?;
    let plan = Plan::new(config, point)?;
    let noise = plan.noise(Some(delta))?.expect("delta given");
    let nominal = evaluate_schedule(p, plan.t_th, &plan.schedule, &plan.types)?.total;
    let worst = worst_case_cost(p, &plan.types, plan.t_th, &noise)?.total;
    let phi = phi_bound(p, &plan.types, plan.t_th, &noise)?;
    let (mc_mean, mc_se) = match replica_config(config, Some(noise)) {
        Some(cfg) => {
            let mc = monte_carlo_cost(p, &plan.types, plan.t_th, &plan.schedule, &cfg)?;
            (mc.mean_cost.into(), mc.std_error.into())
        }
        None => (Cell::Empty, Cell::Empty),
    };
    Ok(vec![vec![vec![
        p.horizon.into(),
        delta.into(),
        plan.types.len().into(),
        plan.t_th.into(),
        nominal.into(),
        worst.into(),
        phi.into(),
        mc_mean,
        mc_se,
        config.seed().into(),
    ]]])
}

fn headers(job: Job) -> Vec<(&'static str, &'static [&'static str])> {
    match job {
        Job::Price => vec![(
            "",
            &[
                "T",
                "t_th",
                "type",
                "t",
                "price",
                "cap",
                "cap_active",
                "seed",
            ],
        )],
        Job::Threshold => vec![(
            "",
            &[
                "T", "r", "types", "psi_bar", "regime", "root", "t_th", "cost", "capped", "seed",
            ],
        )],
        Job::SelectTypes => vec![(
            "",
            &["T", "types", "j_star", "t_th", "cost", "capped", "seed"],
        )],
        Job::Simulate => vec![
            (
                "",
                &[
                    "T",
                    "t_th",
                    "j",
                    "replicas",
                    "analytic_cost",
                    "mc_cost",
                    "mc_se",
                    "analytic_final_data",
                    "mc_final_data",
                    "mc_final_data_se",
                    "seed",
                ],
            ),
            (
                "slots",
                &[
                    "T",
                    "t_th",
                    "t",
                    "price",
                    "expected_acceptance",
                    "acceptance_rate",
                    "acceptance_se",
                    "seed",
                ],
            ),
        ],
        Job::Compare => vec![(
            "",
            &[
                "T",
                "dynamic_t_th",
                "static_t_th",
                "dynamic_cost",
                "static_cost",
                "gap",
                "dynamic_mc",
                "dynamic_mc_se",
                "static_mc",
                "static_mc_se",
                "seed",
            ],
        )],
        Job::Robustness => vec![(
            "",
            &[
                "T",
                "delta",
                "j",
                "t_th",
                "nominal_cost",
                "worst_cost",
                "phi",
                "mc_cost",
                "mc_se",
                "seed",
            ],
        )],
    }
}

fn check_seed(config: &ExperimentConfig) -> Result<()> {
    // TOML integers are signed 64-bit, and manifests must stay loadable
    if config.seed() > i64::MAX as u64 {
        return Err(CliError::Config(format!(
            "seed {} exceeds {}",
            config.seed(),
            i64::MAX
        )));
    }
    Ok(())
}

/// Runs a resolved config.
///
/// Sweep points are evaluated concurrently and emitted in sweep order.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let job = config
        .job
        .ok_or_else(|| CliError::Internal("config not resolved".into()))?;
    check_seed(config)?;
    let points = config
        .points()
        .into_iter()
        .map(|v| config.point(v))
        .collect::<Result<Vec<_>>>()?;

    let mut warnings = Vec::new();
    for point in &points {
        let report = validate_params(&point.market, point.types.types());
        if !report.is_valid() {
            return Err(CliError::Validation(report.errors.join("; ")));
        }
        for w in report.warnings {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
    }

    let runner: fn(&ExperimentConfig, &Point) -> Result<Rows> = match job {
        Job::Price => price_rows,
        Job::Threshold => threshold_rows,
        Job::SelectTypes => select_rows,
        Job::Simulate => simulate_rows,
        Job::Compare => compare_rows,
        Job::Robustness => robustness_rows,
    };
    let results = points
        .par_iter()
        .map(|pt| runner(config, pt))
        .collect::<Result<Vec<_>>>()?;

    // axes that are not already a column get one in front
    let sweep_name = config.sweep.as_ref().map(|s| s.axis.name());
    let mut tables: Vec<(String, Table, bool)> = headers(job)
        .into_iter()
        .map(|(suffix, cols)| {
            let extra = sweep_name.filter(|name| !cols.contains(name));
            let mut header: Vec<&str> = extra.into_iter().collect();
            header.extend_from_slice(cols);
            (suffix.to_string(), Table::new(&header), extra.is_some())
        })
        .collect();
    for (point, groups) in points.iter().zip(results) {
        for ((_, table, extra), rows) in tables.iter_mut().zip(groups) {
            for row in rows {
                let mut full: Vec<Cell> = point
                    .sweep_value
                    .filter(|_| *extra)
                    .map(Cell::from)
                    .into_iter()
                    .collect();
                full.extend(row);
                table.push(full);
            }
        }
    }
    let tables = tables
        .into_iter()
        .map(|(suffix, table, _)| (suffix, table))
        .collect();
    Ok(RunOutput { tables, warnings })
}
