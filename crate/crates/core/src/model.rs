//! Shared domain types, parameter validation, the accuracy-loss surrogate and
//! the schedule evaluator every other module builds on.
//!
//! The evaluator runs the expected-data recursion
//!
//! ```text
//! B(0) = 0
//! B(t+1) = r * (B(t) + sum_i alpha * q_i * s_i * p_i(t) / (b * tau_i * D))
//! ```
//!
//! and accumulates the expected payment `sum_t sum_i alpha * q_i * p_i(t)^2 / (b * tau_i * D)`,
//! where `D = (T - T_th) / tau_max` is the number of synchronous training
//! iterations left after recruitment. The objective is
//! `payment + 1/sqrt(B(T_th) * D) + 1/D`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when comparing candidate costs.
pub const COST_TIE_TOL: f64 = 1e-12;

/// Relative slack allowed when checking a price against its cap.
const CAP_SLACK: f64 = 1e-12;

/// Tolerance on the population shares before they are rejected.
const SHARE_SUM_TOL: f64 = 1e-6;

/// The environment the server faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Probability that a client arrives in a slot.
    pub alpha: f64,
    /// Upper bound of the clients' unit training cost.
    pub b: f64,
    /// Per-slot data-aging discount.
    pub r: f64,
    /// Total horizon `T` in slots.
    pub horizon: u32,
}

impl MarketParams {
    pub fn new(alpha: f64, b: f64, r: f64, horizon: u32) -> Result<Self> {
        let params = Self {
            alpha,
            b,
            r,
            horizon,
        };
        params.check()?;
        Ok(params)
    }

    /// `alpha = 0.5, b = 1, r = 0.5`, the setting used for the reference experiments.
    pub fn baseline(horizon: u32) -> Self {
        Self {
            alpha: 0.5,
            b: 1.0,
            r: 0.5,
            horizon,
        }
    }

    pub fn check(&self) -> Result<()> {
        match hard_param_errors(self).into_iter().next() {
            Some(msg) => Err(Error::InvalidParams(msg)),
            None => Ok(()),
        }
    }

    pub fn check_threshold(&self, t_th: u32) -> Result<()> {
        let max = self.horizon.saturating_sub(1);
        if t_th < 1 || t_th > max {
            return Err(Error::ThresholdOutOfRange { t_th, max });
        }
        Ok(())
    }

    /// Training slots `T - T_th`.
    pub fn training_slots(&self, t_th: u32) -> f64 {
        f64::from(self.horizon) - f64::from(t_th)
    }

    pub fn with_horizon(self, horizon: u32) -> Self {
        Self { horizon, ..self }
    }

    pub fn with_r(self, r: f64) -> Self {
        Self { r, ..self }
    }
}

/// One heterogeneity class of clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientType {
    /// Data size contributed by one client.
    pub s: f64,
    /// Training time per global iteration, in slots.
    pub tau: f64,
    /// Share of the arriving population.
    pub q: f64,
}

impl ClientType {
    pub fn new(s: f64, tau: f64, q: f64) -> Result<Self> {
        let ty = Self { s, tau, q };
        if let Some(msg) = type_errors(&ty).into_iter().next() {
            return Err(Error::InvalidParams(msg));
        }
        Ok(ty)
    }

    /// A homogeneous population: share 1.
    pub fn single(s: f64, tau: f64) -> Self {
        Self { s, tau, q: 1.0 }
    }

    /// `s = 1, tau = 0.5`, the homogeneous reference client.
    pub fn baseline() -> Self {
        Self::single(1.0, 0.5)
    }

    /// Data size per unit training time.
    pub fn training_rate(&self) -> f64 {
        self.s / self.tau
    }
}

/// Client types sorted by strictly ascending `(s, tau)` with shares summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClientType>", into = "Vec<ClientType>")]
pub struct ClientTypeSet {
    types: Vec<ClientType>,
}

impl ClientTypeSet {
    /// Shares within `1e-6` of summing to one are renormalized; anything
    /// further off is rejected.
    pub fn new(mut types: Vec<ClientType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InvalidParams("client type set is empty".into()));
        }
        let errors = type_set_errors(&types);
        if let Some(msg) = errors.into_iter().next() {
            return Err(Error::InvalidParams(msg));
        }
        let total: f64 = types.iter().map(|t| t.q).sum();
        for ty in &mut types {
            ty.q /= total;
        }
        Ok(Self { types })
    }

    pub fn single(ty: ClientType) -> Result<Self> {
        Self::new(vec![ClientType { q: 1.0, ..ty }])
    }

    /// `n` equally likely types with `s_i = s0 + (i-1) * mu` and `tau_i = beta * s_i`.
    pub fn linear_family(n: usize, s0: f64, mu: f64, beta: f64) -> Result<Self> {
        let q = 1.0 / n as f64;
        let types = (0..n)
            .map(|i| {
                let s = s0 + i as f64 * mu;
                ClientType {
                    s,
                    tau: beta * s,
                    q,
                }
            })
            .collect();
        Self::new(types)
    }

    pub fn types(&self) -> &[ClientType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// The first `j` types (`1 <= j <= N`).
    pub fn prefix(&self, j: usize) -> &[ClientType] {
        &self.types[..j]
    }
}

impl TryFrom<Vec<ClientType>> for ClientTypeSet {
    type Error = Error;

    fn try_from(types: Vec<ClientType>) -> Result<Self> {
        Self::new(types)
    }
}

impl From<ClientTypeSet> for Vec<ClientType> {
    fn from(set: ClientTypeSet) -> Self {
        set.types
    }
}

/// Split of the horizon into recruitment and training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonSplit {
    pub t_th: u32,
    /// Number of global iterations; kept real-valued.
    pub d: f64,
}

impl HorizonSplit {
    pub fn new(params: &MarketParams, t_th: u32, tau: f64) -> Result<Self> {
        Ok(Self {
            t_th,
            d: iterations(params, t_th, tau)?,
        })
    }
}

/// Prices per recruitment slot, one column per client type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    /// `prices[t][i]` is the price offered to type `i` in slot `t`.
    pub prices: Vec<Vec<f64>>,
    /// Whether the participation cap was binding at `(t, i)`.
    pub cap_active: Vec<Vec<bool>>,
}

impl PriceSchedule {
    pub fn from_rows(prices: Vec<Vec<f64>>) -> Self {
        let cap_active = prices.iter().map(|row| vec![false; row.len()]).collect();
        Self { prices, cap_active }
    }

    /// Homogeneous schedule: one price per slot.
    pub fn scalar(prices: Vec<f64>) -> Self {
        Self::from_rows(prices.into_iter().map(|p| vec![p]).collect())
    }

    /// A flat schedule repeating `price` for every type over `slots` slots.
    pub fn flat(price: f64, slots: usize, types: usize) -> Self {
        Self::from_rows(vec![vec![price; types]; slots])
    }

    pub fn slots(&self) -> usize {
        self.prices.len()
    }

    /// Prices of the first type, one per slot.
    pub fn first_column(&self) -> Vec<f64> {
        self.prices.iter().map(|row| row[0]).collect()
    }

    pub fn any_capped(&self) -> bool {
        self.cap_active.iter().flatten().any(|&c| c)
    }

    pub fn max_price(&self) -> f64 {
        self.prices.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Same schedule with every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_rows(
            self.prices
                .iter()
                .map(|row| row.iter().map(|p| p * factor).collect())
                .collect(),
        )
    }
}

/// Components of the server's total expected cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub payment: f64,
    /// `1/sqrt(B(T_th) * D)`; infinite when no data was recruited.
    pub accuracy_loss: f64,
    /// `1/D`.
    pub iteration_loss: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(payment: f64, accuracy_loss: f64, iteration_loss: f64) -> Self {
        Self {
            payment,
            accuracy_loss,
            iteration_loss,
            total: payment + accuracy_loss + iteration_loss,
        }
    }

    /// Build from a final data size, using the infinite sentinel for `B = 0`.
    pub fn from_data(payment: f64, final_data: f64, d: f64) -> Self {
        Self::new(payment, accuracy_term(final_data, d), 1.0 / d)
    }
}

/// What happened in one recruitment slot of a simulated replica.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClientEvent {
    pub slot: usize,
    pub arrived: bool,
    /// Index into the offered types; `None` when nobody arrived or the
    /// arrival belongs to a type that was not invited.
    pub client_type: Option<usize>,
    /// Private unit cost, present when a client arrived.
    pub cost: Option<f64>,
    /// Price offered to the arriving client (0 if none).
    pub price: f64,
    pub accepted: bool,
    /// `price - cost * tau_i * D` when accepted, else 0.
    pub payoff: f64,
    /// Data added to the pool before aging.
    pub contribution: f64,
}

/// Findings from [`validate_params`]: hard errors break type invariants,
/// warnings flag parameters outside the regime where the closed forms are
/// guaranteed (`alpha >= 0.5`, `b >= 1`, `r >= 0.5`, `s/tau >= 1`).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_clean(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }
}

fn hard_param_errors(p: &MarketParams) -> Vec<String> {
    let mut errors = Vec::new();
    if !(p.alpha > 0.0 && p.alpha <= 1.0) {
        errors.push(format!(
            "arrival rate must satisfy 0 < alpha <= 1 (got {})",
            p.alpha
        ));
    }
    if !(p.b > 0.0) || !p.b.is_finite() {
        errors.push(format!("cost bound must satisfy b > 0 (got {})", p.b));
    }
    if !(p.r > 0.0) {
        errors.push(format!("aging factor must satisfy r > 0 (got {})", p.r));
    }
    if !(p.r < 1.0) {
        errors.push(format!("aging factor must satisfy r < 1 (got {})", p.r));
    }
    if p.horizon < 2 {
        errors.push(format!("horizon must satisfy T >= 2 (got {})", p.horizon));
    }
    errors
}

fn type_errors(ty: &ClientType) -> Vec<String> {
    let mut errors = Vec::new();
    if !(ty.s > 0.0) || !ty.s.is_finite() {
        errors.push(format!("data size must be positive (got {})", ty.s));
    }
    if !(ty.tau > 0.0) || !ty.tau.is_finite() {
        errors.push(format!("training time must be positive (got {})", ty.tau));
    }
    if !(ty.q > 0.0 && ty.q <= 1.0) {
        errors.push(format!(
            "population share must lie in (0, 1] (got {})",
            ty.q
        ));
    }
    errors
}

fn type_set_errors(types: &[ClientType]) -> Vec<String> {
    let mut errors: Vec<String> = types.iter().flat_map(type_errors).collect();
    for (i, pair) in types.windows(2).enumerate() {
        if !(pair[0].s < pair[1].s && pair[0].tau < pair[1].tau) {
            errors.push(format!(
                "types {} and {} are not strictly ascending in (s, tau)",
                i + 1,
                i + 2
            ));
        }
    }
    let total: f64 = types.iter().map(|t| t.q).sum();
    if (total - 1.0).abs() > SHARE_SUM_TOL {
        errors.push(format!("population shares sum to {total}, expected 1"));
    }
    errors
}

/// Check market parameters and a client type list.
pub fn validate_params(params: &MarketParams, types: &[ClientType]) -> ValidationReport {
    let mut report = ValidationReport {
        errors: hard_param_errors(params),
        warnings: Vec::new(),
    };
    if types.is_empty() {
        report.errors.push("client type set is empty".into());
    } else {
        report.errors.extend(type_set_errors(types));
    }

    if params.alpha < 0.5 {
        report.warnings.push(format!(
            "arrival rate below guaranteed regime (alpha = {} < 0.5)",
            params.alpha
        ));
    }
    if params.b < 1.0 {
        report.warnings.push(format!(
            "cost bound below guaranteed regime (b = {} < 1)",
            params.b
        ));
    }
    if params.r < 0.5 {
        report.warnings.push(format!(
            "aging factor below guaranteed regime (r = {} < 0.5)",
            params.r
        ));
    }
    for (i, ty) in types.iter().enumerate() {
        if ty.s > 0.0 && ty.tau > 0.0 && ty.training_rate() < 1.0 {
            report.warnings.push(format!(
                "type {} training rate below guaranteed regime (s/tau = {} < 1)",
                i + 1,
                ty.training_rate()
            ));
        }
    }
    report
}

/// `1/sqrt(B * D) + 1/D`.
pub fn accuracy_loss(data: f64, d: f64) -> Result<f64> {
    if !(data > 0.0) {
        return Err(Error::Domain(format!(
            "data size must be positive (got {data})"
        )));
    }
    if !(d > 0.0) {
        return Err(Error::Domain(format!(
            "iteration count must be positive (got {d})"
        )));
    }
    Ok(1.0 / (data * d).sqrt() + 1.0 / d)
}

/// `1/sqrt(B * D)` with `+inf` for an empty data pool.
pub fn accuracy_term(data: f64, d: f64) -> f64 {
    if data > 0.0 {
        1.0 / (data * d).sqrt()
    } else {
        f64::INFINITY
    }
}

/// Global iterations `(T - T_th) / tau`.
pub fn iterations(params: &MarketParams, t_th: u32, tau: f64) -> Result<f64> {
    params.check_threshold(t_th)?;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!(
            "training time must be positive (got {tau})"
        )));
    }
    Ok(params.training_slots(t_th) / tau)
}

/// Longest per-iteration training time among `types`; synchronous rounds wait for it.
pub fn governing_tau(types: &[ClientType]) -> f64 {
    types.iter().map(|t| t.tau).fold(0.0, f64::max)
}

pub(crate) fn check_prefix(types: &[ClientType]) -> Result<()> {
    if types.is_empty() {
        return Err(Error::Precondition(
            "selected client types must be nonempty".into(),
        ));
    }
    if let Some(msg) = types.iter().flat_map(type_errors).next() {
        return Err(Error::InvalidParams(msg));
    }
    Ok(())
}

/// Expected payment and data trajectory `B(0..=T_th)` of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedPath {
    pub payment: f64,
    pub data: Vec<f64>,
    pub d: f64,
}

impl ExpectedPath {
    pub fn final_data(&self) -> f64 {
        *self.data.last().expect("path includes B(0)")
    }

    pub fn breakdown(&self) -> CostBreakdown {
        CostBreakdown::from_data(self.payment, self.final_data(), self.d)
    }
}

/// Run the expected-data recursion with per-type contributed sizes `sizes`
/// (normally `s_i`; the robustness module passes `s_i - delta_i`).
pub fn expected_path_with_sizes(
    params: &MarketParams,
    t_th: u32,
    schedule: &PriceSchedule,
    types: &[ClientType],
    sizes: &[f64],
) -> Result<ExpectedPath> {
    check_prefix(types)?;
    let d = iterations(params, t_th, governing_tau(types))?;
    if schedule.slots() != t_th as usize {
        return Err(Error::MalformedSchedule(format!(
            "schedule has {} slots, expected {t_th}",
            schedule.slots()
        )));
    }
    if sizes.len() != types.len() {
        return Err(Error::MalformedSchedule(format!(
            "{} data sizes for {} types",
            sizes.len(),
            types.len()
        )));
    }

    let mut data = Vec::with_capacity(t_th as usize + 1);
    let mut level = 0.0;
    let mut payment = 0.0;
    data.push(level);
    for (slot, row) in schedule.prices.iter().enumerate() {
        if row.len() != types.len() {
            return Err(Error::MalformedSchedule(format!(
                "slot {slot} has {} prices for {} types",
                row.len(),
                types.len()
            )));
        }
        let mut inflow = 0.0;
        for (i, ((ty, &size), &price)) in types.iter().zip(sizes).zip(row).enumerate() {
            let cap = params.b * ty.tau * d;
            if !(price >= 0.0) {
                return Err(Error::MalformedSchedule(format!(
                    "price {price} for type {i} at slot {slot} is not a nonnegative number"
                )));
            }
            if price > cap * (1.0 + CAP_SLACK) {
                return Err(Error::CapViolation {
                    type_index: i,
                    slot,
                    price,
                    cap,
                });
            }
            let accept = params.alpha * ty.q * price / cap;
            inflow += accept * size;
            payment += accept * price;
        }
        level = params.r * (level + inflow);
        data.push(level);
    }
    Ok(ExpectedPath { payment, data, d })
}

/// Expected payment and data trajectory of a schedule.
pub fn expected_path(
    params: &MarketParams,
    t_th: u32,
    schedule: &PriceSchedule,
    types: &[ClientType],
) -> Result<ExpectedPath> {
    let sizes: Vec<f64> = types.iter().map(|t| t.s).collect();
    expected_path_with_sizes(params, t_th, schedule, types, &sizes)
}

/// Total expected cost of any schedule, optimal or not.
pub fn evaluate_schedule(
    params: &MarketParams,
    t_th: u32,
    schedule: &PriceSchedule,
    types: &[ClientType],
) -> Result<CostBreakdown> {
    Ok(expected_path(params, t_th, schedule, types)?.breakdown())
}
