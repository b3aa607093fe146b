//! Experiment configuration: a TOML file, flag overrides and sweep axes.
//!
//! ```toml
//! job = "threshold"
//! t_th = 2            # fixed threshold; omitted means "use the optimum"
//! delta = 0.1         # noise half-width applied to every type
//!
//! [market]
//! alpha = 0.5
//! b = 1.0
//! r = 0.5
//! horizon = 10
//!
//! [types]
//! kind = "linear"     # or "single" (s, tau) or "list" (types = [{ s, tau, q }, ...])
//! n = 5
//! s0 = 1.0
//! mu = 1.0
//! beta = 0.01
//!
//! [sweep]
//! axis = "T"          # T, r, mu, beta or delta
//! values = [5, 6, 7]
//!
//! [sim]
//! seed = 1
//! replicas = 10000
//!
//! [output]
//! path = "results.csv"
//! ```
//!
//! Every field is optional. The manifest written next to each table is this
//! same format with all defaults and overrides filled in.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use dynprice::{ClientType, ClientTypeSet, MarketParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const DEFAULT_HORIZON: u32 = 10;
pub const DEFAULT_OUTPUT: &str = "results.csv";
/// Replicas for `simulate` when none are configured.
pub const DEFAULT_REPLICAS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Job {
    Price,
    Threshold,
    SelectTypes,
    Simulate,
    Compare,
    Robustness,
}

impl fmt::Display for Job {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Job::Price => "price",
            Job::Threshold => "threshold",
            Job::SelectTypes => "select-types",
            Job::Simulate => "simulate",
            Job::Compare => "compare",
            Job::Robustness => "robustness",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub alpha: Option<f64>,
    pub b: Option<f64>,
    pub r: Option<f64>,
    pub horizon: Option<u32>,
}

impl MarketSection {
    pub fn resolve(&self) -> MarketParams {
        let base = MarketParams::baseline(self.horizon.unwrap_or(DEFAULT_HORIZON));
        MarketParams {
            alpha: self.alpha.unwrap_or(base.alpha),
            b: self.b.unwrap_or(base.b),
            r: self.r.unwrap_or(base.r),
            horizon: base.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TypesSpec {
    Single {
        s: f64,
        tau: f64,
    },
    Linear {
        n: usize,
        s0: f64,
        mu: f64,
        beta: f64,
    },
    List {
        types: Vec<ClientType>,
    },
}

impl Default for TypesSpec {
    fn default() -> Self {
        let ty = ClientType::baseline();
        TypesSpec::Single {
            s: ty.s,
            tau: ty.tau,
        }
    }
}

impl TypesSpec {
    /// Five equally likely types starting at unit size, the reference heterogeneous setup.
    pub fn reference_family() -> Self {
        TypesSpec::Linear {
            n: 5,
            s0: 1.0,
            mu: 1.0,
            beta: 0.01,
        }
    }

    pub fn build(&self) -> Result<ClientTypeSet> {
        let set = match self {
            TypesSpec::Single { s, tau } => ClientTypeSet::single(ClientType::single(*s, *tau)),
            TypesSpec::Linear { n, s0, mu, beta } => {
                ClientTypeSet::linear_family(*n, *s0, *mu, *beta)
            }
            TypesSpec::List { types } => ClientTypeSet::new(types.clone()),
        };
        Ok(set?)
    }

    fn linear_mut(&mut self, name: &str) -> Result<(&mut f64, &mut f64)> {
        if let TypesSpec::Single { .. } = self {
            *self = Self::reference_family();
        }
        match self {
            TypesSpec::Linear { mu, beta, .. } => Ok((mu, beta)),
            _ => Err(linear_only(name)),
        }
    }

    fn set_mu(&mut self, value: f64) -> Result<()> {
        *self.linear_mut("mu")?.0 = value;
        Ok(())
    }

    fn set_beta(&mut self, value: f64) -> Result<()> {
        *self.linear_mut("beta")?.1 = value;
        Ok(())
    }
}

fn linear_only(name: &str) -> CliError {
    CliError::Config(format!(
        "`{name}` applies to a linear type family, not an explicit type list"
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    T,
    #[serde(rename = "r")]
    R,
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "delta")]
    Delta,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::T => "T",
            Axis::R => "r",
            Axis::Mu => "mu",
            Axis::Beta => "beta",
            Axis::Delta => "delta",
        }
    }
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" => Ok(Axis::T),
            "r" => Ok(Axis::R),
            "mu" => Ok(Axis::Mu),
            "beta" => Ok(Axis::Beta),
            "delta" => Ok(Axis::Delta),
            _ => Err(CliError::Config(format!(
                "unknown sweep axis `{s}` (expected T, r, mu, beta or delta)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = CliError;

    /// `AXIS=v1,v2,...` or `AXIS=start:end[:step]` (inclusive, step defaults to 1).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            CliError::Config(format!(
                "cannot parse sweep `{s}`; use AXIS=a,b,c or AXIS=start:end[:step]"
            ))
        };
        let (axis, spec) = s.split_once('=').ok_or_else(bad)?;
        let axis: Axis = axis.trim().parse()?;
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
        let values = if spec.contains(':') {
            let parts: Vec<&str> = spec.split(':').collect();
            let (start, end, step) = match parts.as_slice() {
                [a, b] => (num(a)?, num(b)?, 1.0),
                [a, b, c] => (num(a)?, num(b)?, num(c)?),
                _ => return Err(bad()),
            };
            if step.is_nan() || step <= 0.0 || end < start {
                return Err(bad());
            }
            let count = ((end - start) / step + 1e-9).floor() as usize;
            // round away accumulated binary error so manifests stay readable
            (0..=count)
                .map(|k| round12(start + k as f64 * step))
                .collect()
        } else {
            spec.split(',').map(num).collect::<Result<Vec<_>>>()?
        };
        if values.is_empty() {
            return Err(bad());
        }
        Ok(Sweep { axis, values })
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub job: Option<Job>,
    pub t_th: Option<u32>,
    pub delta: Option<f64>,
    #[serde(default)]
    pub market: MarketSection,
    pub types: Option<TypesSpec>,
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub out: Option<String>,
    pub horizon: Option<u32>,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
    pub b: Option<f64>,
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub t_th: Option<u32>,
    pub sweep: Option<Sweep>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Internal(e.to_string()))
    }

    /// Applies `job`, flag overrides and defaults, producing a config in
    /// which every field the job reads is set.
    pub fn resolve(mut self, job: Job, flags: &Overrides) -> Result<Self> {
        if let Some(existing) = self.job.filter(|j| *j != job) {
            return Err(CliError::Config(format!(
                "config is for job `{existing}` but `{job}` was requested"
            )));
        }
        self.job = Some(job);

        let market = &mut self.market;
        market.horizon = flags.horizon.or(market.horizon);
        market.r = flags.r.or(market.r);
        market.alpha = flags.alpha.or(market.alpha);
        market.b = flags.b.or(market.b);
        let resolved = market.resolve();
        *market = MarketSection {
            alpha: Some(resolved.alpha),
            b: Some(resolved.b),
            r: Some(resolved.r),
            horizon: Some(resolved.horizon),
        };

        let mut types = self.types.take().unwrap_or_else(|| match job {
            Job::SelectTypes | Job::Robustness => TypesSpec::reference_family(),
            _ => TypesSpec::default(),
        });
        if let Some(mu) = flags.mu {
            types.set_mu(mu)?;
        }
        if let Some(beta) = flags.beta {
            types.set_beta(beta)?;
        }
        self.types = Some(types);

        self.t_th = flags.t_th.or(self.t_th);
        self.delta = flags.delta.or(self.delta);
        if flags.sweep.is_some() {
            self.sweep = flags.sweep.clone();
        }
        self.sim.seed = Some(flags.seed.or(self.sim.seed).unwrap_or(0));
        self.sim.replicas = flags.replicas.or(self.sim.replicas);
        if job == Job::Simulate && self.sim.replicas.is_none() {
            self.sim.replicas = Some(DEFAULT_REPLICAS);
        }
        self.output.path = Some(
            flags
                .out
                .clone()
                .or(self.output.path.take())
                .unwrap_or_else(|| DEFAULT_OUTPUT.into()),
        );
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.sim.seed.unwrap_or(0)
    }

    pub fn output_path(&self) -> &str {
        self.output.path.as_deref().unwrap_or(DEFAULT_OUTPUT)
    }

    pub fn types_spec(&self) -> TypesSpec {
        self.types.clone().unwrap_or_default()
    }

    /// Parameters of one sweep point (or the single point without a sweep).
    pub fn point(&self, value: Option<f64>) -> Result<Point> {
        let mut market = self.market.resolve();
        let mut types = self.types_spec();
        let mut delta = self.delta;
        if let (Some(sweep), Some(v)) = (&self.sweep, value) {
            match sweep.axis {
                Axis::T => {
                    if v.fract() != 0.0 || !(2.0..=f64::from(u32::MAX)).contains(&v) {
                        return Err(CliError::Validation(format!(
                            "horizon sweep value {v} is not an integer >= 2"
                        )));
                    }
                    market.horizon = v as u32;
                }
                Axis::R => market.r = v,
                Axis::Mu => types.set_mu(v)?,
                Axis::Beta => types.set_beta(v)?,
                Axis::Delta => delta = Some(v),
            }
        }
        Ok(Point {
            sweep_value: value,
            market,
            types: types.build()?,
            delta,
        })
    }

    /// The sweep values, or a single unnamed point.
    pub fn points(&self) -> Vec<Option<f64>> {
        match &self.sweep {
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        }
    }
}

/// Fully resolved inputs for one row group.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub sweep_value: Option<f64>,
    pub market: MarketParams,
    pub types: ClientTypeSet,
    pub delta: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_resolves_to_reference() {
        let cfg = ExperimentConfig::from_toml("")
            .unwrap()
            .resolve(Job::Threshold, &Overrides::default())
            .unwrap();
        let point = cfg.point(None).unwrap();
        assert_eq!(point.market, MarketParams::baseline(10));
        assert_eq!(point.types.types(), &[ClientType::baseline()]);
        assert_eq!(cfg.seed(), 0);
    }

    #[test]
    fn flags_win_over_file() {
        let text = "[market]\nr = 0.7\nhorizon = 20\n[sim]\nseed = 3\n";
        let flags = Overrides {
            r: Some(0.9),
            seed: Some(8),
            ..Default::default()
        };
        let cfg = ExperimentConfig::from_toml(text)
            .unwrap()
            .resolve(Job::Price, &flags)
            .unwrap();
        assert_eq!(cfg.market.r, Some(0.9));
        assert_eq!(cfg.market.horizon, Some(20));
        assert_eq!(cfg.seed(), 8);
    }

    #[test]
    fn manifest_round_trips() {
        let flags = Overrides {
            sweep: Some("r=0.5:0.95:0.05".parse().unwrap()),
            mu: Some(2.0),
            delta: Some(0.1),
            ..Default::default()
        };
        let cfg = ExperimentConfig::default()
            .resolve(Job::Robustness, &flags)
            .unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(
            again
                .resolve(Job::Robustness, &Overrides::default())
                .unwrap(),
            cfg
        );
    }

    #[test]
    fn sweep_syntax() {
        let s: Sweep = "T=5:8".parse().unwrap();
        assert_eq!(s.values, vec![5.0, 6.0, 7.0, 8.0]);
        let s: Sweep = "r=0.5:0.6:0.05".parse().unwrap();
        assert_eq!(s.values, vec![0.5, 0.55, 0.6]);
        let s: Sweep = "beta=1,0.1".parse().unwrap();
        assert_eq!(s.axis, Axis::Beta);
        assert!("alpha=1".parse::<Sweep>().is_err());
        assert!("T=5:1".parse::<Sweep>().is_err());
    }

    #[test]
    fn job_mismatch_and_unknown_keys_rejected() {
        let cfg = ExperimentConfig::from_toml("job = \"price\"").unwrap();
        assert!(matches!(
            cfg.resolve(Job::Compare, &Overrides::default()),
            Err(CliError::Config(_))
        ));
        assert!(ExperimentConfig::from_toml("[market]\ngamma = 1").is_err());
    }

    #[test]
    fn mu_on_explicit_list_is_a_config_error() {
        let text = "[types]\nkind = \"list\"\ntypes = [{ s = 1.0, tau = 0.5, q = 1.0 }]\n";
        let flags = Overrides {
            mu: Some(2.0),
            ..Default::default()
        };
        assert!(ExperimentConfig::from_toml(text)
            .unwrap()
            .resolve(Job::SelectTypes, &flags)
            .is_err());
    }
}
