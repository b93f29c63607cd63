//! JSON file formats.

use std::fmt;
use std::path::Path;

use ad_market::{EquilibriumReport, Market, MarketError, Solution, Q};
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum InputError {
    Io(String, std::io::Error),
    Json(String, serde_json::Error),
    Market(MarketError),
    Field(String),
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputError::Io(p, e) => write!(f, "{p}: {e}"),
            InputError::Json(p, e) => write!(f, "{p}: {e}"),
            InputError::Market(e) => write!(f, "invalid market: {e}"),
            InputError::Field(m) => f.write_str(m),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub utilities: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl InstanceFile {
    pub fn market(&self) -> Result<Market, InputError> {
        Market::new(self.utilities.clone()).map_err(InputError::Market)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: String,
    pub den: String,
}

impl From<&Q> for Fraction {
    fn from(q: &Q) -> Self {
        Fraction { num: q.numer().to_string(), den: q.denom().to_string() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub prices: Vec<String>,
    pub denominator: String,
    pub allocations: Vec<Vec<Fraction>>,
    pub iterations: u64,
    pub mode: String,
    pub verified: bool,
}

impl SolutionFile {
    pub fn new(sol: &Solution) -> Self {
        SolutionFile {
            prices: sol.prices.iter().map(|p| p.to_string()).collect(),
            denominator: "1".to_string(),
            allocations: sol.allocations().iter().map(|row| row.iter().map(Fraction::from).collect()).collect(),
            iterations: sol.iterations(),
            mode: sol.mode.as_str().to_string(),
            verified: sol.report.is_equilibrium(),
        }
    }

    /// Prices as integers. Equilibria are invariant under scaling, so the
    /// denominator only has to be a positive integer.
    pub fn integer_prices(&self) -> Result<Vec<BigInt>, InputError> {
        let den: BigInt =
            self.denominator.parse().map_err(|_| InputError::Field(format!("bad denominator `{}`", self.denominator)))?;
        if den <= BigInt::from(0) {
            return Err(InputError::Field("denominator must be positive".to_string()));
        }
        self.prices
            .iter()
            .map(|s| s.parse::<BigInt>().map_err(|_| InputError::Field(format!("bad price `{s}`"))))
            .collect()
    }
}

/// `EquilibriumReport` with decimal strings.
#[derive(Clone, Debug, Serialize)]
pub struct ReportFile {
    pub equilibrium: bool,
    pub prices_positive: bool,
    pub flow_value: Fraction,
    pub total: Fraction,
    pub unspent_buyers: Vec<usize>,
    pub unsold_goods: Vec<usize>,
    pub violations: Vec<String>,
}

impl ReportFile {
    pub fn new(r: &EquilibriumReport) -> Self {
        let mut violations = Vec::new();
        if !r.prices_positive {
            violations.push("non-positive price".to_string());
        }
        violations.extend(r.unspent_buyers.iter().map(|i| format!("buyer {i} cannot spend its budget")));
        violations.extend(r.unsold_goods.iter().map(|j| format!("good {j} is not sold completely")));
        ReportFile {
            equilibrium: r.is_equilibrium(),
            prices_positive: r.prices_positive,
            flow_value: Fraction::from(&r.flow_value),
            total: Fraction::from(&r.total),
            unspent_buyers: r.unspent_buyers.clone(),
            unsold_goods: r.unsold_goods.clone(),
            violations,
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, InputError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| InputError::Io(name.clone(), e))?;
    serde_json::from_str(&text).map_err(|e| InputError::Json(name, e))
}

pub fn read_instance(path: &Path) -> Result<(InstanceFile, Market), InputError> {
    let inst: InstanceFile = read_json(path)?;
    let market = inst.market()?;
    Ok((inst, market))
}
