//! The main price-raising loop in exact and fixed-precision arithmetic, and the
//! end-to-end [`solve`] that handles reducible markets.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::balanced_flow::{balance, surplus_of, SurplusVector};
use crate::extraction::{extract, ExtractionError, Extraction};
use crate::flow::{EqualityNetwork, FlowError, FlowState};
use crate::market::{compose_equilibria, reduce_prices, scc_decompose, Market, MarketError};
use crate::numerics::{bitlength, NumericsError, Profile, SolverConstants};
use crate::parallel::{map_items, Execution};
use crate::price_update::{
    apply_update_exact, augment_new_edge, choose_factor, compute_x_23_x_24, compute_x_eq_exact, compute_x_eq_power,
    first_new_edge, select_active_set, transfer_flow_power, ActiveSet, BindingEvent, UpdateError, UpdateFactors,
};
use crate::verify::{check_equilibrium, EquilibriumReport};
use crate::Q;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("market is not strongly connected; use `solve` for the general case")]
    Reducible,
    #[error("iteration cap of {cap} reached with total surplus {surplus}")]
    IterationCap { cap: u64, surplus: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("iteration {iteration}: a price needs {bits} bits, above the limit of {limit}")]
    BitlengthLimit { iteration: u64, bits: u64, limit: u64 },
    #[error("final prices failed verification: {0}")]
    VerificationFailed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Fixed,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Fixed => "fixed",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Mode::Exact),
            "fixed" => Ok(Mode::Fixed),
            other => Err(format!("unknown mode `{other}` (expected exact|fixed)")),
        }
    }
}

pub const EXACT_ITERATION_CAP: u64 = 200;

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub mode: Mode,
    pub profile: Profile,
    pub max_iterations: Option<u64>,
    /// Keep a record per iteration.
    pub record_trace: bool,
    /// Rerun a component with paper constants when the fast profile fails.
    pub fallback: bool,
    /// Exact mode warns once any price needs more bits than this.
    pub bitlength_warning: u64,
    /// Exact mode gives up once any price needs more bits than this.
    pub bitlength_limit: Option<u64>,
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: Mode::Fixed,
            profile: Profile::Fast,
            max_iterations: None,
            record_trace: false,
            fallback: true,
            bitlength_warning: 2048,
            bitlength_limit: Some(1 << 14),
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn exact(profile: Profile) -> Self {
        SolverConfig { mode: Mode::Exact, profile, ..Default::default() }
    }

    pub fn fixed(profile: Profile) -> Self {
        SolverConfig { mode: Mode::Fixed, profile, ..Default::default() }
    }

    pub fn iteration_cap(&self, n: usize, u_max: u64) -> u64 {
        if let Some(cap) = self.max_iterations {
            return cap;
        }
        match self.mode {
            Mode::Exact => EXACT_ITERATION_CAP,
            Mode::Fixed => {
                let n = n as u64;
                let log = crate::numerics::ceil_log2(&BigUint::from(n * u_max)).max(1);
                64 * n.pow(5) * log
            }
        }
    }
}

/// Size of an update: an exact factor or an exponent of `1 + 1/L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Factor {
    Exact(Q),
    Exponent(BigUint),
}

impl std::fmt::Display for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Factor::Exact(x) => write!(f, "{x}"),
            Factor::Exponent(k) => write!(f, "(1+1/L)^{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IterationKind {
    #[serde(rename = "XMAX")]
    XMax,
    #[serde(rename = "BALANCING")]
    Balancing,
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: u64,
    pub kind: IterationKind,
    pub binding: BindingEvent,
    pub x: Factor,
    pub active_buyers: usize,
    /// Surplus of the last active buyer.
    pub threshold: Q,
    pub l1_before: Q,
    pub l2_sq_before: Q,
    pub l1_after: Q,
    pub l2_sq_after: Q,
    /// Largest price after the update (rounded in fixed mode).
    pub max_price: Q,
    /// Largest price exponent after the update (fixed mode).
    pub max_exponent: Option<BigUint>,
    /// Exponent reductions needed to keep the transferred flow feasible.
    pub backoff: u32,
    pub clamped: bool,
}

/// One line of a JSON trace.
#[derive(Clone, Debug, Serialize)]
pub struct TraceLine {
    pub iteration: u64,
    pub kind: IterationKind,
    pub binding: &'static str,
    pub x: String,
    pub ell: usize,
    pub threshold: String,
    pub l1_before: String,
    pub l2_sq_before: String,
    pub l1_after: String,
    pub l2_sq_after: String,
    pub l1_after_approx: f64,
    pub max_price: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_exponent: Option<String>,
    pub backoff: u32,
    pub clamped: bool,
}

impl IterationRecord {
    pub fn to_line(&self) -> TraceLine {
        TraceLine {
            iteration: self.iteration,
            kind: self.kind,
            binding: self.binding.as_str(),
            x: self.x.to_string(),
            ell: self.active_buyers,
            threshold: self.threshold.to_string(),
            l1_before: self.l1_before.to_string(),
            l2_sq_before: self.l2_sq_before.to_string(),
            l1_after: self.l1_after.to_string(),
            l2_sq_after: self.l2_sq_after.to_string(),
            l1_after_approx: crate::numerics::to_f64(&self.l1_after),
            max_price: self.max_price.to_string(),
            max_exponent: self.max_exponent.as_ref().map(|k| k.to_string()),
            backoff: self.backoff,
            clamped: self.clamped,
        }
    }
}

/// Prices as maintained by the loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PriceState {
    Exact(Vec<Q>),
    /// Exponents of `1 + 1/L` and the rounded prices used as capacities.
    Power { exponents: Vec<BigUint>, caps: Vec<Q> },
}

impl PriceState {
    /// Capacities of the network: the prices or their rounded values.
    pub fn caps(&self) -> &[Q] {
        match self {
            PriceState::Exact(p) => p,
            PriceState::Power { caps, .. } => caps,
        }
    }
}

pub struct StateView<'a> {
    pub network: &'a EqualityNetwork,
    pub flow: &'a FlowState,
    pub prices: &'a PriceState,
    pub surplus: &'a SurplusVector,
}

pub struct IterationView<'a> {
    pub before: StateView<'a>,
    pub after: StateView<'a>,
    pub active: &'a ActiveSet,
    /// Exact-mode factors; fixed mode reports its exponent in the record.
    pub factors: Option<&'a UpdateFactors>,
    pub record: &'a IterationRecord,
}

/// Hook for inspecting the loop state.
pub trait Observer {
    fn initial(&mut self, _state: &StateView<'_>) {}
    fn iteration(&mut self, _view: &IterationView<'_>) {}
}

impl Observer for () {}

/// Result of the price-raising loop for a strongly connected market.
#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub mode: Mode,
    pub constants: SolverConstants,
    pub iterations: u64,
    pub network: EqualityNetwork,
    pub flow: FlowState,
    pub prices: PriceState,
    pub util_exp: Option<Vec<Vec<Option<BigUint>>>>,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

fn kind_of(binding: BindingEvent) -> IterationKind {
    if binding == BindingEvent::XMax {
        IterationKind::XMax
    } else {
        IterationKind::Balancing
    }
}

fn require_irreducible(market: &Market) -> Result<(), SolveError> {
    market.check_assumptions()?;
    if scc_decompose(market).components.len() != 1 {
        return Err(SolveError::Reducible);
    }
    Ok(())
}

fn max_q(v: &[Q]) -> Q {
    v.iter().max().cloned().unwrap_or_else(Q::zero)
}

/// Exact-rational loop.
pub fn solve_exact(market: &Market, config: &SolverConfig, observer: &mut dyn Observer) -> Result<LoopOutcome, SolveError> {
    require_irreducible(market)?;
    let n = market.n();
    let constants = SolverConstants::exact(n, market.u_max(), config.profile);
    let cap = config.iteration_cap(n, market.u_max());

    let mut prices = vec![Q::one(); n];
    let mut net = EqualityNetwork::exact(market, &prices);
    let mut flow = balance(&net, FlowState::zero(n))?;
    let mut surplus = surplus_of(&net, &flow);
    let mut state = PriceState::Exact(prices.clone());
    observer.initial(&StateView { network: &net, flow: &flow, prices: &state, surplus: &surplus });

    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut warned = false;
    let mut iteration = 0u64;
    while surplus.l1() >= constants.epsilon {
        if iteration >= cap {
            return Err(SolveError::IterationCap { cap, surplus: surplus.l1().to_string() });
        }
        iteration += 1;
        let active = select_active_set(&surplus.buyers, &net)?;
        let x_eq = compute_x_eq_exact(&active, market, &prices, &net);
        let (x_23, x_24) = compute_x_23_x_24(&active, &prices, &surplus.buyers);
        let factors = choose_factor(x_eq, x_23, x_24, constants.x_max.clone());
        let (new_prices, moved) = apply_update_exact(&prices, &flow, &factors.x, &active)?;
        let new_net = EqualityNetwork::exact(market, &new_prices);
        // the raised prices must leave every surplus non-negative
        moved.validate(&new_net)?;
        let moved = if factors.binding == BindingEvent::Equality {
            let edge = first_new_edge(&active, &new_net).expect("equality event creates an edge");
            augment_new_edge(&new_net, moved, edge, &active)?
        } else {
            moved
        };
        let new_flow = balance(&new_net, moved)?;
        let new_surplus = surplus_of(&new_net, &new_flow);
        let new_state = PriceState::Exact(new_prices.clone());

        let record = IterationRecord {
            iteration,
            kind: kind_of(factors.binding),
            binding: factors.binding,
            x: Factor::Exact(factors.x.clone()),
            active_buyers: active.size,
            threshold: active.threshold.clone(),
            l1_before: surplus.l1(),
            l2_sq_before: surplus.l2_sq(),
            l1_after: new_surplus.l1(),
            l2_sq_after: new_surplus.l2_sq(),
            max_price: max_q(&new_prices),
            max_exponent: None,
            backoff: 0,
            clamped: false,
        };
        observer.iteration(&IterationView {
            before: StateView { network: &net, flow: &flow, prices: &state, surplus: &surplus },
            after: StateView { network: &new_net, flow: &new_flow, prices: &new_state, surplus: &new_surplus },
            active: &active,
            factors: Some(&factors),
            record: &record,
        });
        let bits = new_prices.iter().map(bitlength).max().unwrap_or(0);
        if !warned && bits > config.bitlength_warning {
            warnings.push(format!("iteration {iteration}: price bitlength {bits} exceeds {}", config.bitlength_warning));
            warned = true;
        }
        if let Some(limit) = config.bitlength_limit {
            if bits > limit {
                return Err(SolveError::BitlengthLimit { iteration, bits, limit });
            }
        }
        if config.record_trace {
            trace.push(record);
        }
        prices = new_prices;
        net = new_net;
        flow = new_flow;
        surplus = new_surplus;
        state = new_state;
    }
    Ok(LoopOutcome {
        mode: Mode::Exact,
        constants,
        iterations: iteration,
        network: net,
        flow,
        prices: state,
        util_exp: None,
        trace,
        warnings,
    })
}

/// Fixed-precision loop over exponent prices and rounded capacities.
pub fn solve_fixed(market: &Market, config: &SolverConfig, observer: &mut dyn Observer) -> Result<LoopOutcome, SolveError> {
    require_irreducible(market)?;
    let n = market.n();
    let constants = SolverConstants::fixed(n, market.u_max(), config.profile)?;
    let fixed = constants.fixed.as_ref().expect("fixed constants");
    let basis = &fixed.basis;
    let cap = config.iteration_cap(n, market.u_max());
    let exp_cap = BigUint::one() << (64 * (crate::numerics::ceil_log2(&BigUint::from(n as u64 * market.u_max())) * n as u64).max(64));

    let mut util_exp = vec![vec![None; n]; n];
    for (i, row) in util_exp.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let u = market.u(i, j);
            if u > 0 {
                *slot = Some(basis.round_utility(u)?);
            }
        }
    }

    let mut exponents = vec![BigUint::zero(); n];
    let mut caps = vec![Q::one(); n];
    let mut net = EqualityNetwork::power(&util_exp, &exponents, &caps);
    let mut flow = balance(&net, FlowState::zero(n))?;
    let mut surplus = surplus_of(&net, &flow);
    let mut state = PriceState::Power { exponents: exponents.clone(), caps: caps.clone() };
    observer.initial(&StateView { network: &net, flow: &flow, prices: &state, surplus: &surplus });

    let mut trace = Vec::new();
    let mut iteration = 0u64;
    while surplus.l1() >= constants.epsilon {
        if iteration >= cap {
            return Err(SolveError::IterationCap { cap, surplus: surplus.l1().to_string() });
        }
        iteration += 1;
        let active = select_active_set(&surplus.buyers, &net)?;
        let x_eq = compute_x_eq_power(&active, &util_exp, &exponents, &net);
        let (x_23, x_24) = compute_x_23_x_24(&active, &caps, &surplus.buyers);
        let x_2x = match (x_23, x_24) {
            (Some(a), Some(b)) => Some(if a <= b { (a, BindingEvent::Balance23) } else { (b, BindingEvent::Balance24) }),
            (Some(a), None) => Some((a, BindingEvent::Balance23)),
            (None, Some(b)) => Some((b, BindingEvent::Balance24)),
            (None, None) => None,
        };
        let x_2x = match x_2x {
            Some((x, ev)) if x <= constants.x_max => Some((basis.round_factor_to_power(&x)?.max(BigUint::one()), ev)),
            _ => None,
        };
        let mut x = fixed.x_max_exponent.clone();
        let mut binding = BindingEvent::XMax;
        if let Some((k, ev)) = &x_2x {
            if k <= &x {
                x = k.clone();
                binding = *ev;
            }
        }
        if let Some(k) = &x_eq {
            if k <= &x {
                x = k.clone();
                binding = BindingEvent::Equality;
            }
        }

        // raise, backing off while the transferred flow overfills a buyer
        let mut backoff = 0u32;
        let mut clamped = false;
        let (new_exponents, new_caps, moved) = loop {
            let mut ex = exponents.clone();
            let mut cp = caps.clone();
            for j in (0..n).filter(|&j| active.goods[j]) {
                ex[j] += &x;
                if ex[j] >= exp_cap {
                    return Err(SolveError::Numerics(NumericsError::PrecisionTooLow { bits: basis.z_bits() }));
                }
                cp[j] = basis.rounded_price(&ex[j])?;
            }
            let mut moved = transfer_flow_power(&flow, &caps, &cp, &active)?;
            let over: Vec<usize> = (0..n).filter(|&i| moved.buyer_out(i) > cp[i]).collect();
            if over.is_empty() {
                break (ex, cp, moved);
            }
            if x > BigUint::one() && binding != BindingEvent::Equality {
                x -= 1u32;
                backoff += 1;
                continue;
            }
            for i in over {
                let out = moved.buyer_out(i);
                let scale = &cp[i] / &out;
                for j in 0..n {
                    let v = moved.get(i, j) * &scale;
                    moved.set(i, j, v);
                }
            }
            clamped = true;
            break (ex, cp, moved);
        };
        let new_net = EqualityNetwork::power(&util_exp, &new_exponents, &new_caps);
        // the raised prices must leave every surplus non-negative
        moved.validate(&new_net)?;
        let moved = match (binding, first_new_edge(&active, &new_net)) {
            (BindingEvent::Equality, Some(edge)) => augment_new_edge(&new_net, moved, edge, &active)?,
            _ => moved,
        };
        let new_flow = balance(&new_net, moved)?;
        let new_surplus = surplus_of(&new_net, &new_flow);
        let new_state = PriceState::Power { exponents: new_exponents.clone(), caps: new_caps.clone() };

        let record = IterationRecord {
            iteration,
            kind: if x == fixed.x_max_exponent { IterationKind::XMax } else { IterationKind::Balancing },
            binding,
            x: Factor::Exponent(x.clone()),
            active_buyers: active.size,
            threshold: active.threshold.clone(),
            l1_before: surplus.l1(),
            l2_sq_before: surplus.l2_sq(),
            l1_after: new_surplus.l1(),
            l2_sq_after: new_surplus.l2_sq(),
            max_price: max_q(&new_caps),
            max_exponent: new_exponents.iter().max().cloned(),
            backoff,
            clamped,
        };
        observer.iteration(&IterationView {
            before: StateView { network: &net, flow: &flow, prices: &state, surplus: &surplus },
            after: StateView { network: &new_net, flow: &new_flow, prices: &new_state, surplus: &new_surplus },
            active: &active,
            factors: None,
            record: &record,
        });
        if config.record_trace {
            trace.push(record);
        }
        exponents = new_exponents;
        caps = new_caps;
        net = new_net;
        flow = new_flow;
        surplus = new_surplus;
        state = new_state;
    }
    Ok(LoopOutcome {
        mode: Mode::Fixed,
        constants,
        iterations: iteration,
        network: net,
        flow,
        prices: state,
        util_exp: Some(util_exp),
        trace,
        warnings: Vec::new(),
    })
}

/// Runs the configured loop on a strongly connected market.
pub fn run_loop(market: &Market, config: &SolverConfig, observer: &mut dyn Observer) -> Result<LoopOutcome, SolveError> {
    match config.mode {
        Mode::Exact => solve_exact(market, config, observer),
        Mode::Fixed => solve_fixed(market, config, observer),
    }
}

/// Solution of one strongly connected component.
#[derive(Clone, Debug)]
pub struct ComponentSolution {
    pub agents: Vec<usize>,
    /// Reduced integer equilibrium prices of the sub-market.
    pub prices: Vec<BigInt>,
    pub extraction: Option<Extraction>,
    pub iterations: u64,
    pub profile: Profile,
    pub fallback_used: bool,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

/// Loop plus extraction plus verification for a strongly connected market.
pub fn solve_irreducible(market: &Market, config: &SolverConfig) -> Result<ComponentSolution, SolveError> {
    if market.n() == 1 {
        if market.u(0, 0) == 0 {
            return Err(MarketError::NoEquilibrium(0).into());
        }
        return Ok(ComponentSolution {
            agents: vec![0],
            prices: vec![BigInt::one()],
            extraction: None,
            iterations: 0,
            profile: config.profile,
            fallback_used: false,
            trace: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let attempt = |cfg: &SolverConfig| -> Result<ComponentSolution, SolveError> {
        let outcome = run_loop(market, cfg, &mut ())?;
        let ex = extract(market, &outcome)?;
        Ok(ComponentSolution {
            agents: (0..market.n()).collect(),
            prices: ex.prices.clone(),
            extraction: Some(ex),
            iterations: outcome.iterations,
            profile: cfg.profile,
            fallback_used: false,
            trace: outcome.trace,
            warnings: outcome.warnings,
        })
    };
    match attempt(config) {
        Ok(sol) => Ok(sol),
        Err(SolveError::Market(e)) => Err(SolveError::Market(e)),
        Err(first) if config.fallback && config.profile == Profile::Fast => {
            let paper = SolverConfig { profile: Profile::Paper, ..config.clone() };
            let mut sol = attempt(&paper)?;
            sol.fallback_used = true;
            sol.warnings.push(format!("fast profile failed ({first}); reran with paper constants"));
            Ok(sol)
        }
        Err(e) => Err(e),
    }
}

/// Equilibrium of a general market.
#[derive(Clone, Debug)]
pub struct Solution {
    /// Reduced positive integer prices.
    pub prices: Vec<BigInt>,
    pub report: EquilibriumReport,
    pub components: Vec<ComponentSolution>,
    pub mode: Mode,
}

impl Solution {
    pub fn iterations(&self) -> u64 {
        self.components.iter().map(|c| c.iterations).sum()
    }

    pub fn allocations(&self) -> &[Vec<Q>] {
        &self.report.allocations
    }
}

/// Solves any market satisfying the positivity assumptions: strongly
/// connected components are solved independently and composed in
/// topological order.
pub fn solve(market: &Market, config: &SolverConfig) -> Result<Solution, SolveError> {
    market.check_assumptions()?;
    let scc = scc_decompose(market);
    for comp in &scc.components {
        if comp.len() == 1 && market.u(comp[0], comp[0]) == 0 {
            return Err(MarketError::NoEquilibrium(comp[0]).into());
        }
    }
    let inner = SolverConfig { execution: Execution::Sequential, ..config.clone() };
    let results = map_items(config.execution, &scc.components, |agents| {
        let sub = market.submarket(agents);
        solve_irreducible(&sub, &inner).map(|mut sol| {
            sol.agents = agents.clone();
            sol
        })
    });
    let components = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let per: Vec<Vec<BigInt>> = components.iter().map(|c| c.prices.clone()).collect();
    let composed = compose_equilibria(market.n(), market.u_max(), &scc.components, &per)?;
    let prices = reduce_prices(&composed);
    let report = check_equilibrium(market, &prices);
    if !report.is_equilibrium() {
        return Err(SolveError::VerificationFailed(report.summary()));
    }
    Ok(Solution { prices, report, components, mode: config.mode })
}
