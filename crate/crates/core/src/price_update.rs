//! One price-update step: active set selection, the three event factors and
//! `x_max`, the multiplicative update of prices and flows, and the
//! augmentation along a newly created equality edge.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::flow::{BangPerBuck, EqualityNetwork, FlowState};
use crate::market::Market;
use crate::Q;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UpdateError {
    #[error("no buyer has positive surplus")]
    NoSurplus,
    #[error("buyer {0} outside the active set sends flow to an active good")]
    FlowIntoActiveGoods(usize),
    #[error("update factor must exceed 1")]
    FactorNotAboveOne,
    #[error("({0}, {1}) is not a new equality edge from the active set")]
    NotNewEdge(usize, usize),
}

/// Classification of agent `i` by whether buyer `b_i` is active and whether
/// good `c_i` is in the neighbourhood of the active buyers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AgentType {
    /// `b_i` active, `c_i` in the neighbourhood.
    One,
    /// `b_i` active, `c_i` outside.
    Two,
    /// `b_i` inactive, `c_i` in the neighbourhood.
    Three,
    /// neither.
    Four,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSet {
    /// Buyers by surplus descending, ties by ascending index.
    pub order: Vec<usize>,
    /// Number of active buyers, the `ℓ` of the selection rule.
    pub size: usize,
    /// Surplus of the last active buyer.
    pub threshold: Q,
    pub buyers: Vec<bool>,
    pub goods: Vec<bool>,
}

impl ActiveSet {
    pub fn agent_type(&self, i: usize) -> AgentType {
        match (self.buyers[i], self.goods[i]) {
            (true, true) => AgentType::One,
            (true, false) => AgentType::Two,
            (false, true) => AgentType::Three,
            (false, false) => AgentType::Four,
        }
    }

    pub fn is_everyone(&self) -> bool {
        self.size == self.buyers.len()
    }
}

/// Picks the shortest prefix of buyers (sorted by surplus) after which the
/// surplus drops by more than a factor `1 + 1/n`, and its neighbourhood.
pub fn select_active_set(surplus: &[Q], net: &EqualityNetwork) -> Result<ActiveSet, UpdateError> {
    let n = surplus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| surplus[b].cmp(&surplus[a]).then(a.cmp(&b)));
    if !surplus[order[0]].is_positive() {
        return Err(UpdateError::NoSurplus);
    }
    let nq = Q::from_integer(BigInt::from(n as u64));
    let n1 = Q::from_integer(BigInt::from(n as u64 + 1));
    let mut size = n;
    for pos in 0..n - 1 {
        // r_l / r_{l+1} > 1 + 1/n, cross-multiplied
        if &surplus[order[pos]] * &nq > &surplus[order[pos + 1]] * &n1 {
            size = pos + 1;
            break;
        }
    }
    let mut buyers = vec![false; n];
    let mut goods = vec![false; n];
    for &i in &order[..size] {
        buyers[i] = true;
        for &j in net.goods_of(i) {
            goods[j] = true;
        }
    }
    let threshold = surplus[order[size - 1]].clone();
    Ok(ActiveSet { order, size, threshold, buyers, goods })
}

/// Smallest factor at which an active buyer gains an equality edge to a good
/// outside the neighbourhood; `None` if no such edge can ever appear.
pub fn compute_x_eq_exact(active: &ActiveSet, market: &Market, prices: &[Q], net: &EqualityNetwork) -> Option<Q> {
    let n = market.n();
    let mut best: Option<Q> = None;
    for i in (0..n).filter(|&i| active.buyers[i]) {
        let alpha = match &net.alpha {
            BangPerBuck::Exact(a) => a[i].clone(),
            _ => {
                let j = net.goods_of(i)[0];
                Q::from_integer(BigInt::from(market.u(i, j))) / &prices[j]
            }
        };
        for k in (0..n).filter(|&k| !active.goods[k] && market.u(i, k) > 0) {
            let x = &alpha * &prices[k] / Q::from_integer(BigInt::from(market.u(i, k)));
            if best.as_ref().is_none_or(|b| &x < b) {
                best = Some(x);
            }
        }
    }
    best
}

/// Exponent version of [`compute_x_eq_exact`] over rounded utilities.
pub fn compute_x_eq_power(
    active: &ActiveSet,
    util_exp: &[Vec<Option<BigUint>>],
    exponents: &[BigUint],
    net: &EqualityNetwork,
) -> Option<BigUint> {
    let n = exponents.len();
    let BangPerBuck::Exponent(alpha) = &net.alpha else {
        panic!("exponent network expected");
    };
    let mut best: Option<BigInt> = None;
    for i in (0..n).filter(|&i| active.buyers[i]) {
        for k in (0..n).filter(|&k| !active.goods[k]) {
            if let Some(e) = &util_exp[i][k] {
                let d = &alpha[i] - (BigInt::from(e.clone()) - BigInt::from(exponents[k].clone()));
                if best.as_ref().is_none_or(|b| &d < b) {
                    best = Some(d);
                }
            }
        }
    }
    best.map(|d| d.to_biguint().expect("outside goods have smaller bang-per-buck"))
}

/// Factors at which an active buyer's surplus meets an inactive buyer's:
/// `x_23` against type-3 agents, `x_24` against type-4 agents. Pairs with a
/// non-positive denominator never meet and are skipped.
pub fn compute_x_23_x_24(active: &ActiveSet, caps: &[Q], surplus: &[Q]) -> (Option<Q>, Option<Q>) {
    let n = caps.len();
    let mut x23: Option<Q> = None;
    let mut x24: Option<Q> = None;
    let take = |slot: &mut Option<Q>, x: Q| {
        if slot.as_ref().is_none_or(|b| &x < b) {
            *slot = Some(x);
        }
    };
    for i in (0..n).filter(|&i| active.agent_type(i) == AgentType::Two) {
        for j in 0..n {
            match active.agent_type(j) {
                AgentType::Three => {
                    let den = &caps[i] + &caps[j] - &surplus[i];
                    if den.is_positive() {
                        take(&mut x23, (&caps[i] + &caps[j] - &surplus[j]) / den);
                    }
                }
                AgentType::Four => {
                    let den = &caps[i] - &surplus[i];
                    if den.is_positive() {
                        take(&mut x24, (&caps[i] - &surplus[j]) / den);
                    }
                }
                _ => {}
            }
        }
    }
    (x23, x24)
}

/// The event that determined the update factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BindingEvent {
    /// A new equality edge.
    Equality,
    /// An active buyer's surplus meets a type-3 agent's.
    Balance23,
    /// An active buyer's surplus meets a type-4 agent's.
    Balance24,
    /// The step cap.
    XMax,
}

impl BindingEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            BindingEvent::Equality => "EQ",
            BindingEvent::Balance23 => "BAL23",
            BindingEvent::Balance24 => "BAL24",
            BindingEvent::XMax => "XMAX",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateFactors {
    pub x_eq: Option<Q>,
    pub x_23: Option<Q>,
    pub x_24: Option<Q>,
    pub x_max: Q,
    pub x: Q,
    pub binding: BindingEvent,
}

/// Minimum of the candidates; on ties the earlier event in
/// `Equality, Balance23, Balance24, XMax` wins.
pub fn choose_factor(x_eq: Option<Q>, x_23: Option<Q>, x_24: Option<Q>, x_max: Q) -> UpdateFactors {
    let mut x = x_max.clone();
    let mut binding = BindingEvent::XMax;
    for (cand, ev) in [(&x_24, BindingEvent::Balance24), (&x_23, BindingEvent::Balance23), (&x_eq, BindingEvent::Equality)] {
        if let Some(c) = cand {
            if c <= &x {
                x = c.clone();
                binding = ev;
            }
        }
    }
    UpdateFactors { x_eq, x_23, x_24, x_max, x, binding }
}

/// Checks that only active buyers send flow into the neighbourhood.
pub fn check_update_precondition(active: &ActiveSet, flow: &FlowState) -> Result<(), UpdateError> {
    let n = flow.n();
    for i in (0..n).filter(|&i| !active.buyers[i]) {
        if (0..n).any(|j| active.goods[j] && flow.get(i, j).is_positive()) {
            return Err(UpdateError::FlowIntoActiveGoods(i));
        }
    }
    Ok(())
}

/// Multiplies the prices of neighbourhood goods and the flows of active buyers
/// by `x`.
pub fn apply_update_exact(
    prices: &[Q],
    flow: &FlowState,
    x: &Q,
    active: &ActiveSet,
) -> Result<(Vec<Q>, FlowState), UpdateError> {
    if x <= &Q::one() {
        return Err(UpdateError::FactorNotAboveOne);
    }
    check_update_precondition(active, flow)?;
    let n = prices.len();
    let new_prices = (0..n).map(|j| if active.goods[j] { &prices[j] * x } else { prices[j].clone() }).collect();
    let mut f = flow.clone();
    for i in (0..n).filter(|&i| active.buyers[i]) {
        for j in 0..n {
            if !f.get(i, j).is_zero() {
                let v = f.get(i, j) * x;
                f.set(i, j, v);
            }
        }
    }
    Ok((new_prices, f))
}

/// Scales the flow into each neighbourhood good `j` by `new_caps[j] / old_caps[j]`.
pub fn transfer_flow_power(flow: &FlowState, old_caps: &[Q], new_caps: &[Q], active: &ActiveSet) -> Result<FlowState, UpdateError> {
    check_update_precondition(active, flow)?;
    let n = flow.n();
    let mut f = flow.clone();
    for j in (0..n).filter(|&j| active.goods[j]) {
        let ratio = &new_caps[j] / &old_caps[j];
        for i in 0..n {
            if !f.get(i, j).is_zero() {
                let v = f.get(i, j) * &ratio;
                f.set(i, j, v);
            }
        }
    }
    Ok(f)
}

/// First equality edge of `net` from an active buyer to a good outside the
/// old neighbourhood, by buyer then good index.
pub fn first_new_edge(active: &ActiveSet, net: &EqualityNetwork) -> Option<(usize, usize)> {
    let n = net.n();
    (0..n)
        .filter(|&i| active.buyers[i])
        .flat_map(|i| net.goods_of(i).iter().map(move |&j| (i, j)))
        .find(|&(_, j)| !active.goods[j])
}

/// Moves surplus of `b_i` across the new edge `(b_i, c_j)`: first into the
/// surplus of `c_j`, then by displacing other buyers of `c_j`, never letting
/// `b_i` fall below the largest inactive surplus.
pub fn augment_new_edge(
    net: &EqualityNetwork,
    flow: FlowState,
    edge: (usize, usize),
    active: &ActiveSet,
) -> Result<FlowState, UpdateError> {
    let (i, j) = edge;
    if !net.has_edge(i, j) || !active.buyers[i] || active.goods[j] {
        return Err(UpdateError::NotNewEdge(i, j));
    }
    let n = net.n();
    let before = flow.clone();
    let mut f = flow;
    let mut r = f.buyer_surpluses(net);
    let mut w = (0..n).filter(|&k| !active.buyers[k]).map(|k| r[k].clone()).max().unwrap_or_else(Q::zero);

    let good_surplus = net.good_cap(j) - f.good_in(j);
    let d = (&r[i] - &w).min(good_surplus);
    if d.is_positive() {
        f.add(i, j, &d);
        r[i] -= &d;
    }
    if r[i] == w {
        return Ok(f);
    }
    for k in (0..n).filter(|&k| before.get(k, j).is_positive()) {
        let two = Q::from_integer(BigInt::from(2));
        let d = f.get(k, j).clone().min(&r[i] - &w).min((&r[i] - &r[k]) / two);
        if d.is_positive() {
            f.add(i, j, &d);
            f.add(k, j, &-d.clone());
            r[i] -= &d;
            r[k] += &d;
        }
        if r[k] > w {
            w = r[k].clone();
        }
        if r[i] == w {
            break;
        }
    }
    Ok(f)
}
