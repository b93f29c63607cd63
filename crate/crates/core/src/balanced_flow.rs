//! Balanced flows: maximum flows minimizing the 2-norm of buyer surpluses.
//!
//! A maximum flow is balanced iff no residual path over bipartite arcs leads
//! from a buyer to another buyer with strictly smaller surplus.
//! [`balance`] computes one by divide and conquer: the buyers reachable from
//! `s` are split around their average surplus, surplus is routed from the
//! above-average side to the below-average side, and if that cannot equalize
//! everything the set falls apart into the part still reachable from the
//! remaining supply and the rest, each of which is balanced recursively.

use num_traits::{Signed, Zero};

use crate::flow::{augment, max_flow, reachable, residual_reachable, EqualityNetwork, FlowError, FlowState, NodeMask, Sinks};
use crate::Q;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurplusVector {
    pub buyers: Vec<Q>,
    pub goods: Vec<Q>,
}

impl SurplusVector {
    /// `|r(B)|`, the total buyer surplus.
    pub fn l1(&self) -> Q {
        self.buyers.iter().fold(Q::zero(), |a, b| a + b)
    }

    /// `||r(B)||^2`.
    pub fn l2_sq(&self) -> Q {
        self.buyers.iter().fold(Q::zero(), |a, b| a + b * b)
    }
}

pub fn surplus_of(net: &EqualityNetwork, flow: &FlowState) -> SurplusVector {
    SurplusVector { buyers: flow.buyer_surpluses(net), goods: flow.good_surpluses(net) }
}

/// Balanced maximum flow, warm-started from `init`.
pub fn balance(net: &EqualityNetwork, init: FlowState) -> Result<FlowState, FlowError> {
    let mut flow = max_flow(net, Some(init));
    let (s_buyers, s_goods) = residual_reachable(net, &flow)?;
    let buyers: Vec<usize> = (0..net.n()).filter(|&i| s_buyers[i]).collect();
    balance_part(net, &mut flow, buyers, s_goods);
    Ok(flow)
}

fn balance_part(net: &EqualityNetwork, flow: &mut FlowState, buyers: Vec<usize>, goods: Vec<bool>) {
    if buyers.len() <= 1 {
        return;
    }
    let n = net.n();
    let r: Vec<Q> = buyers.iter().map(|&i| net.buyer_cap(i) - flow.buyer_out(i)).collect();
    if r.iter().all(|x| x == &r[0]) {
        return;
    }
    let avg = r.iter().fold(Q::zero(), |a, b| a + b) / Q::from_integer((buyers.len() as i64).into());
    let mut supply = vec![Q::zero(); n];
    let mut demand = vec![Q::zero(); n];
    let mut in_part = vec![false; n];
    let mut need = Q::zero();
    for (k, &i) in buyers.iter().enumerate() {
        in_part[i] = true;
        if r[k] > avg {
            supply[i] = &r[k] - &avg;
            need += &supply[i];
        } else {
            demand[i] = &avg - &r[k];
        }
    }
    let mask = NodeMask { buyers: in_part.clone(), goods: goods.clone() };
    let routed = augment(net, flow, &mut supply, Sinks { goods: None, buyers: Some(&mut demand) }, &mask);
    if routed == need {
        return;
    }
    let (reach_b, reach_c) = reachable(net, flow, &supply, &mask);
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for &i in &buyers {
        if reach_b[i] {
            upper.push(i);
        } else {
            lower.push(i);
        }
    }
    let upper_goods: Vec<bool> = (0..n).map(|j| goods[j] && reach_c[j]).collect();
    let lower_goods: Vec<bool> = (0..n).map(|j| goods[j] && !reach_c[j]).collect();
    debug_assert!(!upper.is_empty() && !lower.is_empty());
    balance_part(net, flow, upper, upper_goods);
    balance_part(net, flow, lower, lower_goods);
}

/// A pair `(a, c)` of buyers with `r(a) > r(c)` and a residual path from
/// `a` to `c`, if one exists. A maximum flow without such a pair is balanced.
pub fn crossing_pair(net: &EqualityNetwork, flow: &FlowState) -> Option<(usize, usize)> {
    let n = net.n();
    let r = flow.buyer_surpluses(net);
    let mask = NodeMask::full(n);
    for a in 0..n {
        let mut start = vec![Q::zero(); n];
        start[a] = Q::from_integer(1.into());
        let (reach, _) = reachable(net, flow, &start, &mask);
        if let Some(c) = (0..n).find(|&c| reach[c] && r[c] < r[a]) {
            return Some((a, c));
        }
    }
    None
}

/// True iff `flow` is a maximum flow with no crossing pair.
pub fn is_balanced(net: &EqualityNetwork, flow: &FlowState) -> bool {
    residual_reachable(net, flow).is_ok() && crossing_pair(net, flow).is_none()
}

/// Every buyer surplus is non-negative.
pub fn surpluses_nonnegative(s: &SurplusVector) -> bool {
    s.buyers.iter().chain(&s.goods).all(|x| !x.is_negative())
}
