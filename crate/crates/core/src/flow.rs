//! The equality network and exact augmenting-path max-flow.
//!
//! Nodes are `s`, buyers `b_i`, goods `c_j` and `t`. Arcs `s -> b_i` have
//! capacity equal to the buyer's price, `c_j -> t` the good's price, and
//! `b_i -> c_j` is uncapacitated and present iff `j` maximizes buyer `i`'s
//! bang-per-buck. Only the bipartite part of a flow is stored; source and
//! sink arc flows follow from conservation.

use std::collections::VecDeque;

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::market::Market;
use crate::Q;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("flow on non-edge ({0}, {1})")]
    NonEdge(usize, usize),
    #[error("negative flow on ({0}, {1})")]
    Negative(usize, usize),
    #[error("buyer {0} sends more than its capacity")]
    BuyerOverCapacity(usize),
    #[error("good {0} receives more than its capacity")]
    GoodOverCapacity(usize),
    #[error("flow is not maximum")]
    NotMaximum,
    #[error("dimension mismatch")]
    Dimension,
}

/// Bang-per-buck of every buyer: exact, or as an exponent of `1 + 1/L`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BangPerBuck {
    Exact(Vec<Q>),
    Exponent(Vec<BigInt>),
    Unknown,
}

#[derive(Clone, Debug)]
pub struct EqualityNetwork {
    n: usize,
    buyer_cap: Vec<Q>,
    good_cap: Vec<Q>,
    edges: Vec<Vec<bool>>,
    adj: Vec<Vec<usize>>,
    rev: Vec<Vec<usize>>,
    pub alpha: BangPerBuck,
}

impl EqualityNetwork {
    pub fn from_edges(buyer_cap: Vec<Q>, good_cap: Vec<Q>, edges: Vec<Vec<bool>>) -> Self {
        let n = buyer_cap.len();
        assert_eq!(good_cap.len(), n);
        assert_eq!(edges.len(), n);
        let adj = (0..n).map(|i| (0..n).filter(|&j| edges[i][j]).collect()).collect();
        let rev = (0..n).map(|j| (0..n).filter(|&i| edges[i][j]).collect()).collect();
        EqualityNetwork { n, buyer_cap, good_cap, edges, adj, rev, alpha: BangPerBuck::Unknown }
    }

    /// `N_p` for exact prices: capacities `p` on both sides.
    pub fn exact(market: &Market, prices: &[Q]) -> Self {
        let n = market.n();
        let mut edges = vec![vec![false; n]; n];
        let mut alpha = Vec::with_capacity(n);
        for i in 0..n {
            // best j maximizes u_ij / p_j; compare by cross-multiplication
            let mut best: Option<usize> = None;
            for j in 0..n {
                let u = market.u(i, j);
                if u == 0 {
                    continue;
                }
                match best {
                    None => best = Some(j),
                    Some(b) => {
                        let lhs = &prices[b] * Q::from_integer(BigInt::from(u));
                        let rhs = &prices[j] * Q::from_integer(BigInt::from(market.u(i, b)));
                        if lhs > rhs {
                            best = Some(j);
                        }
                    }
                }
            }
            let b = best.expect("every buyer values some good");
            let ub = Q::from_integer(BigInt::from(market.u(i, b)));
            for j in 0..n {
                let u = market.u(i, j);
                if u > 0 && &prices[b] * Q::from_integer(BigInt::from(u)) == &prices[j] * &ub {
                    edges[i][j] = true;
                }
            }
            alpha.push(ub / &prices[b]);
        }
        let mut net = Self::from_edges(prices.to_vec(), prices.to_vec(), edges);
        net.alpha = BangPerBuck::Exact(alpha);
        net
    }

    /// `N(p, p_hat)` for exponent prices: edges maximize `e_ij - k_j` over
    /// rounded utility exponents, capacities are the rounded prices.
    pub fn power(util_exp: &[Vec<Option<BigUint>>], exponents: &[BigUint], caps: &[Q]) -> Self {
        let n = exponents.len();
        let mut edges = vec![vec![false; n]; n];
        let mut alpha = Vec::with_capacity(n);
        for i in 0..n {
            let best = (0..n)
                .filter_map(|j| {
                    util_exp[i][j]
                        .as_ref()
                        .map(|e| BigInt::from(e.clone()) - BigInt::from(exponents[j].clone()))
                })
                .max()
                .expect("every buyer values some good");
            for j in 0..n {
                if let Some(e) = &util_exp[i][j] {
                    if BigInt::from(e.clone()) - BigInt::from(exponents[j].clone()) == best {
                        edges[i][j] = true;
                    }
                }
            }
            alpha.push(best);
        }
        let mut net = Self::from_edges(caps.to_vec(), caps.to_vec(), edges);
        net.alpha = BangPerBuck::Exponent(alpha);
        net
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[i][j]
    }

    pub fn edges(&self) -> &[Vec<bool>] {
        &self.edges
    }

    /// Goods adjacent to buyer `i`, ascending.
    pub fn goods_of(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// Buyers adjacent to good `j`, ascending.
    pub fn buyers_of(&self, j: usize) -> &[usize] {
        &self.rev[j]
    }

    pub fn buyer_cap(&self, i: usize) -> &Q {
        &self.buyer_cap[i]
    }

    pub fn good_cap(&self, j: usize) -> &Q {
        &self.good_cap[j]
    }

    pub fn buyer_caps(&self) -> &[Q] {
        &self.buyer_cap
    }

    pub fn good_caps(&self) -> &[Q] {
        &self.good_cap
    }

    pub fn total_buyer_cap(&self) -> Q {
        self.buyer_cap.iter().fold(Q::zero(), |a, b| a + b)
    }
}

/// Flow on the bipartite arcs, dense `n x n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowState {
    flow: Vec<Vec<Q>>,
}

impl FlowState {
    pub fn zero(n: usize) -> Self {
        FlowState { flow: vec![vec![Q::zero(); n]; n] }
    }

    pub fn from_matrix(flow: Vec<Vec<Q>>) -> Self {
        FlowState { flow }
    }

    pub fn n(&self) -> usize {
        self.flow.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &Q {
        &self.flow[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Q) {
        self.flow[i][j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: &Q) {
        self.flow[i][j] += v;
    }

    pub fn matrix(&self) -> &[Vec<Q>] {
        &self.flow
    }

    pub fn buyer_out(&self, i: usize) -> Q {
        self.flow[i].iter().fold(Q::zero(), |a, b| a + b)
    }

    pub fn good_in(&self, j: usize) -> Q {
        self.flow.iter().fold(Q::zero(), |a, row| a + &row[j])
    }

    pub fn value(&self) -> Q {
        self.flow.iter().flatten().fold(Q::zero(), |a, b| a + b)
    }

    pub fn buyer_surpluses(&self, net: &EqualityNetwork) -> Vec<Q> {
        (0..self.n()).map(|i| net.buyer_cap(i) - self.buyer_out(i)).collect()
    }

    pub fn good_surpluses(&self, net: &EqualityNetwork) -> Vec<Q> {
        (0..self.n()).map(|j| net.good_cap(j) - self.good_in(j)).collect()
    }

    /// Capacity, non-negativity and support checks.
    pub fn validate(&self, net: &EqualityNetwork) -> Result<(), FlowError> {
        let n = net.n();
        if self.n() != n || self.flow.iter().any(|r| r.len() != n) {
            return Err(FlowError::Dimension);
        }
        for i in 0..n {
            for j in 0..n {
                let f = &self.flow[i][j];
                if f.is_negative() {
                    return Err(FlowError::Negative(i, j));
                }
                if !f.is_zero() && !net.has_edge(i, j) {
                    return Err(FlowError::NonEdge(i, j));
                }
            }
        }
        for i in 0..n {
            if &self.buyer_out(i) > net.buyer_cap(i) {
                return Err(FlowError::BuyerOverCapacity(i));
            }
        }
        for j in 0..n {
            if &self.good_in(j) > net.good_cap(j) {
                return Err(FlowError::GoodOverCapacity(j));
            }
        }
        Ok(())
    }
}

/// Which nodes of the bipartite part take part in a search.
#[derive(Clone, Debug)]
pub struct NodeMask {
    pub buyers: Vec<bool>,
    pub goods: Vec<bool>,
}

impl NodeMask {
    pub fn full(n: usize) -> Self {
        NodeMask { buyers: vec![true; n], goods: vec![true; n] }
    }
}

/// Sink side of an augmentation: remaining absorbable amount at goods
/// and/or at buyers.
pub(crate) struct Sinks<'a> {
    pub goods: Option<&'a mut [Q]>,
    pub buyers: Option<&'a mut [Q]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Node {
    Buyer(usize),
    Good(usize),
}

/// Breadth-first search over residual arcs `b -> c` (equality edges) and
/// `c -> b` (positive flow), from every buyer with positive `supply`.
/// Returns the visit masks and, optionally, the first sink reached together
/// with the parent pointers.
fn search(
    net: &EqualityNetwork,
    flow: &FlowState,
    supply: &[Q],
    mask: &NodeMask,
    sinks: Option<&Sinks<'_>>,
) -> (Vec<bool>, Vec<bool>, Option<(Node, Vec<Option<Node>>, Vec<Option<Node>>)>) {
    let n = net.n();
    let mut seen_b = vec![false; n];
    let mut seen_c = vec![false; n];
    let mut parent_b: Vec<Option<Node>> = vec![None; n];
    let mut parent_c: Vec<Option<Node>> = vec![None; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if mask.buyers[i] && supply[i].is_positive() {
            seen_b[i] = true;
            queue.push_back(Node::Buyer(i));
        }
    }
    let sink_good = |j: usize| sinks.and_then(|s| s.goods.as_ref()).is_some_and(|g| g[j].is_positive());
    let sink_buyer = |i: usize| sinks.and_then(|s| s.buyers.as_ref()).is_some_and(|b| b[i].is_positive());
    while let Some(node) = queue.pop_front() {
        match node {
            Node::Buyer(i) => {
                for &j in net.goods_of(i) {
                    if !mask.goods[j] || seen_c[j] {
                        continue;
                    }
                    seen_c[j] = true;
                    parent_c[j] = Some(node);
                    if sink_good(j) {
                        return (seen_b, seen_c, Some((Node::Good(j), parent_b, parent_c)));
                    }
                    queue.push_back(Node::Good(j));
                }
            }
            Node::Good(j) => {
                for &i in net.buyers_of(j) {
                    if !mask.buyers[i] || seen_b[i] || !flow.get(i, j).is_positive() {
                        continue;
                    }
                    seen_b[i] = true;
                    parent_b[i] = Some(node);
                    if sink_buyer(i) {
                        return (seen_b, seen_c, Some((Node::Buyer(i), parent_b, parent_c)));
                    }
                    queue.push_back(Node::Buyer(i));
                }
            }
        }
    }
    (seen_b, seen_c, None)
}

/// Repeatedly pushes flow along shortest residual paths from buyers with
/// positive `supply` to sinks, until no path remains. `supply` and the sink
/// arrays are decremented by the amounts routed. Returns the total routed.
pub(crate) fn augment(
    net: &EqualityNetwork,
    flow: &mut FlowState,
    supply: &mut [Q],
    mut sinks: Sinks<'_>,
    mask: &NodeMask,
) -> Q {
    let mut total = Q::zero();
    loop {
        let (_, _, found) = search(net, flow, supply, mask, Some(&sinks));
        let Some((end, parent_b, parent_c)) = found else {
            return total;
        };
        // walk back to the start, collecting arcs
        let mut path = Vec::new();
        let mut node = end;
        let start;
        loop {
            let parent = match node {
                Node::Buyer(i) => parent_b[i],
                Node::Good(j) => parent_c[j],
            };
            match parent {
                None => {
                    let Node::Buyer(i) = node else { unreachable!("paths start at buyers") };
                    start = i;
                    break;
                }
                Some(p) => {
                    path.push((p, node));
                    node = p;
                }
            }
        }
        let mut delta = supply[start].clone();
        match end {
            Node::Good(j) => delta = delta.min(sinks.goods.as_ref().expect("good sink")[j].clone()),
            Node::Buyer(i) => delta = delta.min(sinks.buyers.as_ref().expect("buyer sink")[i].clone()),
        }
        for &(a, b) in &path {
            if let (Node::Good(j), Node::Buyer(i)) = (a, b) {
                delta = delta.min(flow.get(i, j).clone());
            }
        }
        debug_assert!(delta.is_positive());
        for &(a, b) in &path {
            match (a, b) {
                (Node::Buyer(i), Node::Good(j)) => flow.add(i, j, &delta),
                (Node::Good(j), Node::Buyer(i)) => flow.add(i, j, &-delta.clone()),
                _ => unreachable!("bipartite path"),
            }
        }
        supply[start] -= &delta;
        match end {
            Node::Good(j) => sinks.goods.as_mut().expect("good sink")[j] -= &delta,
            Node::Buyer(i) => sinks.buyers.as_mut().expect("buyer sink")[i] -= &delta,
        }
        total += delta;
    }
}

/// Buyers and goods reachable in the residual graph from buyers with positive
/// `supply`, restricted to `mask`.
pub fn reachable(net: &EqualityNetwork, flow: &FlowState, supply: &[Q], mask: &NodeMask) -> (Vec<bool>, Vec<bool>) {
    let (b, c, _) = search(net, flow, supply, mask, None);
    (b, c)
}

/// Maximum flow in `net`, warm-started from `init` (which must be feasible).
pub fn max_flow(net: &EqualityNetwork, init: Option<FlowState>) -> FlowState {
    let mut flow = init.unwrap_or_else(|| FlowState::zero(net.n()));
    debug_assert_eq!(flow.validate(net), Ok(()));
    let mut supply = flow.buyer_surpluses(net);
    let mut goods = flow.good_surpluses(net);
    augment(
        net,
        &mut flow,
        &mut supply,
        Sinks { goods: Some(&mut goods), buyers: None },
        &NodeMask::full(net.n()),
    );
    flow
}

/// The part `S` of the residual network reachable from `s`, as buyer and good
/// masks. Fails if `t` is reachable, i.e. the flow is not maximum.
pub fn residual_reachable(net: &EqualityNetwork, flow: &FlowState) -> Result<(Vec<bool>, Vec<bool>), FlowError> {
    let supply = flow.buyer_surpluses(net);
    let (b, c) = reachable(net, flow, &supply, &NodeMask::full(net.n()));
    let goods = flow.good_surpluses(net);
    if (0..net.n()).any(|j| c[j] && goods[j].is_positive()) {
        return Err(FlowError::NotMaximum);
    }
    Ok((b, c))
}
