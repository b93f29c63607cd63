//! Exact equilibrium certificates and a brute-force reference solver for tiny
//! markets.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::flow::{max_flow, EqualityNetwork, FlowState};
use crate::market::{reduce_prices, Market};
use crate::Q;

/// Outcome of the min-cut test in `N_q`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquilibriumReport {
    pub prices_positive: bool,
    /// Maximum flow value in the equality network at `q`.
    pub flow_value: Q,
    /// `sum q_i`.
    pub total: Q,
    /// Buyers that cannot spend their whole budget.
    pub unspent_buyers: Vec<usize>,
    /// Goods that cannot be sold completely.
    pub unsold_goods: Vec<usize>,
    /// `x_ij = f_ij / q_j` for a maximum flow `f`.
    pub allocations: Vec<Vec<Q>>,
}

impl EquilibriumReport {
    /// True iff every budget is spent and every good is sold on equality
    /// edges only.
    pub fn is_equilibrium(&self) -> bool {
        self.prices_positive && self.flow_value == self.total
    }

    pub fn summary(&self) -> String {
        if !self.prices_positive {
            return "non-positive price".to_string();
        }
        format!(
            "max flow {} of {}; unspent buyers {:?}; unsold goods {:?}",
            self.flow_value, self.total, self.unspent_buyers, self.unsold_goods
        )
    }
}

/// Checks that `q` supports an equilibrium: the maximum flow in the equality
/// network with capacities `q` saturates every source and sink arc.
pub fn check_equilibrium(market: &Market, q: &[BigInt]) -> EquilibriumReport {
    let n = market.n();
    assert_eq!(q.len(), n);
    if q.iter().any(|x| !x.is_positive()) {
        return EquilibriumReport {
            prices_positive: false,
            flow_value: Q::zero(),
            total: Q::zero(),
            unspent_buyers: Vec::new(),
            unsold_goods: Vec::new(),
            allocations: Vec::new(),
        };
    }
    let prices: Vec<Q> = q.iter().map(|x| Q::from_integer(x.clone())).collect();
    let net = EqualityNetwork::exact(market, &prices);
    let flow = max_flow(&net, None);
    let total = prices.iter().fold(Q::zero(), |a, b| a + b);
    report_for(&net, &flow, &prices, total)
}

fn report_for(net: &EqualityNetwork, flow: &FlowState, prices: &[Q], total: Q) -> EquilibriumReport {
    let n = prices.len();
    let unspent_buyers = (0..n).filter(|&i| &flow.buyer_out(i) < net.buyer_cap(i)).collect();
    let unsold_goods = (0..n).filter(|&j| &flow.good_in(j) < net.good_cap(j)).collect();
    let allocations = (0..n).map(|i| (0..n).map(|j| flow.get(i, j) / &prices[j]).collect()).collect();
    EquilibriumReport {
        prices_positive: true,
        flow_value: flow.value(),
        total,
        unspent_buyers,
        unsold_goods,
        allocations,
    }
}

/// Problems found in an explicit allocation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AllocationIssue {
    NonPositivePrice(usize),
    Negative(usize, usize),
    /// Buyer buys a good that is not among its best bang-per-buck goods.
    Suboptimal(usize, usize),
    Budget(usize),
    Supply(usize),
}

/// Checks an allocation `x` against prices `q`: every good sold exactly once,
/// every buyer spends exactly its income, only optimal goods bought.
pub fn check_allocation(market: &Market, q: &[BigInt], x: &[Vec<Q>]) -> Vec<AllocationIssue> {
    let n = market.n();
    let mut issues = Vec::new();
    for (i, qi) in q.iter().enumerate() {
        if !qi.is_positive() {
            issues.push(AllocationIssue::NonPositivePrice(i));
        }
    }
    if !issues.is_empty() {
        return issues;
    }
    let prices: Vec<Q> = q.iter().map(|v| Q::from_integer(v.clone())).collect();
    let net = EqualityNetwork::exact(market, &prices);
    for i in 0..n {
        let mut spent = Q::zero();
        for j in 0..n {
            if x[i][j].is_negative() {
                issues.push(AllocationIssue::Negative(i, j));
            } else if x[i][j].is_positive() && !net.has_edge(i, j) {
                issues.push(AllocationIssue::Suboptimal(i, j));
            }
            spent += &x[i][j] * &prices[j];
        }
        if spent != prices[i] {
            issues.push(AllocationIssue::Budget(i));
        }
    }
    for j in 0..n {
        let sold = (0..n).fold(Q::zero(), |a, i| a + &x[i][j]);
        if !sold.is_one() {
            issues.push(AllocationIssue::Supply(j));
        }
    }
    issues
}

/// Row-reduces an augmented rational system; returns the unique solution if
/// the system is consistent with full column rank.
fn unique_solution(mut rows: Vec<Vec<Q>>, cols: usize) -> Option<Vec<Q>> {
    let mut rank = 0;
    for c in 0..cols {
        let p = (rank..rows.len()).find(|&r| !rows[r][c].is_zero())?;
        rows.swap(rank, p);
        let pivot = rows[rank][c].clone();
        for v in rows[rank].iter_mut() {
            *v /= &pivot;
        }
        for r in 0..rows.len() {
            if r != rank && !rows[r][c].is_zero() {
                let f = rows[r][c].clone();
                for k in 0..=cols {
                    let v = &rows[rank][k] * &f;
                    rows[r][k] -= v;
                }
            }
        }
        rank += 1;
    }
    if rows[rank..].iter().any(|r| !r[cols].is_zero()) {
        return None;
    }
    Some((0..cols).map(|c| rows[c][cols].clone()).collect())
}

/// Brute-force equilibrium for `n <= 3`: tries every candidate equality edge
/// set, solves its ratio and balance equations exactly, and returns the first
/// candidate that passes [`check_equilibrium`].
pub fn oracle_solve(market: &Market) -> Option<Vec<BigInt>> {
    let n = market.n();
    assert!(n <= 3, "oracle is exponential in n^2");
    let candidates: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| market.u(i, j) > 0).collect();
    let m = candidates.len();
    for mask in 1u32..(1u32 << m) {
        let chosen: Vec<(usize, usize)> = (0..m).filter(|&k| mask >> k & 1 == 1).map(|k| candidates[k]).collect();
        if (0..n).any(|i| !chosen.iter().any(|&(b, _)| b == i)) {
            continue;
        }
        let mut rows: Vec<Vec<Q>> = Vec::new();
        for i in 0..n {
            let goods: Vec<usize> = chosen.iter().filter(|&&(b, _)| b == i).map(|&(_, g)| g).collect();
            for &g in &goods[1..] {
                // u_i,g0 / p_g0 = u_i,g / p_g
                let mut row = vec![Q::zero(); n + 1];
                row[goods[0]] += Q::from_integer(BigInt::from(market.u(i, g)));
                row[g] -= Q::from_integer(BigInt::from(market.u(i, goods[0])));
                rows.push(row);
            }
        }
        // components of the chosen bipartite graph: buyers 0..n, goods n..2n
        let mut label: Vec<usize> = (0..2 * n).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for &(b, g) in &chosen {
                let l = label[b].min(label[n + g]);
                if label[b] != l || label[n + g] != l {
                    label[b] = l;
                    label[n + g] = l;
                    changed = true;
                }
            }
        }
        let mut roots: Vec<usize> = label.clone();
        roots.sort_unstable();
        roots.dedup();
        for r in roots {
            let mut row = vec![Q::zero(); n + 1];
            for a in 0..n {
                if label[a] == r {
                    row[a] += Q::one();
                }
                if label[n + a] == r {
                    row[a] -= Q::one();
                }
            }
            rows.push(row);
        }
        let mut norm = vec![Q::zero(); n + 1];
        norm[0] = Q::one();
        norm[n] = Q::one();
        rows.push(norm);
        let Some(p) = unique_solution(rows, n) else { continue };
        if p.iter().any(|x| !x.is_positive()) {
            continue;
        }
        let d = p.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        let q: Vec<BigInt> = p.iter().map(|x| (x * Q::from_integer(d.clone())).to_integer()).collect();
        if check_equilibrium(market, &q).is_equilibrium() {
            return Some(reduce_prices(&q));
        }
    }
    None
}

/// Whether two positive price vectors are proportional, by cross-multiplication.
pub fn proportional(a: &[BigInt], b: &[BigInt]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x * &b[0] == y * &a[0])
}
