//! Linear exchange markets: validation, strongly connected decomposition,
//! composition of sub-market equilibria and random instance generation.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarketError {
    #[error("market must have at least one agent")]
    Empty,
    #[error("utility matrix is not square: row {row} has {len} entries, expected {n}")]
    NotSquare { row: usize, len: usize, n: usize },
    #[error("agent {0} values no good")]
    BuyerLikesNothing(usize),
    #[error("good {0} is valued by no agent")]
    GoodUnwanted(usize),
    #[error("agent {0} forms an isolated component and does not value its own good: no equilibrium")]
    NoEquilibrium(usize),
    #[error("component prices must be positive")]
    NonPositivePrice,
}

/// `n` agents; agent `i` owns one unit of good `i` and has linear utility
/// `sum_j u[i][j] x_ij`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Market {
    n: usize,
    u: Vec<Vec<u64>>,
    u_max: u64,
}

impl Market {
    /// Checks shape only; the economic assumptions are reported by [`Market::validate`].
    pub fn new(u: Vec<Vec<u64>>) -> Result<Self, MarketError> {
        let n = u.len();
        if n == 0 {
            return Err(MarketError::Empty);
        }
        for (row, r) in u.iter().enumerate() {
            if r.len() != n {
                return Err(MarketError::NotSquare { row, len: r.len(), n });
            }
        }
        let u_max = u.iter().flatten().copied().max().unwrap_or(0);
        Ok(Market { n, u, u_max })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest utility `U`, at least 1.
    pub fn u_max(&self) -> u64 {
        self.u_max.max(1)
    }

    #[inline]
    pub fn u(&self, i: usize, j: usize) -> u64 {
        self.u[i][j]
    }

    pub fn utilities(&self) -> &[Vec<u64>] {
        &self.u
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.n;
        let buyers_without_goods = (0..n).filter(|&i| self.u[i].iter().all(|&v| v == 0)).collect();
        let unwanted_goods = (0..n).filter(|&j| (0..n).all(|i| self.u[i][j] == 0)).collect();
        let scc = scc_decompose(self);
        let strongly_connected = scc.components.len() == 1;
        ValidationReport { buyers_without_goods, unwanted_goods, strongly_connected }
    }

    /// Fails on the first violated positivity assumption.
    pub fn check_assumptions(&self) -> Result<(), MarketError> {
        let report = self.validate();
        if let Some(&i) = report.buyers_without_goods.first() {
            return Err(MarketError::BuyerLikesNothing(i));
        }
        if let Some(&j) = report.unwanted_goods.first() {
            return Err(MarketError::GoodUnwanted(j));
        }
        Ok(())
    }

    /// Restriction to the given agents, in the given order.
    pub fn submarket(&self, agents: &[usize]) -> Market {
        let u = agents
            .iter()
            .map(|&i| agents.iter().map(|&j| self.u[i][j]).collect())
            .collect();
        Market::new(u).expect("non-empty square restriction")
    }

    /// Random market with utilities in `[0, u_max]`. Each row and column gets
    /// at least one positive entry; `irreducible` additionally adds a cycle
    /// through all agents.
    pub fn random(n: usize, u_max: u64, seed: u64, irreducible: bool) -> Market {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(&mut rng, n, u_max, irreducible)
    }

    pub fn random_with<R: Rng>(rng: &mut R, n: usize, u_max: u64, irreducible: bool) -> Market {
        assert!(n > 0 && u_max > 0);
        let density = rng.random_range(0.3..=1.0);
        let mut u: Vec<Vec<u64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| if rng.random_bool(density) { rng.random_range(1..=u_max) } else { 0 })
                    .collect()
            })
            .collect();
        if irreducible {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            for w in 0..n {
                let (a, b) = (perm[w], perm[(w + 1) % n]);
                if u[a][b] == 0 {
                    u[a][b] = rng.random_range(1..=u_max);
                }
            }
        }
        for i in 0..n {
            if u[i].iter().all(|&v| v == 0) {
                let j = rng.random_range(0..n);
                u[i][j] = rng.random_range(1..=u_max);
            }
        }
        for j in 0..n {
            if (0..n).all(|i| u[i][j] == 0) {
                let i = rng.random_range(0..n);
                u[i][j] = rng.random_range(1..=u_max);
            }
        }
        Market::new(u).expect("square by construction")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub buyers_without_goods: Vec<usize>,
    pub unwanted_goods: Vec<usize>,
    pub strongly_connected: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.buyers_without_goods.is_empty() && self.unwanted_goods.is_empty()
    }
}

/// Strongly connected components of the liking graph (`i -> j` iff
/// `u_ij > 0`), listed in a topological order of the condensation. Among
/// components without remaining predecessors, the one containing the smallest
/// agent index comes first. Agents inside a component are ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SccDecomposition {
    pub components: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
}

pub fn scc_decompose(market: &Market) -> SccDecomposition {
    let n = market.n();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| market.u(i, j) > 0).collect()).collect();

    // iterative Tarjan
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp_of = vec![usize::MAX; n];
    let mut raw: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp_of[w] = raw.len();
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    raw.push(comp);
                }
            }
        }
    }

    // Kahn on the condensation, smallest agent index first
    let c = raw.len();
    let mut indeg = vec![0usize; c];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); c];
    for i in 0..n {
        for &j in &adj[i] {
            let (a, b) = (comp_of[i], comp_of[j]);
            if a != b && !succ[a].contains(&b) {
                succ[a].push(b);
                indeg[b] += 1;
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..c).filter(|&k| indeg[k] == 0).map(|k| Reverse((raw[k][0], k))).collect();
    let mut order = Vec::with_capacity(c);
    while let Some(Reverse((_, k))) = heap.pop() {
        order.push(k);
        for &s in &succ[k] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse((raw[s][0], s)));
            }
        }
    }
    let mut renumber = vec![0usize; c];
    for (pos, &k) in order.iter().enumerate() {
        renumber[k] = pos;
    }
    let components = order.iter().map(|&k| raw[k].clone()).collect();
    let component_of = comp_of.iter().map(|&k| renumber[k]).collect();
    SccDecomposition { components, component_of }
}

/// Combines per-component equilibrium prices (in topological order) into
/// prices for the whole market. Each later component is scaled by
/// `(U + 1)` times the largest already-scaled price of its predecessor in the
/// order, so that no agent of an earlier component can afford anything
/// valued by a later one.
pub fn compose_equilibria(
    n: usize,
    u_max: u64,
    components: &[Vec<usize>],
    prices: &[Vec<BigInt>],
) -> Result<Vec<BigInt>, MarketError> {
    assert_eq!(components.len(), prices.len());
    let mut out = vec![BigInt::zero(); n];
    let mut scale = BigInt::one();
    let factor = BigInt::from(u_max) + 1;
    for (comp, p) in components.iter().zip(prices) {
        assert_eq!(comp.len(), p.len());
        if p.iter().any(|x| x <= &BigInt::zero()) {
            return Err(MarketError::NonPositivePrice);
        }
        let mut max = BigInt::zero();
        for (&agent, price) in comp.iter().zip(p) {
            let v = price * &scale;
            if v > max {
                max = v.clone();
            }
            out[agent] = v;
        }
        scale = &factor * max;
    }
    Ok(out)
}

/// Divides a positive integer vector by the gcd of its entries.
pub fn reduce_prices(q: &[BigInt]) -> Vec<BigInt> {
    let g = q.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if g.is_zero() || g.is_one() {
        return q.to_vec();
    }
    q.iter().map(|x| x / &g).collect()
}
