//! Recovery of exact equilibrium prices from the loop's final state.
//!
//! Let `F` be the undirected equality graph and `F'` the same graph with the
//! ownership edges `(b_i, c_i)` added. First, every component of `F'` without
//! an anchor good is repeatedly scaled up until it gains an equality edge to
//! the rest. Then each component of `F'` yields a square integer system:
//! spanning-tree ratio equations per component of `F`, one money-balance
//! equation per component of `F` except the anchored one, and `p_s = 1` for
//! the anchor `s`. The system is solved fraction-free.

use std::collections::VecDeque;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::flow::EqualityNetwork;
use crate::market::{reduce_prices, Market};
use crate::numerics::NumericsError;
use crate::solver::{LoopOutcome, PriceState};
use crate::verify::check_equilibrium;
use crate::Q;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractionError {
    #[error("linear system of component {0:?} is singular")]
    Singular(Vec<usize>),
    #[error("component {0:?} has no anchor and cannot be joined")]
    CannotJoin(Vec<usize>),
    #[error("extracted price {0} is not positive")]
    NonPositive(usize),
    #[error("extracted prices are not an equilibrium: {0}")]
    VerificationFailed(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Components of the equality graph with and without ownership edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentStructure {
    /// Components of `F'`, as sorted agent indices.
    pub joined: Vec<Vec<usize>>,
    /// For every agent, the component of `F` containing buyer `b_i`.
    pub buyer_part: Vec<usize>,
    /// For every agent, the component of `F` containing good `c_i`.
    pub good_part: Vec<usize>,
    pub parts: usize,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

/// Buyers are nodes `0..n`, goods `n..2n`.
pub fn component_structure(edges: &[Vec<bool>]) -> ComponentStructure {
    let n = edges.len();
    let mut f = Dsu::new(2 * n);
    for (i, row) in edges.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            if e {
                f.union(i, n + j);
            }
        }
    }
    let mut label = vec![usize::MAX; 2 * n];
    let mut parts = 0;
    for v in 0..2 * n {
        let r = f.find(v);
        if label[r] == usize::MAX {
            label[r] = parts;
            parts += 1;
        }
        label[v] = label[r];
    }
    let buyer_part = (0..n).map(|i| label[i]).collect();
    let good_part = (0..n).map(|j| label[n + j]).collect();

    let mut g = Dsu(f.0.clone());
    for i in 0..n {
        g.union(i, n + i);
    }
    let mut joined: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; 2 * n];
    for i in 0..n {
        let r = g.find(i);
        if slot[r] == usize::MAX {
            slot[r] = joined.len();
            joined.push(Vec::new());
        }
        joined[slot[r]].push(i);
    }
    ComponentStructure { joined, buyer_part, good_part, parts }
}

/// Integer system `A p = e_anchor` of one component of `F'`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractionSystem {
    pub agents: Vec<usize>,
    pub anchor: usize,
    pub matrix: Vec<Vec<BigInt>>,
    pub rhs: Vec<BigInt>,
}

pub fn build_system(
    market: &Market,
    edges: &[Vec<bool>],
    structure: &ComponentStructure,
    agents: &[usize],
    anchor: usize,
) -> ExtractionSystem {
    let n = edges.len();
    let m = agents.len();
    let mut col = vec![usize::MAX; n];
    for (k, &a) in agents.iter().enumerate() {
        col[a] = k;
    }
    let mut rows: Vec<Vec<BigInt>> = Vec::new();

    let mut parts: Vec<usize> = agents
        .iter()
        .flat_map(|&a| [structure.buyer_part[a], structure.good_part[a]])
        .collect();
    parts.sort_unstable();
    parts.dedup();

    // spanning trees: BFS from the lowest good of each part
    let mut seen_b = vec![false; n];
    let mut seen_c = vec![false; n];
    for &part in &parts {
        let Some(root) = agents.iter().copied().find(|&j| structure.good_part[j] == part) else {
            continue;
        };
        seen_c[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if !edges[i][j] || seen_b[i] {
                    continue;
                }
                seen_b[i] = true;
                for jj in 0..n {
                    if !edges[i][jj] || seen_c[jj] {
                        continue;
                    }
                    seen_c[jj] = true;
                    let mut row = vec![BigInt::zero(); m];
                    // u_ij' p_j - u_ij p_j' = 0
                    row[col[j]] += BigInt::from(market.u(i, jj));
                    row[col[jj]] -= BigInt::from(market.u(i, j));
                    rows.push(row);
                    queue.push_back(jj);
                }
            }
        }
    }

    let anchor_part = structure.good_part[anchor];
    for &part in parts.iter().filter(|&&p| p != anchor_part) {
        let mut row = vec![BigInt::zero(); m];
        for &a in agents {
            if structure.buyer_part[a] == part {
                row[col[a]] += 1;
            }
            if structure.good_part[a] == part {
                row[col[a]] -= 1;
            }
        }
        rows.push(row);
    }

    let mut row = vec![BigInt::zero(); m];
    row[col[anchor]] = BigInt::one();
    rows.push(row);
    let mut rhs = vec![BigInt::zero(); rows.len()];
    *rhs.last_mut().expect("anchor row") = BigInt::one();
    ExtractionSystem { agents: agents.to_vec(), anchor, matrix: rows, rhs }
}

/// Fraction-free elimination of `[A | b]` followed by fraction-free back
/// substitution. Returns `(q, D)` with `D = |det A|` and `A (q / D) = b`.
pub fn solve_system(a: &[Vec<BigInt>], b: &[BigInt]) -> Option<(Vec<BigInt>, BigInt)> {
    let m = a.len();
    if m == 0 || a.iter().any(|r| r.len() != m) || b.len() != m {
        return None;
    }
    let mut mat: Vec<Vec<BigInt>> = a
        .iter()
        .zip(b)
        .map(|(r, x)| {
            let mut row = r.clone();
            row.push(x.clone());
            row
        })
        .collect();
    let mut prev = BigInt::one();
    let mut negate = false;
    for k in 0..m {
        let pivot = (k..m).find(|&r| !mat[r][k].is_zero())?;
        if pivot != k {
            mat.swap(pivot, k);
            negate = !negate;
        }
        for i in k + 1..m {
            for j in k + 1..=m {
                let v = (&mat[k][k] * &mat[i][j] - &mat[i][k] * &mat[k][j]) / &prev;
                mat[i][j] = v;
            }
            mat[i][k] = BigInt::zero();
        }
        prev = mat[k][k].clone();
    }
    let det = if negate { -&mat[m - 1][m - 1] } else { mat[m - 1][m - 1].clone() };
    // y = det * x, integral by Cramer's rule
    let mut y = vec![BigInt::zero(); m];
    for i in (0..m).rev() {
        let mut acc = &det * &mat[i][m];
        for j in i + 1..m {
            acc -= &mat[i][j] * &y[j];
        }
        let (quot, rem) = acc.div_rem(&mat[i][i]);
        debug_assert!(rem.is_zero());
        y[i] = quot;
    }
    if det.is_negative() {
        Some((y.into_iter().map(|v| -v).collect(), -det))
    } else {
        Some((y, det))
    }
}

/// Output of [`extract`].
#[derive(Clone, Debug)]
pub struct Extraction {
    /// Reduced integer equilibrium prices.
    pub prices: Vec<BigInt>,
    /// `q` before reduction; `q / denominator` approximates the joined prices.
    pub q: Vec<BigInt>,
    pub denominator: BigInt,
    pub component_denominators: Vec<BigInt>,
    /// Prices after joining (rounded prices in fixed mode).
    pub approx_prices: Vec<Q>,
    pub components: Vec<Vec<usize>>,
    pub joins: usize,
    /// Every final equality edge is still an equality edge at `q`.
    pub edges_preserved: bool,
}

/// Scaling of one component of `F'` during joining.
enum JoinState<'a> {
    Exact { prices: Vec<Q> },
    Power { exponents: Vec<BigUint>, caps: &'a [Q], util: &'a [Vec<Option<BigUint>>] },
}

impl JoinState<'_> {
    fn network(&self, market: &Market) -> EqualityNetwork {
        match self {
            JoinState::Exact { prices } => EqualityNetwork::exact(market, prices),
            JoinState::Power { exponents, caps, util } => EqualityNetwork::power(util, exponents, caps),
        }
    }

    fn is_unit(&self, j: usize) -> bool {
        match self {
            JoinState::Exact { prices } => prices[j].is_one(),
            JoinState::Power { exponents, .. } => exponents[j].is_zero(),
        }
    }

    /// Raises the component's prices until an edge to the outside appears.
    fn join(&mut self, market: &Market, net: &EqualityNetwork, comp: &[bool]) -> bool {
        let n = market.n();
        match self {
            JoinState::Exact { prices } => {
                let mut best: Option<Q> = None;
                for i in (0..n).filter(|&i| comp[i]) {
                    let j = net.goods_of(i)[0];
                    let alpha = Q::from_integer(BigInt::from(market.u(i, j))) / &prices[j];
                    for k in (0..n).filter(|&k| !comp[k] && market.u(i, k) > 0) {
                        let x = &alpha * &prices[k] / Q::from_integer(BigInt::from(market.u(i, k)));
                        if best.as_ref().is_none_or(|b| &x < b) {
                            best = Some(x);
                        }
                    }
                }
                let Some(x) = best else { return false };
                for j in (0..n).filter(|&j| comp[j]) {
                    prices[j] *= &x;
                }
            }
            JoinState::Power { exponents, util, .. } => {
                let mut best: Option<BigInt> = None;
                let crate::flow::BangPerBuck::Exponent(alpha) = &net.alpha else {
                    unreachable!("exponent network")
                };
                for i in (0..n).filter(|&i| comp[i]) {
                    for k in (0..n).filter(|&k| !comp[k]) {
                        if let Some(e) = &util[i][k] {
                            let d = &alpha[i] - (BigInt::from(e.clone()) - BigInt::from(exponents[k].clone()));
                            if best.as_ref().is_none_or(|b| &d < b) {
                                best = Some(d);
                            }
                        }
                    }
                }
                let Some(x) = best else { return false };
                let x = x.to_biguint().expect("outside goods are worse");
                for j in (0..n).filter(|&j| comp[j]) {
                    exponents[j] += &x;
                }
            }
        }
        true
    }
}

/// Exact equilibrium prices from the final loop state.
pub fn extract(market: &Market, outcome: &LoopOutcome) -> Result<Extraction, ExtractionError> {
    let n = market.n();
    let surplus_goods: Vec<bool> = outcome.flow.good_surpluses(&outcome.network).iter().map(|r| r.is_positive()).collect();
    let any_surplus = surplus_goods.iter().any(|&s| s);

    if let (PriceState::Exact(p), false) = (&outcome.prices, any_surplus) {
        // already an equilibrium
        let d = p.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        let q: Vec<BigInt> = p.iter().map(|x| (x * Q::from_integer(d.clone())).to_integer()).collect();
        return finish(market, q, d.clone(), vec![d], p.clone(), vec![(0..n).collect()], 0, &outcome.network);
    }

    let mut state = match &outcome.prices {
        PriceState::Exact(p) => JoinState::Exact { prices: p.clone() },
        PriceState::Power { exponents, caps } => JoinState::Power {
            exponents: exponents.clone(),
            caps,
            util: outcome.util_exp.as_deref().expect("fixed mode keeps rounded utilities"),
        },
    };
    let anchor_of = |state: &JoinState<'_>, comp: &[usize]| -> Option<usize> {
        if any_surplus {
            comp.iter().copied().find(|&j| surplus_goods[j])
        } else {
            comp.iter().copied().find(|&j| state.is_unit(j))
        }
    };

    let mut joins = 0;
    let mut net = outcome.network.clone();
    let structure = loop {
        let structure = component_structure(net.edges());
        let Some(comp) = structure.joined.iter().find(|c| anchor_of(&state, c).is_none()) else {
            break structure;
        };
        let mut mask = vec![false; n];
        for &a in comp {
            mask[a] = true;
        }
        if !state.join(market, &net, &mask) || joins > n {
            return Err(ExtractionError::CannotJoin(comp.clone()));
        }
        joins += 1;
        net = state.network(market);
    };

    let approx_prices = match &state {
        JoinState::Exact { prices } => prices.clone(),
        JoinState::Power { exponents, .. } => {
            let basis = outcome.constants.basis().expect("fixed constants");
            exponents.iter().map(|k| basis.rounded_price(k)).collect::<Result<_, _>>()?
        }
    };

    let systems: Vec<ExtractionSystem> = structure
        .joined
        .iter()
        .map(|comp| {
            let anchor = anchor_of(&state, comp).expect("anchored after joining");
            build_system(market, net.edges(), &structure, comp, anchor)
        })
        .collect();
    let solved: Vec<(Vec<BigInt>, BigInt)> = systems
        .iter()
        .map(|s| solve_system(&s.matrix, &s.rhs).ok_or_else(|| ExtractionError::Singular(s.agents.clone())))
        .collect::<Result<_, _>>()?;

    let d = solved.iter().fold(BigInt::one(), |acc, (_, d)| acc.lcm(d));
    let mut q = vec![BigInt::zero(); n];
    for (sys, (qs, ds)) in systems.iter().zip(&solved) {
        let scale = &d / ds;
        for (&a, v) in sys.agents.iter().zip(qs) {
            q[a] = v * &scale;
        }
    }
    let dens = solved.into_iter().map(|(_, d)| d).collect();
    finish(market, q, d, dens, approx_prices, structure.joined, joins, &net)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    market: &Market,
    q: Vec<BigInt>,
    denominator: BigInt,
    component_denominators: Vec<BigInt>,
    approx_prices: Vec<Q>,
    components: Vec<Vec<usize>>,
    joins: usize,
    net: &EqualityNetwork,
) -> Result<Extraction, ExtractionError> {
    if let Some(i) = q.iter().position(|x| !x.is_positive()) {
        return Err(ExtractionError::NonPositive(i));
    }
    let report = check_equilibrium(market, &q);
    if !report.is_equilibrium() {
        return Err(ExtractionError::VerificationFailed(report.summary()));
    }
    let at_q = EqualityNetwork::exact(market, &q.iter().map(|x| Q::from_integer(x.clone())).collect::<Vec<_>>());
    let n = market.n();
    let edges_preserved = (0..n).all(|i| (0..n).all(|j| !net.has_edge(i, j) || at_q.has_edge(i, j)));
    Ok(Extraction {
        prices: reduce_prices(&q),
        q,
        denominator,
        component_denominators,
        approx_prices,
        components,
        joins,
        edges_preserved,
    })
}
