#![allow(dead_code)]

use ad_market::balanced_flow::crossing_pair;
use ad_market::flow::EqualityNetwork;
use ad_market::solver::{IterationKind, IterationView, Observer, PriceState, StateView};
use ad_market::{Market, Q};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn q(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn qi(n: u64) -> Q {
    Q::from_integer(BigInt::from(n))
}

/// Unique solution of a square rational system, by Gauss-Jordan elimination.
pub fn solve_square(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Option<Vec<Q>> {
    let m = a.len();
    for c in 0..m {
        let p = (c..m).find(|&r| !a[r][c].is_zero())?;
        a.swap(c, p);
        b.swap(c, p);
        let piv = a[c][c].clone();
        for k in 0..m {
            a[c][k] = &a[c][k] / &piv;
        }
        b[c] = &b[c] / &piv;
        for r in 0..m {
            if r != c && !a[r][c].is_zero() {
                let f = a[r][c].clone();
                for k in 0..m {
                    let v = &a[c][k] * &f;
                    a[r][k] -= v;
                }
                let v = &b[c] * &f;
                b[r] -= v;
            }
        }
    }
    Some(b)
}

/// Keeps a maximal independent subset of the rows `(a, b)`; `None` if the
/// system is inconsistent.
fn independent_rows(rows: &[(Vec<Q>, Q)]) -> Option<Vec<(Vec<Q>, Q)>> {
    let mut kept: Vec<(Vec<Q>, Q)> = Vec::new();
    // reduced copies for the rank test
    let mut basis: Vec<(Vec<Q>, Q, usize)> = Vec::new();
    for (a, b) in rows {
        let mut v = a.clone();
        let mut rhs = b.clone();
        for (ba, bb, piv) in &basis {
            if !v[*piv].is_zero() {
                let f = &v[*piv] / &ba[*piv];
                for k in 0..v.len() {
                    let t = &ba[k] * &f;
                    v[k] -= t;
                }
                rhs -= bb * &f;
            }
        }
        match v.iter().position(|x| !x.is_zero()) {
            Some(piv) => {
                basis.push((v, rhs, piv));
                kept.push((a.clone(), b.clone()));
            }
            None => {
                if !rhs.is_zero() {
                    return None;
                }
            }
        }
    }
    Some(kept)
}

/// Minimum of `sum_i (cap_b[i] - y_i)^2` over buyer outflow vectors `y` of
/// maximum flows in `net`, by enumerating faces of the outflow polytope and
/// projecting onto each face's affine hull exactly. Intended for `n <= 3`.
pub fn l2_oracle(net: &EqualityNetwork) -> Q {
    let n = net.n();
    assert!(n <= 3);
    let cap_b: Vec<Q> = net.buyer_caps().to_vec();
    let gamma_cap = |mask: usize| -> Q {
        (0..n)
            .filter(|&j| (0..n).any(|i| mask >> i & 1 == 1 && net.has_edge(i, j)))
            .fold(Q::zero(), |acc, j| acc + net.good_cap(j))
    };
    let full = (1usize << n) - 1;
    let f_max = (0..=full)
        .map(|a| {
            let rest = (0..n).filter(|&i| a >> i & 1 == 0).fold(Q::zero(), |acc, i| acc + &cap_b[i]);
            rest + gamma_cap(a)
        })
        .min()
        .expect("non-empty");

    // inequality rows a.y <= b
    let mut ineq: Vec<(Vec<Q>, Q)> = Vec::new();
    for i in 0..n {
        let mut row = vec![Q::zero(); n];
        row[i] = -Q::one();
        ineq.push((row, Q::zero()));
        let mut row = vec![Q::zero(); n];
        row[i] = Q::one();
        ineq.push((row, cap_b[i].clone()));
    }
    for a in 1..=full {
        let row = (0..n).map(|i| if a >> i & 1 == 1 { Q::one() } else { Q::zero() }).collect();
        ineq.push((row, gamma_cap(a)));
    }
    let eq = (vec![Q::one(); n], f_max);

    let feasible = |y: &[Q]| {
        ineq.iter().all(|(a, b)| a.iter().zip(y).fold(Q::zero(), |s, (x, v)| s + x * v) <= *b)
            && y.iter().fold(Q::zero(), |s, v| s + v) == eq.1
    };
    let mut best: Option<Q> = None;
    let m = ineq.len();
    for mask in 0u32..(1u32 << m) {
        if mask.count_ones() as usize > n {
            continue;
        }
        let mut rows = vec![eq.clone()];
        rows.extend((0..m).filter(|&k| mask >> k & 1 == 1).map(|k| ineq[k].clone()));
        let Some(rows) = independent_rows(&rows) else { continue };
        // KKT: [I  M^T; M 0] [y; mu] = [c; d]
        let k = rows.len();
        let size = n + k;
        let mut a = vec![vec![Q::zero(); size]; size];
        let mut b = vec![Q::zero(); size];
        for i in 0..n {
            a[i][i] = Q::one();
            b[i] = cap_b[i].clone();
            for (r, (row, _)) in rows.iter().enumerate() {
                a[i][n + r] = row[i].clone();
            }
        }
        for (r, (row, rhs)) in rows.iter().enumerate() {
            for i in 0..n {
                a[n + r][i] = row[i].clone();
            }
            b[n + r] = rhs.clone();
        }
        let Some(sol) = solve_square(a, b) else { continue };
        let y = &sol[..n];
        if !feasible(y) {
            continue;
        }
        let val = (0..n).fold(Q::zero(), |s, i| {
            let d = &cap_b[i] - &y[i];
            s + &d * &d
        });
        if best.as_ref().is_none_or(|b| &val < b) {
            best = Some(val);
        }
    }
    best.expect("the optimum lies on some face")
}

/// Per-iteration checks of the loop's invariants, sorted by acceptance
/// criterion.
#[derive(Default)]
pub struct Invariants {
    pub n: usize,
    pub u_max: u64,
    /// Check the potential decrease with this `x_max` and `R`.
    pub potential: Option<(Q, u64)>,
    pub l2_oracle: bool,
    pub states: u64,
    pub iterations: u64,
    pub balancing: u64,
    pub xmax: u64,
    pub crossing: Vec<String>,
    pub l2_mismatch: Vec<String>,
    pub potential_violations: Vec<String>,
    pub structural: Vec<String>,
    pub oracle_checks: u64,
}

impl Invariants {
    pub fn new(n: usize, u_max: u64) -> Self {
        Invariants { n, u_max, ..Default::default() }
    }

    fn price_bound(&self) -> Q {
        Q::from_integer(num_traits::pow(BigInt::from(self.n as u64 * self.u_max), self.n - 1))
    }

    fn check_state(&mut self, label: &str, s: &StateView<'_>) {
        self.states += 1;
        if let Some((a, c)) = crossing_pair(s.network, s.flow) {
            self.crossing.push(format!("{label}: residual path from buyer {a} to buyer {c}"));
        }
        if let Err(e) = s.flow.validate(s.network) {
            self.structural.push(format!("{label}: invalid flow: {e}"));
        }
        if self.l2_oracle && self.n <= 3 {
            self.oracle_checks += 1;
            let want = l2_oracle(s.network);
            if s.surplus.l2_sq() != want {
                self.l2_mismatch.push(format!("{label}: l2_sq {} vs oracle {want}", s.surplus.l2_sq()));
            }
        }
        let bound = self.price_bound();
        let caps = s.prices.caps();
        if let Some(p) = caps.iter().find(|p| **p > bound) {
            self.structural.push(format!("{label}: price {p} above {bound}"));
        }
        for (j, r) in s.surplus.goods.iter().enumerate() {
            let unit = match s.prices {
                PriceState::Exact(p) => p[j].is_one(),
                PriceState::Power { exponents, .. } => exponents[j].is_zero(),
            };
            if r.is_positive() && !unit {
                self.structural.push(format!("{label}: good {j} has surplus {r} but price {}", caps[j]));
            }
        }
    }
}

fn exponents_of(p: &PriceState) -> Option<&[BigUint]> {
    match p {
        PriceState::Power { exponents, .. } => Some(exponents),
        PriceState::Exact(_) => None,
    }
}

impl Observer for Invariants {
    fn initial(&mut self, state: &StateView<'_>) {
        self.check_state("initial", state);
    }

    fn iteration(&mut self, v: &IterationView<'_>) {
        let rec = v.record;
        let label = format!("iteration {}", rec.iteration);
        self.iterations += 1;
        match rec.kind {
            IterationKind::Balancing => self.balancing += 1,
            IterationKind::XMax => self.xmax += 1,
        }
        self.check_state(&label, &v.after);

        let n = self.n;
        let before = v.before.prices.caps();
        let after = v.after.prices.caps();
        for j in 0..n {
            if after[j] < before[j] {
                self.structural.push(format!("{label}: price of {j} decreased"));
            }
        }
        if let (Some(a), Some(b)) = (exponents_of(v.before.prices), exponents_of(v.after.prices)) {
            if a.iter().zip(b).any(|(x, y)| y < x) {
                self.structural.push(format!("{label}: exponent decreased"));
            }
        }
        for j in 0..n {
            if v.before.surplus.goods[j].is_zero() && !v.after.surplus.goods[j].is_zero() {
                self.structural.push(format!("{label}: good {j} regained surplus"));
            }
        }
        // r(b_l) >= |r(B)| * 1000 / (2719 n)
        let lower = &rec.l1_before * q(1000, 2719 * n as i64);
        if rec.threshold < lower {
            self.structural.push(format!("{label}: r(b_l) = {} below {lower}", rec.threshold));
        }

        if let Some((x_max, r)) = &self.potential {
            let ok = match rec.kind {
                IterationKind::Balancing => {
                    let f = Q::one() - q(1, (*r * (n as u64).pow(3)) as i64);
                    rec.l2_sq_after <= &rec.l2_sq_before * &f * &f
                }
                IterationKind::XMax => rec.l2_sq_after <= &rec.l2_sq_before * x_max * x_max,
            };
            if !ok {
                self.potential_violations.push(format!(
                    "{label} ({:?}/{:?}): l2_sq {} -> {}",
                    rec.kind, rec.binding, rec.l2_sq_before, rec.l2_sq_after
                ));
            }
        }
    }
}

/// Market whose liking graph is a DAG of strongly connected blocks on a
/// shuffled agent order. With `violate`, one inner block is a singleton that
/// does not value its own good.
pub fn dag_market<R: Rng>(rng: &mut R, n: usize, u_max: u64, violate: bool) -> Market {
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut rest = &agents[..];
    while !rest.is_empty() {
        let size = rng.random_range(1..=rest.len().min(4));
        blocks.push(rest[..size].to_vec());
        rest = &rest[size..];
    }
    let bad = if violate {
        // an inner singleton block, so that its good has a buyer and it has a good
        if blocks.len() < 3 || blocks[1..blocks.len() - 1].iter().all(|b| b.len() != 1) {
            return dag_market_with_hole(rng, n, u_max);
        }
        let candidates: Vec<usize> = (1..blocks.len() - 1).filter(|&k| blocks[k].len() == 1).collect();
        Some(candidates[rng.random_range(0..candidates.len())])
    } else {
        None
    };
    build_dag(rng, n, u_max, &blocks, bad)
}

fn dag_market_with_hole<R: Rng>(rng: &mut R, n: usize, u_max: u64) -> Market {
    assert!(n >= 3);
    let mut agents: Vec<usize> = (0..n).collect();
    agents.shuffle(rng);
    let cut = rng.random_range(1..n - 1);
    let mut blocks = vec![agents[..cut].to_vec(), vec![agents[cut]]];
    if cut + 1 < n {
        blocks.push(agents[cut + 1..].to_vec());
    }
    build_dag(rng, n, u_max, &blocks, Some(1))
}

fn build_dag<R: Rng>(rng: &mut R, n: usize, u_max: u64, blocks: &[Vec<usize>], bad: Option<usize>) -> Market {
    let mut u = vec![vec![0u64; n]; n];
    for (k, b) in blocks.iter().enumerate() {
        if Some(k) == bad {
            continue;
        }
        if b.len() == 1 {
            u[b[0]][b[0]] = rng.random_range(1..=u_max);
        } else {
            for w in 0..b.len() {
                u[b[w]][b[(w + 1) % b.len()]] = rng.random_range(1..=u_max);
            }
            for &i in b {
                for &j in b {
                    if u[i][j] == 0 && rng.random_bool(0.3) {
                        u[i][j] = rng.random_range(1..=u_max);
                    }
                }
            }
        }
    }
    for p in 0..blocks.len() {
        for qb in p + 1..blocks.len() {
            if rng.random_bool(0.5) {
                let i = blocks[p][rng.random_range(0..blocks[p].len())];
                let j = blocks[qb][rng.random_range(0..blocks[qb].len())];
                u[i][j] = rng.random_range(1..=u_max);
            }
        }
    }
    if let Some(k) = bad {
        let a = blocks[k][0];
        let before = &blocks[k - 1];
        let after = &blocks[k + 1];
        u[before[rng.random_range(0..before.len())]][a] = rng.random_range(1..=u_max);
        u[a][after[rng.random_range(0..after.len())]] = rng.random_range(1..=u_max);
    }
    Market::new(u).expect("square")
}

/// Integers `lo <= (1 + 1/L)^k * 2^w <= hi`.
///
/// Small powers are computed exactly; large ones by square-and-multiply with
/// floor on the lower bound and ceiling on the upper bound. `w` is chosen so
/// that `hi - lo` is far below any tolerance the tests compare against.
pub struct PowerEnclosure {
    pub lo: BigInt,
    pub hi: BigInt,
    pub w: u64,
}

fn ceil_div(a: &BigInt, b: &BigInt) -> BigInt {
    -((-a).div_floor(b))
}

pub fn power_enclosure(k: u64, l: u64) -> PowerEnclosure {
    let log2 = k as f64 * (1.0 / l as f64).ln_1p() / std::f64::consts::LN_2;
    let b = log2.ceil() as u64 + 2;
    let w = b + 2 * (64 - k.leading_zeros() as u64) + 2 * (64 - l.leading_zeros() as u64) + 64;
    let one = BigInt::one() << w;
    let li = BigInt::from(l);
    if k as f64 * ((l + 1) as f64).log2() < 65536.0 {
        let kk = u32::try_from(k).unwrap();
        let num = BigInt::from(l + 1).pow(kk) * &one;
        let den = li.pow(kk);
        let lo = num.div_floor(&den);
        let hi = ceil_div(&num, &den);
        return PowerEnclosure { lo, hi, w };
    }
    let base = BigInt::from(l + 1) * &one;
    let (mut blo, mut bhi) = (base.div_floor(&li), ceil_div(&base, &li));
    let (mut lo, mut hi) = (one.clone(), one.clone());
    let bits = 64 - k.leading_zeros();
    for i in 0..bits {
        if k >> i & 1 == 1 {
            lo = (&lo * &blo) >> w;
            hi = ceil_div(&(&hi * &bhi), &one);
        }
        if i + 1 < bits {
            blo = (&blo * &blo) >> w;
            bhi = ceil_div(&(&bhi * &bhi), &one);
        }
    }
    PowerEnclosure { lo, hi, w }
}
