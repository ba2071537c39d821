//! Deterministic and high-probability bounds relating `J` and `ρ`.
//!
//! Deterministic facts checked here:
//! * `J ≤ log(1 + ρ)`, equivalently `ρ ≥ base^J - 1`;
//! * `max_i I_i ≤ J ≤ Σ_i I_i` over the MVD support;
//! * `log(1 + ρ) ≤ Σ_i log(1 + ρ_i)` where `ρ_i` is the spurious ratio of the i-th support MVD.
//!
//! The high-probability bounds hold for relations drawn uniformly without
//! replacement from the full product domain and depend on declared domain
//! sizes. Their constants are evaluated with natural logarithms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::info::{self, LogBase, Measure};
use crate::jointree::{self, AttrSet, JoinTree, RootedOrder, SpuriousCount};
use crate::relation::{empirical, Relation, Schema};

/// Tolerance for the deterministic inequalities.
pub const INEQUALITY_TOL: f64 = 1e-9;

/// `2 log(d) / √d`.
pub fn c_constant(d: f64) -> f64 {
    2.0 * d.ln() / d.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundCheck {
    /// `log(1 + ρ) - J`, in nats.
    pub gap: f64,
    /// Smallest ρ compatible with `J`: `e^J - 1` (equal to `2^J - 1` with `J` in bits).
    pub rho_min: f64,
    pub pass: bool,
}

/// Checks `J ≤ log(1 + ρ)`.
pub fn lower_bound_check(j: Measure, rho: f64) -> LowerBoundCheck {
    let gap = rho.ln_1p() - j.nats();
    LowerBoundCheck { gap, rho_min: j.nats().exp_m1(), pass: gap >= -INEQUALITY_TOL }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainInequality {
    /// `log(1 + ρ(R, T))`, nats.
    pub lhs: f64,
    /// `Σ_i log(1 + ρ(R, φ_i))`, nats.
    pub rhs: f64,
    pub per_mvd: Vec<SpuriousCount>,
    pub pass: bool,
}

/// `log(1 + ρ(R,T)) ≤ Σ_i log(1 + ρ(R, φ_i))` over the MVD support of `order`.
///
/// This is not an identity of relations: it holds for many but not all of them
/// (see the `chain_counterexample` test), so `pass` is an observation.
pub fn chain_inequality(r: &Relation, tree: &JoinTree, order: &RootedOrder) -> Result<ChainInequality> {
    let whole = jointree::spurious_count(r, tree)?;
    let per_mvd =
        jointree::mvd_support(order).iter().map(|m| m.spurious_count(r)).collect::<Result<Vec<_>>>()?;
    let lhs = whole.log1p_ratio();
    let rhs = info::stable_sum(per_mvd.iter().map(SpuriousCount::log1p_ratio));
    Ok(ChainInequality { lhs, rhs, pass: lhs <= rhs + INEQUALITY_TOL, per_mvd })
}

/// Domain sizes of an MVD `C ↠ A | B`, normalized so that `d_a ≥ d_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MvdDims {
    pub d_a: u64,
    pub d_b: u64,
    pub d_c: u64,
}

impl MvdDims {
    pub fn new(d_a: u64, d_b: u64, d_c: u64) -> Result<Self> {
        if d_a == 0 || d_b == 0 || d_c == 0 {
            return Err(Error::InvalidArgument("domain sizes must be positive".into()));
        }
        let (d_a, d_b) = if d_a >= d_b { (d_a, d_b) } else { (d_b, d_a) };
        Ok(MvdDims { d_a, d_b, d_c })
    }

    /// `max(d_a, d_c)`.
    pub fn d_bar(&self) -> u64 {
        self.d_a.max(self.d_c)
    }

    /// Dimensions of `mvd` from the declared domain sizes in `schema`.
    pub fn of_mvd(mvd: &jointree::Mvd, schema: &Schema) -> Result<Self> {
        let product = |set: &AttrSet| -> Result<u64> {
            set.iter().try_fold(1u64, |acc, name| {
                let a = schema.attribute(name)?;
                if !a.is_declared() {
                    return Err(Error::MissingDomain(name.clone()));
                }
                acc.checked_mul(a.size() as u64)
                    .ok_or_else(|| Error::Overflow(format!("domain product for {mvd} exceeds u64")))
            })
        };
        let (left, right) = mvd.sides();
        MvdDims::new(product(&left)?, product(&right)?, product(&mvd.key)?)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonStar {
    pub value: f64,
    /// Whether `N ≥ 256 d_a d̄ log(384 d̄ / δ)`.
    pub condition_ok: bool,
    pub required_n: f64,
}

/// `ε*(φ, N, δ) = 60 √(d_a d̄ log³(6 N d_c / δ) / N)`.
pub fn epsilon_star(dims: MvdDims, n: u64, delta: f64) -> Result<EpsilonStar> {
    check_delta(delta)?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let (d_a, d_bar, d_c, n) = (dims.d_a as f64, dims.d_bar() as f64, dims.d_c as f64, n as f64);
    let value = 60.0 * (d_a * d_bar * (6.0 * n * d_c / delta).ln().powi(3) / n).sqrt();
    let required_n = 256.0 * d_a * d_bar * (384.0 * d_bar / delta).ln();
    Ok(EpsilonStar { value, condition_ok: n >= required_n, required_n })
}

fn check_eta(d_a: u64, d_b: u64, eta: u64) -> Result<()> {
    if d_a == 0 || d_b == 0 {
        return Err(Error::InvalidArgument("domain sizes must be positive".into()));
    }
    let cells = (d_a as u128) * (d_b as u128);
    if eta == 0 || eta as u128 > cells {
        return Err(Error::InvalidArgument(format!("eta must lie in [1, {cells}], got {eta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyConfidence {
    /// Lower bound on `H(A_S)`, nats.
    pub bound: f64,
    /// `log d_a`, the upper end of the interval.
    pub log_d_a: f64,
    /// Whether `η ≥ 128 d_a log(128 d_a / δ)`.
    pub condition_ok: bool,
    pub required_eta: f64,
}

/// `H(A_S) ≥ log d_a - 20 √(d_a log³(η/δ) / η)` with `d_a ≥ d_b` after normalization.
pub fn entropy_confidence(d_a: u64, d_b: u64, eta: u64, delta: f64) -> Result<EntropyConfidence> {
    check_delta(delta)?;
    check_eta(d_a, d_b, eta)?;
    let d_a = d_a.max(d_b) as f64;
    let eta = eta as f64;
    let log_d_a = d_a.ln();
    let bound = log_d_a - 20.0 * (d_a * (eta / delta).ln().powi(3) / eta).sqrt();
    let required_eta = 128.0 * d_a * (128.0 * d_a / delta).ln();
    Ok(EntropyConfidence { bound, log_d_a, condition_ok: eta >= required_eta, required_eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiConfidence {
    /// Lower bound on `I(A_S; B_S)`, nats.
    pub bound: f64,
    /// `d_a d_b / η - 1`, an upper bound on ρ for any relation of size η.
    pub rho_bar: f64,
    pub condition_ok: bool,
}

/// `I(A_S; B_S) ≥ log(1 + ρ̄) - 40 √(d_a log³(2η/δ) / η)`.
pub fn mi_confidence(d_a: u64, d_b: u64, eta: u64, delta: f64) -> Result<MiConfidence> {
    let e = entropy_confidence(d_a, d_b, eta, delta)?;
    let d_big = d_a.max(d_b) as f64;
    let eta_f = eta as f64;
    let rho_bar = (d_a as f64 * d_b as f64) / eta_f - 1.0;
    let bound = (d_a as f64 * d_b as f64 / eta_f).ln() - 40.0 * (d_big * (2.0 * eta_f / delta).ln().powi(3) / eta_f).sqrt();
    Ok(MiConfidence { bound, rho_bar, condition_ok: e.condition_ok })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// Right-hand side minus left-hand side (log-valued, report base).
    pub gap: f64,
}

impl Verdict {
    fn of(lhs: f64, rhs: f64) -> Self {
        Verdict { pass: lhs <= rhs + INEQUALITY_TOL, gap: rhs - lhs }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdicts {
    /// `J ≤ log(1 + ρ)`.
    pub lower_bound: Verdict,
    /// `max_i I_i ≤ J`.
    pub sandwich_lower: Verdict,
    /// `J ≤ Σ_i I_i`.
    pub sandwich_upper: Verdict,
    /// `max_i log(1 + ρ_i) ≤ log(1 + ρ)`: every support MVD's join embeds in the full join.
    pub support_max: Verdict,
    /// `log(1 + ρ) ≤ Σ_i log(1 + ρ_i)`. Can fail; not part of `deterministic_ok`.
    pub chain: Verdict,
    /// Observed `log(1 + ρ) ≤ Σ_i (I_i + ε_i)`; a probability-`1-δ` statement under the random model.
    pub upper_bound_sum_i: Verdict,
    /// Observed `log(1 + ρ) ≤ (m-1) J + Σ_i ε_i`; same caveat.
    pub upper_bound_m_j: Verdict,
    /// All qualifying conditions of the per-MVD bounds hold.
    pub conditions_ok: bool,
    /// `lower_bound`, `sandwich_lower`, `sandwich_upper` and `support_max` all pass.
    pub deterministic_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MvdReport {
    pub mvd: String,
    #[serde(rename = "I")]
    pub i: f64,
    pub rho: f64,
    pub log1p_rho: f64,
    pub join_size: u128,
    pub epsilon: f64,
    pub condition_ok: bool,
    pub required_n: f64,
    pub dims: MvdDims,
}

/// Everything computed for one relation and join tree.
///
/// Log-valued fields are in the unit named by `log_base`; `rho` and `rho_min` are base-free.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_nats")]
    pub j_nats: f64,
    #[serde(rename = "J_bits")]
    pub j_bits: f64,
    pub rho: f64,
    pub log1p_rho: f64,
    pub rho_min: f64,
    pub delta: f64,
    pub log_base: LogBase,
    pub root: u32,
    pub relation_size: u64,
    pub distinct_size: u64,
    pub join_size: u128,
    pub sandwich_lower: f64,
    pub sandwich_upper: f64,
    pub chain_rhs: f64,
    pub mvds: Vec<MvdReport>,
    #[serde(rename = "upper_bound_sumI")]
    pub upper_bound_sum_i: f64,
    #[serde(rename = "upper_bound_mJ")]
    pub upper_bound_m_j: f64,
    pub verdicts: Verdicts,
    pub notes: Vec<String>,
}

impl BoundReport {
    /// The same report with log-valued fields expressed in `base`.
    pub fn in_base(&self, base: LogBase) -> BoundReport {
        if base == self.log_base {
            return self.clone();
        }
        let to_nats = |x: f64| match self.log_base {
            LogBase::E => x,
            LogBase::Two => x * std::f64::consts::LN_2,
        };
        let c = |x: f64| base.from_nats(to_nats(x));
        let v = |x: Verdict| Verdict { gap: c(x.gap), ..x };
        let mut r = self.clone();
        r.log_base = base;
        r.j = c(self.j);
        r.log1p_rho = c(self.log1p_rho);
        r.sandwich_lower = c(self.sandwich_lower);
        r.sandwich_upper = c(self.sandwich_upper);
        r.chain_rhs = c(self.chain_rhs);
        r.upper_bound_sum_i = c(self.upper_bound_sum_i);
        r.upper_bound_m_j = c(self.upper_bound_m_j);
        for m in &mut r.mvds {
            m.i = c(m.i);
            m.log1p_rho = c(m.log1p_rho);
            m.epsilon = c(m.epsilon);
        }
        let vd = &mut r.verdicts;
        vd.lower_bound = v(vd.lower_bound);
        vd.sandwich_lower = v(vd.sandwich_lower);
        vd.sandwich_upper = v(vd.sandwich_upper);
        vd.support_max = v(vd.support_max);
        vd.chain = v(vd.chain);
        vd.upper_bound_sum_i = v(vd.upper_bound_sum_i);
        vd.upper_bound_m_j = v(vd.upper_bound_m_j);
        r
    }
}

/// Evaluates every bound for `(R, T)` and assembles a [`BoundReport`] in nats.
///
/// Each support MVD gets `ε_i = ε*(φ_i, N, δ/(m-1))` with dimensions taken from the
/// declared domain sizes; `N` is the number of distinct tuples.
pub fn schema_upper_bound(tree: &JoinTree, r: &Relation, delta: f64, order: &RootedOrder) -> Result<BoundReport> {
    check_delta(delta)?;
    let attrs: Vec<String> = tree.attributes().into_iter().collect();
    for a in &attrs {
        if !r.schema().attribute(a)?.is_declared() {
            return Err(Error::MissingDomain(a.clone()));
        }
    }
    let p = empirical(r)?;
    let j = jointree::j_measure(tree, &p)?;
    let whole = jointree::spurious_count(r, tree)?;
    let rho = whole.ratio();
    let log1p_rho = whole.log1p_ratio();
    let lower = lower_bound_check(j, rho);

    let support = jointree::mvd_support(order);
    let m_minus_1 = support.len();
    let n = whole.distinct;
    let mut mvds = Vec::with_capacity(m_minus_1);
    for mvd in &support {
        let i = mvd.mutual_info(&p)?.nats();
        let count = mvd.spurious_count(r)?;
        let dims = MvdDims::of_mvd(mvd, r.schema())?;
        let eps = epsilon_star(dims, n, delta / m_minus_1 as f64)?;
        mvds.push(MvdReport {
            mvd: mvd.to_string(),
            i,
            rho: count.ratio(),
            log1p_rho: count.log1p_ratio(),
            join_size: count.join_size,
            epsilon: eps.value,
            condition_ok: eps.condition_ok,
            required_n: eps.required_n,
            dims,
        });
    }
    let sum_i = info::stable_sum(mvds.iter().map(|m| m.i));
    let max_i = mvds.iter().map(|m| m.i).fold(0.0, f64::max);
    let sum_eps = info::stable_sum(mvds.iter().map(|m| m.epsilon));
    let chain_rhs = info::stable_sum(mvds.iter().map(|m| m.log1p_rho));
    let max_log1p_rho_i = mvds.iter().map(|m| m.log1p_rho).fold(0.0, f64::max);
    let upper_bound_sum_i = sum_i + sum_eps;
    let upper_bound_m_j = m_minus_1 as f64 * j.nats() + sum_eps;
    let conditions_ok = mvds.iter().all(|m| m.condition_ok);

    let verdicts = Verdicts {
        lower_bound: Verdict::of(j.nats(), log1p_rho),
        sandwich_lower: Verdict::of(max_i, j.nats()),
        sandwich_upper: Verdict::of(j.nats(), sum_i),
        support_max: Verdict::of(max_log1p_rho_i, log1p_rho),
        chain: Verdict::of(log1p_rho, chain_rhs),
        upper_bound_sum_i: Verdict::of(log1p_rho, upper_bound_sum_i),
        upper_bound_m_j: Verdict::of(log1p_rho, upper_bound_m_j),
        conditions_ok,
        deterministic_ok: false,
    };
    let deterministic_ok =
        verdicts.lower_bound.pass && verdicts.sandwich_lower.pass && verdicts.sandwich_upper.pass && verdicts.support_max.pass;

    let mut notes = vec![
        "upper_bound_sumI and upper_bound_mJ hold with probability at least 1-delta for relations drawn uniformly \
         without replacement; they are not deterministic guarantees"
            .to_string(),
        "high-probability constants are evaluated with natural logarithms".to_string(),
    ];
    if m_minus_1 > 0 && !conditions_ok {
        notes.push("outside guarantee regime: some qualifying condition on N fails".to_string());
    }
    if !verdicts.chain.pass {
        notes.push(
            "log(1+rho) exceeds the sum of log(1+rho_i) over the support MVDs; this inequality does not hold for \
             every relation, and the upper bounds built on it inherit the gap"
                .to_string(),
        );
    }
    if r.len() != n {
        notes.push(
            "relation has duplicate rows: rho counts distinct tuples while J uses multiplicities".to_string(),
        );
    }
    notes.extend(tree.warnings().iter().cloned());

    Ok(BoundReport {
        j: j.nats(),
        j_nats: j.nats(),
        j_bits: j.bits(),
        rho,
        log1p_rho,
        rho_min: lower.rho_min,
        delta,
        log_base: LogBase::E,
        root: order.root(),
        relation_size: r.len(),
        distinct_size: n,
        join_size: whole.join_size,
        sandwich_lower: max_i,
        sandwich_upper: sum_i,
        chain_rhs,
        mvds,
        upper_bound_sum_i,
        upper_bound_m_j,
        verdicts: Verdicts { deterministic_ok, ..verdicts },
        notes,
    })
}
