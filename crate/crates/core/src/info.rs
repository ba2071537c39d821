//! Entropy, conditional mutual information, KL divergence and functional entropy.
//!
//! Every measure is computed in nats. [`Measure`] converts to bits on demand.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{Distribution, Schema};

/// Logarithm base used when reporting measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    E,
    #[serde(rename = "2")]
    Two,
}

impl LogBase {
    /// Converts a value in nats into this base.
    pub fn from_nats(self, nats: f64) -> f64 {
        match self {
            LogBase::E => nats,
            LogBase::Two => nats / std::f64::consts::LN_2,
        }
    }

    /// `base^x`.
    pub fn pow(self, x: f64) -> f64 {
        match self {
            LogBase::E => x.exp(),
            LogBase::Two => x.exp2(),
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogBase::E => "e",
            LogBase::Two => "2",
        })
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e" | "E" | "nats" => Ok(LogBase::E),
            "2" | "bits" => Ok(LogBase::Two),
            other => Err(Error::InvalidArgument(format!("log base must be `e` or `2`, got `{other}`"))),
        }
    }
}

/// A non-negative information quantity, stored in nats. May be `+inf` for divergences.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct Measure(f64);

impl Measure {
    pub const ZERO: Measure = Measure(0.0);

    pub fn from_nats(nats: f64) -> Self {
        Measure(nats)
    }

    pub fn nats(self) -> f64 {
        self.0
    }

    pub fn bits(self) -> f64 {
        self.0 / std::f64::consts::LN_2
    }

    pub fn in_base(self, base: LogBase) -> f64 {
        base.from_nats(self.0)
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

/// Something that assigns probability mass to tuples of a schema.
pub trait Mass {
    fn schema(&self) -> &Schema;
    fn mass_at(&self, tuple: &[u32]) -> f64;
}

impl Mass for Distribution {
    fn schema(&self) -> &Schema {
        Distribution::schema(self)
    }

    fn mass_at(&self, tuple: &[u32]) -> f64 {
        Distribution::mass_at(self, tuple)
    }
}

/// Sums terms in ascending magnitude with Neumaier compensation.
pub fn stable_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut terms: Vec<f64> = terms.into_iter().collect();
    terms.sort_unstable_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Clamps a quantity that is non-negative in exact arithmetic.
///
/// Values down to `-1e-12 * max(1, scale)` are rounding noise and become zero;
/// anything more negative is reported as an internal inconsistency.
pub(crate) fn clamp_non_negative(value: f64, scale: f64, what: &str) -> Result<f64> {
    let tol = 1e-12 * scale.abs().max(1.0);
    if value < -tol {
        Err(Error::Consistency(format!("{what} evaluated to {value:e}")))
    } else {
        Ok(value.max(0.0))
    }
}

/// Shannon entropy of a probability vector, `0 log 0 = 0`.
pub fn entropy_of_masses<I: IntoIterator<Item = f64>>(masses: I) -> f64 {
    stable_sum(masses.into_iter().filter(|&p| p > 0.0).map(|p| -p * p.ln()))
}

/// Entropy of the empirical distribution with the given cell counts.
pub fn entropy_from_counts<I: IntoIterator<Item = u64>>(counts: I, total: u64) -> f64 {
    let n = total as f64;
    stable_sum(counts.into_iter().filter(|&c| c > 0).map(|c| {
        let c = c as f64;
        (c / n) * (n / c).ln()
    }))
}

pub(crate) fn entropy_cols(p: &Distribution, cols: &[usize]) -> f64 {
    if cols.is_empty() {
        return 0.0;
    }
    if cols.len() == p.schema().len() {
        return entropy_of_masses(p.iter().map(|(_, m)| m));
    }
    entropy_of_masses(p.marginal_cols(cols).into_iter().map(|(_, m)| m))
}

/// `H(X_attrs)` of the marginal of `p` on `attrs`. Repeated names are merged; `H(∅) = 0`.
pub fn entropy<S: AsRef<str>>(p: &Distribution, attrs: &[S]) -> Result<Measure> {
    let cols = p.schema().resolve_set(attrs)?;
    Ok(Measure(entropy_cols(p, &cols)))
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut u: Vec<usize> = a.iter().chain(b).copied().collect();
    u.sort_unstable();
    u.dedup();
    u
}

pub(crate) fn cmi_cols(p: &Distribution, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64> {
    let bc = entropy_cols(p, &union(b, c));
    let ac = entropy_cols(p, &union(a, c));
    let abc = entropy_cols(p, &union(&union(a, b), c));
    let hc = entropy_cols(p, c);
    clamp_non_negative(stable_sum([bc, ac, -abc, -hc]), bc + ac, "conditional mutual information")
}

/// `I(A;B|C) = H(BC) + H(AC) - H(ABC) - H(C)`. The sets may overlap.
pub fn cond_mutual_info<S: AsRef<str>>(p: &Distribution, a: &[S], b: &[S], c: &[S]) -> Result<Measure> {
    let schema = p.schema();
    let (a, b, c) = (schema.resolve_set(a)?, schema.resolve_set(b)?, schema.resolve_set(c)?);
    Ok(Measure(cmi_cols(p, &a, &b, &c)?))
}

/// `I(A;B)`.
pub fn mutual_info<S: AsRef<str>>(p: &Distribution, a: &[S], b: &[S]) -> Result<Measure> {
    cond_mutual_info(p, a, b, &[])
}

/// `D_KL(P || Q)`, `+inf` when `P` puts mass where `Q` does not.
pub fn kl_divergence<Q: Mass + ?Sized>(p: &Distribution, q: &Q) -> Result<Measure> {
    if !p.schema().same_shape(q.schema()) {
        return Err(Error::SchemaMismatch("KL divergence between distributions over different schemas".into()));
    }
    let mut terms = Vec::with_capacity(p.support_len());
    for (t, pm) in p.iter() {
        let qm = q.mass_at(t);
        if qm <= 0.0 {
            return Ok(Measure(f64::INFINITY));
        }
        terms.push(pm * (pm / qm).ln());
    }
    let scale: f64 = terms.iter().map(|t| t.abs()).sum();
    Ok(Measure(clamp_non_negative(stable_sum(terms), scale, "KL divergence")?))
}

/// `Ent(X) = E[X log X] - E[X] log E[X]` for a weighted sample `(value, weight)`.
pub fn functional_entropy(samples: &[(f64, f64)]) -> Result<f64> {
    let mut wsum = 0.0;
    for &(x, w) in samples {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::InvalidArgument(format!("functional entropy needs non-negative values, got {x}")));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid weight {w}")));
        }
        wsum += w;
    }
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("weights sum to {wsum}, not 1")));
    }
    let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
    let e_xlogx = stable_sum(samples.iter().map(|&(x, w)| w * xlogx(x)));
    let mean = stable_sum(samples.iter().map(|&(x, w)| w * x));
    let ent = e_xlogx - xlogx(mean);
    clamp_non_negative(ent, e_xlogx.abs() + xlogx(mean).abs(), "functional entropy")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{empirical, Relation, Schema};

    fn rel(sizes: &[(&str, u32)], rows: &[&[u32]]) -> Relation {
        Relation::from_rows(Schema::with_sizes(sizes).unwrap(), rows.iter()).unwrap()
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn uniform_entropy() {
        let p = empirical(&rel(&[("A", 4)], &[&[0], &[1], &[2], &[3]])).unwrap();
        assert!((entropy(&p, &["A"]).unwrap().nats() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy::<&str>(&p, &[]).unwrap(), Measure::ZERO);
    }

    #[test]
    fn diagonal_entropies_and_mi() {
        let n = 10u32;
        let rows: Vec<[u32; 2]> = (0..n).map(|i| [i, i]).collect();
        let r = Relation::from_rows(Schema::with_sizes(&[("A", n), ("B", n)]).unwrap(), &rows).unwrap();
        let p = empirical(&r).unwrap();
        let ln_n = (n as f64).ln();
        for attrs in [&["A"][..], &["B"], &["A", "B"]] {
            assert!((entropy(&p, attrs).unwrap().nats() - ln_n).abs() < 1e-12);
        }
        assert!((mutual_info(&p, &["A"], &["B"]).unwrap().nats() - ln_n).abs() < 1e-12);
    }

    #[test]
    fn marginal_entropy_by_direct_summation() {
        let p = empirical(&rel(&[("A", 2), ("B", 2)], &[&[0, 0], &[0, 1], &[1, 0]])).unwrap();
        // Marginal of A is (2/3, 1/3).
        let oracle = -(2.0 / 3.0) * (2.0f64 / 3.0).ln() - (1.0 / 3.0) * (1.0f64 / 3.0).ln();
        let h = entropy(&p, &["A"]).unwrap().nats();
        assert!((h - oracle).abs() < 1e-15);
        assert!((h - (3f64.ln() - 2.0 / 3.0 * LN2)).abs() < 1e-15);
    }

    #[test]
    fn product_distribution_is_independent() {
        let rows: Vec<[u32; 2]> = (0..3).flat_map(|a| (0..2).map(move |b| [a, b])).collect();
        let r = Relation::from_rows(Schema::with_sizes(&[("A", 3), ("B", 2)]).unwrap(), &rows).unwrap();
        let p = empirical(&r).unwrap();
        assert_eq!(mutual_info(&p, &["A"], &["B"]).unwrap(), Measure::ZERO);
    }

    #[test]
    fn cmi_matches_four_entropy_oracle() {
        let r = rel(
            &[("A", 3), ("B", 3), ("C", 2)],
            &[&[0, 0, 0], &[0, 1, 0], &[1, 1, 0], &[2, 2, 1], &[2, 0, 1], &[1, 0, 1], &[1, 0, 1]],
        );
        let p = empirical(&r).unwrap();
        // Oracle: marginal entropies from hand-rolled counting.
        let h = |cols: &[usize]| {
            let mut m = std::collections::BTreeMap::<Vec<u32>, u64>::new();
            for (t, k) in r.iter() {
                *m.entry(cols.iter().map(|&c| t[c]).collect()).or_default() += k;
            }
            let n = r.len() as f64;
            m.values().map(|&k| -(k as f64 / n) * (k as f64 / n).ln()).sum::<f64>()
        };
        let oracle = h(&[1, 2]) + h(&[0, 2]) - h(&[0, 1, 2]) - h(&[2]);
        let got = cond_mutual_info(&p, &["A"], &["B"], &["C"]).unwrap().nats();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
        // Overlap with the conditioning set changes nothing.
        let overlapped = cond_mutual_info(&p, &["A", "C"], &["B", "C"], &["C"]).unwrap().nats();
        assert!((overlapped - got).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let s = Schema::with_sizes(&[("A", 2)]).unwrap();
        let p = Distribution::from_masses(s.clone(), [([0], 0.5), ([1], 0.5)]).unwrap();
        let q = Distribution::from_masses(s.clone(), [([0], 0.75), ([1], 0.25)]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), Measure::ZERO);
        let expected = 0.5 * (2.0f64 / 3.0).ln() + 0.5 * 2f64.ln();
        assert!((kl_divergence(&p, &q).unwrap().nats() - expected).abs() < 1e-15);

        let point = Distribution::from_masses(s.clone(), [([0], 1.0)]).unwrap();
        assert!(kl_divergence(&p, &point).unwrap().is_infinite());
        assert_eq!(kl_divergence(&point, &p).unwrap().nats(), 2f64.ln());

        let other = Distribution::from_masses(Schema::with_sizes(&[("B", 2)]).unwrap(), [([0], 1.0)]).unwrap();
        assert!(matches!(kl_divergence(&p, &other), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn functional_entropy_examples() {
        assert_eq!(functional_entropy(&[(3.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(functional_entropy(&[(3.0, 0.25), (3.0, 0.75)]).unwrap(), 0.0);
        // X in {0, 2} equiprobable: E[X log X] = log 2, E[X] = 1.
        assert!((functional_entropy(&[(0.0, 0.5), (2.0, 0.5)]).unwrap() - LN2).abs() < 1e-15);
        assert!(functional_entropy(&[(-1.0, 1.0)]).is_err());
        assert!(functional_entropy(&[(1.0, 0.3)]).is_err());
    }

    #[test]
    fn base_conversion() {
        let m = Measure::from_nats(3.0);
        assert_eq!(m.bits(), 3.0 / LN2);
        assert_eq!(m.in_base(LogBase::Two), m.bits());
        assert_eq!(m.in_base(LogBase::E), 3.0);
        assert_eq!("2".parse::<LogBase>().unwrap(), LogBase::Two);
        assert!("10".parse::<LogBase>().is_err());
    }

    #[test]
    fn stable_sum_is_compensated() {
        let terms = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(stable_sum(terms), 2.0);
    }
}
