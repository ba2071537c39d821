//! Random relations drawn uniformly without replacement from a product domain,
//! and Monte Carlo trials of the MVD bounds on them.
//!
//! Every trial owns a ChaCha8 stream selected by `(seed, trial)`, so a trial is
//! reproducible on its own and trials run in parallel without shared state.
//! Results are always collected in trial order.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{self, MvdDims};
use crate::error::{Error, Result};
use crate::info;
use crate::relation::{Attribute, Relation, Schema};

/// Products up to this many cells are sampled with a bitset.
const BITSET_LIMIT: u128 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RandomModelSpec {
    pub names: Vec<String>,
    pub dims: Vec<u32>,
    /// Number of tuples drawn.
    pub n: u64,
    pub seed: u64,
    pub trials: usize,
}

impl RandomModelSpec {
    /// Attributes named `X1..Xn`.
    pub fn new(dims: Vec<u32>, n: u64, seed: u64, trials: usize) -> Result<Self> {
        let names = (1..=dims.len()).map(|i| format!("X{i}")).collect();
        RandomModelSpec { names, dims, n, seed, trials }.validated()
    }

    /// Attributes `A, B` and, when `d_c > 1`, `C`.
    pub fn mvd(d_a: u32, d_b: u32, d_c: u32, n: u64, seed: u64, trials: usize) -> Result<Self> {
        let (names, dims) = if d_c == 1 {
            (vec!["A".into(), "B".into()], vec![d_a, d_b])
        } else {
            (vec!["A".into(), "B".into(), "C".into()], vec![d_a, d_b, d_c])
        };
        RandomModelSpec { names, dims, n, seed, trials }.validated()
    }

    fn validated(self) -> Result<Self> {
        if self.dims.is_empty() || self.names.len() != self.dims.len() {
            return Err(Error::InvalidArgument("random model needs one name per domain size".into()));
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidArgument("domain sizes must be at least 1".into()));
        }
        let cells = self.cells()?;
        if self.n == 0 || self.n as u128 > cells {
            return Err(Error::InvalidArgument(format!("N must lie in [1, {cells}], got {}", self.n)));
        }
        Ok(self)
    }

    /// `∏ d_i`.
    pub fn cells(&self) -> Result<u128> {
        self.dims
            .iter()
            .try_fold(1u128, |acc, &d| acc.checked_mul(d as u128))
            .ok_or_else(|| Error::Overflow("product of domain sizes exceeds u128".into()))
    }

    pub fn schema(&self) -> Schema {
        let attrs = self.names.iter().zip(&self.dims).map(|(n, &d)| Attribute::declared(n.clone(), d).unwrap()).collect();
        Schema::new(attrs).unwrap()
    }

    /// Decodes a cell index; the last attribute varies fastest.
    pub fn decode(&self, mut index: u128, out: &mut [u32]) {
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = (index % d as u128) as u32;
            index /= d as u128;
        }
    }
}

/// The RNG stream of one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// SplitMix64 finalizer, used to derive per-configuration seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A uniformly random `n`-subset of `0..cells`, iterated in ascending order.
pub enum CellSample {
    Bits { words: Vec<u64>, n: u64 },
    Sorted(Vec<u128>),
}

impl CellSample {
    pub fn len(&self) -> u64 {
        match self {
            CellSample::Bits { n, .. } => *n,
            CellSample::Sorted(v) => v.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = u128> + '_> {
        match self {
            CellSample::Bits { words, .. } => Box::new(words.iter().enumerate().flat_map(|(w, &bits)| {
                let mut bits = bits;
                std::iter::from_fn(move || {
                    if bits == 0 {
                        return None;
                    }
                    let tz = bits.trailing_zeros();
                    bits &= bits - 1;
                    Some((w as u128) * 64 + tz as u128)
                })
            })),
            CellSample::Sorted(v) => Box::new(v.iter().copied()),
        }
    }
}

/// Floyd's subset sampling into a bitset of `cells` bits.
fn floyd_bits(cells: u64, k: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut words = vec![0u64; cells.div_ceil(64) as usize];
    let test_set = |words: &mut [u64], i: u64| -> bool {
        let (w, b) = ((i / 64) as usize, 1u64 << (i % 64));
        let was = words[w] & b != 0;
        words[w] |= b;
        was
    };
    for j in (cells - k)..cells {
        let t = rng.random_range(0..=j);
        if test_set(&mut words, t) {
            test_set(&mut words, j);
        }
    }
    words
}

fn rejection_set(cells: u128, k: u64, rng: &mut ChaCha8Rng) -> HashSet<u128> {
    let mut set = HashSet::with_capacity(k as usize);
    while (set.len() as u64) < k {
        set.insert(rng.random_range(0..cells));
    }
    set
}

/// Draws `n` distinct cells of `0..cells` uniformly.
pub fn sample_cells(cells: u128, n: u64, rng: &mut ChaCha8Rng) -> CellSample {
    let complement = n as u128 > cells / 2;
    let k = if complement { (cells - n as u128) as u64 } else { n };
    if cells <= BITSET_LIMIT {
        let cells64 = cells as u64;
        let mut words = floyd_bits(cells64, k, rng);
        if complement {
            for w in &mut words {
                *w = !*w;
            }
            let tail = cells64 % 64;
            if tail != 0 {
                *words.last_mut().unwrap() &= (1u64 << tail) - 1;
            }
        }
        return CellSample::Bits { words, n };
    }
    let set = rejection_set(cells, k, rng);
    let mut out: Vec<u128> = if complement {
        (0..cells).filter(|c| !set.contains(c)).collect()
    } else {
        set.into_iter().collect()
    };
    out.sort_unstable();
    CellSample::Sorted(out)
}

/// The relation of trial `trial`: `N` distinct tuples drawn uniformly from `∏ [d_i]`.
pub fn sample_relation(spec: &RandomModelSpec, trial: u64) -> Result<Relation> {
    let cells = spec.cells()?;
    let sample = sample_cells(cells, spec.n, &mut trial_rng(spec.seed, trial));
    let arity = spec.dims.len();
    let mut data = vec![0u32; sample.len() as usize * arity];
    for (row, idx) in data.chunks_mut(arity).zip(sample.iter()) {
        spec.decode(idx, row);
    }
    Ok(Relation::from_sorted_set(spec.schema(), data, spec.n as usize))
}

/// Measurements of one random relation against the MVD `C ↠ A | B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: u64,
    pub d_a: u32,
    pub d_b: u32,
    pub d_c: u32,
    pub n: u64,
    pub delta: f64,
    pub i_nats: f64,
    pub h_a: f64,
    pub h_b: f64,
    pub h_c: f64,
    pub rho: f64,
    pub log1p_rho: f64,
    pub epsilon: f64,
    /// `log(1 + ρ) ≤ I + ε*`.
    pub pass: bool,
    pub epsilon_condition_ok: bool,
    /// `d_a d_b d_c / N - 1`, the largest `ρ` the domain admits.
    pub rho_bar: f64,
    /// For `d_c = 1`: the entropy lower bound on the larger side and whether
    /// `log d ≥ H ≥ bound` held.
    pub entropy_bound: Option<f64>,
    pub entropy_ok: Option<bool>,
    pub mi_bound: Option<f64>,
    pub mi_ok: Option<bool>,
    pub confidence_condition_ok: Option<bool>,
    /// `N_S(ℓ)` for every value of `C`.
    pub n_per_c: Vec<u64>,
}

fn dense_counts(len: u128) -> Result<Vec<u32>> {
    if len > 1 << 28 {
        return Err(Error::InvalidArgument(format!("count table of {len} cells is too large")));
    }
    Ok(vec![0u32; len as usize])
}

/// One MVD trial, computed by counting directly over the sampled cells.
pub fn mvd_trial(spec: &RandomModelSpec, trial: u64, delta: f64) -> Result<TrialResult> {
    let (d_a, d_b, d_c) = match spec.dims[..] {
        [a, b] => (a, b, 1),
        [a, b, c] => (a, b, c),
        _ => return Err(Error::InvalidArgument("MVD trials need 2 or 3 attributes".into())),
    };
    let cells = spec.cells()?;
    let sample = sample_cells(cells, spec.n, &mut trial_rng(spec.seed, trial));
    let (da, db, dc) = (d_a as usize, d_b as usize, d_c as usize);
    let mut n_ac = dense_counts(da as u128 * dc as u128)?;
    let mut n_bc = dense_counts(db as u128 * dc as u128)?;
    let mut n_a = vec![0u64; da];
    let mut n_b = vec![0u64; db];
    let mut n_c = vec![0u64; dc];
    let mut t = [0u32; 3];
    for idx in sample.iter() {
        spec.decode(idx, &mut t[..spec.dims.len()]);
        let (a, b, c) = (t[0] as usize, t[1] as usize, if dc > 1 { t[2] as usize } else { 0 });
        n_ac[a * dc + c] += 1;
        n_bc[b * dc + c] += 1;
        n_a[a] += 1;
        n_b[b] += 1;
        n_c[c] += 1;
    }
    let n = spec.n;
    let h_ac = info::entropy_from_counts(n_ac.iter().map(|&c| c as u64), n);
    let h_bc = info::entropy_from_counts(n_bc.iter().map(|&c| c as u64), n);
    let h_a = info::entropy_from_counts(n_a.iter().copied(), n);
    let h_b = info::entropy_from_counts(n_b.iter().copied(), n);
    let h_c = info::entropy_from_counts(n_c.iter().copied(), n);
    let h_abc = (n as f64).ln();
    let raw = info::stable_sum([h_ac, h_bc, -h_abc, -h_c]);
    let i_nats = info::clamp_non_negative(raw, h_ac + h_bc, "conditional mutual information")?;

    // |π_A(R) ⋈_C π_B(R)| = Σ_ℓ |π_A(R_ℓ)| |π_B(R_ℓ)|.
    let mut join = 0u128;
    for c in 0..dc {
        let na = (0..da).filter(|&a| n_ac[a * dc + c] > 0).count() as u128;
        let nb = (0..db).filter(|&b| n_bc[b * dc + c] > 0).count() as u128;
        join += na * nb;
    }
    let rho = (join - n as u128) as f64 / n as f64;
    let log1p_rho = (join as f64 / n as f64).ln();
    let eps = bounds::epsilon_star(MvdDims::new(d_a as u64, d_b as u64, d_c as u64)?, n, delta)?;

    let (mut entropy_bound, mut entropy_ok, mut mi_bound, mut mi_ok, mut confidence_condition_ok) =
        (None, None, None, None, None);
    if d_c == 1 {
        let e = bounds::entropy_confidence(d_a as u64, d_b as u64, n, delta)?;
        let m = bounds::mi_confidence(d_a as u64, d_b as u64, n, delta)?;
        let h_big = if d_a >= d_b { h_a } else { h_b };
        entropy_bound = Some(e.bound);
        entropy_ok = Some(h_big <= e.log_d_a + 1e-12 && h_big >= e.bound);
        mi_bound = Some(m.bound);
        mi_ok = Some(i_nats >= m.bound);
        confidence_condition_ok = Some(e.condition_ok);
    }
    Ok(TrialResult {
        trial,
        d_a,
        d_b,
        d_c,
        n,
        delta,
        i_nats,
        h_a,
        h_b,
        h_c,
        rho,
        log1p_rho,
        epsilon: eps.value,
        pass: log1p_rho <= i_nats + eps.value,
        epsilon_condition_ok: eps.condition_ok,
        rho_bar: (d_a as f64 * d_b as f64 * d_c as f64) / n as f64 - 1.0,
        entropy_bound,
        entropy_ok,
        mi_bound,
        mi_ok,
        confidence_condition_ok,
        n_per_c: n_c,
    })
}

/// Runs `spec.trials` MVD trials in parallel, returned in trial order.
pub fn run_mvd_trials(spec: &RandomModelSpec, delta: f64) -> Result<Vec<TrialResult>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    (0..spec.trials as u64).into_par_iter().map(|t| mvd_trial(spec, t, delta)).collect()
}

/// Column order of trial CSV output.
pub const TRIAL_COLUMNS: [&str; 11] =
    ["trial", "d_A", "d_B", "d_C", "N", "delta", "I_nats", "rho", "log1p_rho", "epsilon", "pass"];

fn trial_record(r: &TrialResult) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.d_a.to_string(),
        r.d_b.to_string(),
        r.d_c.to_string(),
        r.n.to_string(),
        r.delta.to_string(),
        r.i_nats.to_string(),
        r.rho.to_string(),
        r.log1p_rho.to_string(),
        r.epsilon.to_string(),
        r.pass.to_string(),
    ]
}

pub fn write_trials_csv<W: Write>(out: W, results: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidArgument(format!("writing CSV: {e}"));
    w.write_record(TRIAL_COLUMNS).map_err(io)?;
    for r in results {
        w.write_record(trial_record(r)).map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("writing CSV: {e}")))?;
    Ok(())
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub bound: String,
    pub holds: u64,
    pub trials: u64,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// Whether the bound's qualifying condition holds at these parameters.
    pub condition_ok: bool,
}

impl Coverage {
    fn of(bound: &str, flags: impl Iterator<Item = bool>, condition_ok: bool) -> Self {
        let (mut holds, mut trials) = (0, 0);
        for f in flags {
            trials += 1;
            holds += u64::from(f);
        }
        let (wilson_low, wilson_high) = wilson_interval(holds, trials, Z95);
        let rate = if trials == 0 { 0.0 } else { holds as f64 / trials as f64 };
        Coverage { bound: bound.into(), holds, trials, rate, wilson_low, wilson_high, condition_ok }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub spec: RandomModelSpec,
    pub delta: f64,
    pub coverage: Vec<Coverage>,
    pub notes: Vec<String>,
}

/// Empirical coverage of each bound over `results`.
pub fn summarize(spec: &RandomModelSpec, delta: f64, results: &[TrialResult]) -> MonteCarloSummary {
    let eps_ok = results.iter().all(|r| r.epsilon_condition_ok);
    let mut coverage = vec![Coverage::of("mvd_epsilon_star", results.iter().map(|r| r.pass), eps_ok)];
    coverage.push(Coverage::of("rho_at_most_rho_bar", results.iter().map(|r| r.rho <= r.rho_bar + 1e-12), true));
    if results.iter().all(|r| r.entropy_ok.is_some()) && !results.is_empty() {
        let cond = results.iter().all(|r| r.confidence_condition_ok == Some(true));
        coverage.push(Coverage::of("entropy_confidence", results.iter().map(|r| r.entropy_ok == Some(true)), cond));
        coverage.push(Coverage::of("mi_confidence", results.iter().map(|r| r.mi_ok == Some(true)), cond));
    }
    let mut notes = vec!["bounds evaluated with natural logarithms".to_string()];
    for c in &coverage {
        if !c.condition_ok {
            notes.push(format!("{}: outside guarantee regime (qualifying condition fails)", c.bound));
        }
    }
    MonteCarloSummary { spec: spec.clone(), delta, coverage, notes }
}

/// One point of the mutual-information-versus-`log(1+ρ)` scatter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub rho_target: f64,
    pub result: TrialResult,
}

impl ScatterRow {
    /// `log(1 + ρ_target) - I`.
    pub fn gap(&self) -> f64 {
        self.rho_target.ln_1p() - self.result.i_nats
    }
}

/// Seed of the `(d, target)` configuration.
pub fn scatter_seed(seed: u64, d: u32, target_index: usize) -> u64 {
    mix64(seed ^ mix64(d as u64 ^ mix64(target_index as u64)))
}

/// `N = round(d_a d_b / (1 + ρ))`.
pub fn scatter_size(d: u32, rho_target: f64) -> Result<u64> {
    let cells = d as f64 * d as f64;
    let n = (cells / (1.0 + rho_target)).round();
    if !(rho_target >= 0.0) || !n.is_finite() || n < 1.0 || n > cells {
        return Err(Error::InvalidArgument(format!("target rho {rho_target} gives no valid relation size for d = {d}")));
    }
    Ok(n as u64)
}

/// For `d_c = 1` and `d_a = d_b = d`, draws `trials` relations of size
/// `round(d² / (1 + ρ))` for each target `ρ` and measures `I(A;B)` and the realized `ρ`.
pub fn scatter_experiment(d: u32, rho_targets: &[f64], trials: usize, seed: u64, delta: f64) -> Result<Vec<ScatterRow>> {
    let mut rows = Vec::with_capacity(rho_targets.len() * trials);
    for (k, &target) in rho_targets.iter().enumerate() {
        let n = scatter_size(d, target)?;
        let spec = RandomModelSpec::mvd(d, d, 1, n, scatter_seed(seed, d, k), trials)?;
        rows.extend(run_mvd_trials(&spec, delta)?.into_iter().map(|result| ScatterRow { rho_target: target, result }));
    }
    Ok(rows)
}

pub fn write_scatter_csv<W: Write>(out: W, rows: &[ScatterRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidArgument(format!("writing CSV: {e}"));
    let mut header: Vec<&str> = TRIAL_COLUMNS.to_vec();
    header.extend(["rho_target", "log1p_rho_target"]);
    w.write_record(&header).map_err(io)?;
    for row in rows {
        let mut rec = trial_record(&row.result);
        rec.push(row.rho_target.to_string());
        rec.push(row.rho_target.ln_1p().to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(format!("writing CSV: {e}")))?;
    Ok(())
}
