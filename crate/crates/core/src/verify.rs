//! Randomized self-checks of the fast paths against [`crate::oracle`].
//!
//! Each suite draws small random join trees and relations from its own RNG
//! stream, so a suite's cases depend only on the seed. The mutation suite runs
//! the join-size check against a deliberately wrong join and passes only if
//! that check catches it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bounds;
use crate::error::Result;
use crate::info;
use crate::jointree::{self, JoinTree};
use crate::oracle::{self, DenseDistribution};
use crate::relation::{Distribution, Relation};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Fewer cases per suite.
    pub quick: bool,
    /// Swap the join-size routine for a faulty one, which must make the run fail.
    pub inject_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl SuiteResult {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

/// How often a relation that is not guaranteed to hold did hold. Never fails a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub name: String,
    pub cases: usize,
    pub holds: usize,
    pub first_counterexample: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub quick: bool,
    pub inject_fault: bool,
    pub suites: Vec<SuiteResult>,
    pub observations: Vec<Observation>,
    pub pass: bool,
}

/// A random instance: a join tree on `X1..Xk` and a relation over the same attributes.
pub struct Case {
    pub tree: JoinTree,
    pub relation: Relation,
}

/// Draws a tree with 1–4 nodes over 2–5 attributes with domains of size 2–3,
/// and a relation of 1–12 tuples; `distinct` drops repeated tuples.
pub fn random_case(rng: &mut ChaCha8Rng, distinct: bool) -> Result<Case> {
    let nodes = rng.random_range(1..=4);
    let attrs = rng.random_range(2..=5);
    let dims: Vec<u32> = (0..attrs).map(|_| rng.random_range(2..=3)).collect();
    let tree = oracle::random_join_tree(rng, nodes, attrs)?;
    let schema = oracle::numbered_schema(&dims);
    let rows = rng.random_range(1..=12);
    let mut relation = oracle::random_relation(rng, &schema, rows)?;
    if distinct {
        relation = relation.distinct();
    }
    Ok(Case { tree, relation })
}

type Check = fn(&Case, &mut ChaCha8Rng, JoinCounter) -> Result<Option<String>>;
type JoinCounter = fn(&Relation, &JoinTree) -> Result<u128>;

/// Counts the join of the bag projections weighting each result by the
/// multiplicities of its projections, as if the projections were not deduplicated.
pub fn faulty_join_size(r: &Relation, tree: &JoinTree) -> Result<u128> {
    let projections: Vec<Relation> = tree.nodes().iter().map(|n| r.project(&n.bag)).collect::<Result<_>>()?;
    let sets: Vec<Relation> = projections.iter().map(Relation::distinct).collect();
    let joined = oracle::oracle_join(&sets)?;
    let mut total = 0u128;
    for (t, _) in joined.iter() {
        let mut w = 1u128;
        for p in &projections {
            let cols = joined.schema().resolve(&p.schema().names().collect::<Vec<_>>())?;
            let key: Vec<u32> = cols.iter().map(|&c| t[c]).collect();
            w *= p.multiplicity(&key) as u128;
        }
        total += w;
    }
    Ok(total)
}

fn fail(msg: String) -> Result<Option<String>> {
    Ok(Some(msg))
}

fn check_join_size(c: &Case, _: &mut ChaCha8Rng, join: JoinCounter) -> Result<Option<String>> {
    let fast = join(&c.relation, &c.tree)?;
    let (slow, _) = oracle::oracle_join_count(&c.relation, &c.tree)?;
    if fast != slow as u128 {
        return fail(format!("join size {fast}, nested-loop join {slow}"));
    }
    let materialized = jointree::acyclic_join(&c.relation, &c.tree, jointree::DEFAULT_MATERIALIZATION_CAP)?;
    if materialized.distinct_len() as u64 != slow {
        return fail(format!("materialized join has {} tuples, expected {slow}", materialized.distinct_len()));
    }
    Ok(None)
}

fn check_j_is_kl(c: &Case, _: &mut ChaCha8Rng, _: JoinCounter) -> Result<Option<String>> {
    let p = Distribution::empirical(&c.relation)?;
    let j = jointree::j_measure(&c.tree, &p)?.nats();
    let dense = DenseDistribution::from_relation(&c.relation)?;
    let kl = oracle::oracle_j(&dense, &c.tree)?;
    if (j - kl).abs() > TOL {
        return fail(format!("J = {j}, D(P || P_T) = {kl}"));
    }
    let fast_kl = info::kl_divergence(&p.marginal(&names(&c.tree))?, &jointree::factorized_distribution(&c.tree, &p)?)?;
    if (fast_kl.nats() - kl).abs() > TOL {
        return fail(format!("factorized KL {} vs oracle {kl}", fast_kl.nats()));
    }
    Ok(None)
}

fn names(tree: &JoinTree) -> Vec<String> {
    tree.attributes().into_iter().collect()
}

fn check_marginals(c: &Case, _: &mut ChaCha8Rng, _: JoinCounter) -> Result<Option<String>> {
    let dense = DenseDistribution::from_relation(&c.relation)?;
    let pt = oracle::oracle_enumerate_pt(&dense, &c.tree)?;
    for n in c.tree.nodes() {
        if pt.marginal(&n.bag)? != dense.marginal(&n.bag)? {
            return fail(format!("P_T changes the marginal on node {}", n.id));
        }
    }
    if pt.total() != num_traits::One::one() {
        return fail("P_T does not sum to one".into());
    }
    Ok(None)
}

fn check_lower_bound(c: &Case, _: &mut ChaCha8Rng, join: JoinCounter) -> Result<Option<String>> {
    let p = Distribution::empirical(&c.relation)?;
    let j = jointree::j_measure(&c.tree, &p)?;
    let (_, distinct) = oracle::oracle_join_count(&c.relation, &c.tree)?;
    let size = join(&c.relation, &c.tree)?;
    let rho = (size as f64 - distinct as f64) / distinct as f64;
    let check = bounds::lower_bound_check(j, rho);
    if !check.pass {
        return fail(format!("J = {} exceeds log(1 + rho) = {}", j.nats(), rho.ln_1p()));
    }
    Ok(None)
}

fn check_sandwich(c: &Case, rng: &mut ChaCha8Rng, _: JoinCounter) -> Result<Option<String>> {
    let p = Distribution::empirical(&c.relation)?;
    let j = jointree::j_measure(&c.tree, &p)?.nats();
    let ids: Vec<u32> = c.tree.nodes().iter().map(|n| n.id).collect();
    let root = ids[rng.random_range(0..ids.len())];
    let order = c.tree.dfs_order(root)?;
    let b = jointree::j_bounds(&c.tree, &p, &order)?;
    if b.lower > j + TOL || j > b.upper + TOL {
        return fail(format!("root {root}: max I = {}, J = {j}, sum I = {}", b.lower, b.upper));
    }
    let dense = DenseDistribution::from_relation(&c.relation)?;
    for (m, &fast) in jointree::mvd_support(&order).iter().zip(&b.terms) {
        let (left, right) = m.sides();
        let key: Vec<String> = m.key.iter().cloned().collect();
        let l: Vec<String> = left.into_iter().collect();
        let r: Vec<String> = right.into_iter().collect();
        let slow = oracle::oracle_cmi(&dense, &l, &r, &key)?;
        if (slow - fast).abs() > TOL {
            return fail(format!("I for {m} is {fast}, oracle {slow}"));
        }
    }
    Ok(None)
}

fn check_mvd_ratios(c: &Case, rng: &mut ChaCha8Rng, join: JoinCounter) -> Result<Option<String>> {
    let ids: Vec<u32> = c.tree.nodes().iter().map(|n| n.id).collect();
    let order = c.tree.dfs_order(ids[rng.random_range(0..ids.len())])?;
    let p = Distribution::empirical(&c.relation)?;
    let (_, distinct) = oracle::oracle_join_count(&c.relation, &c.tree)?;
    let whole = (join(&c.relation, &c.tree)? as f64 / distinct as f64).ln();
    for m in jointree::mvd_support(&order) {
        let l: Vec<String> = m.left.iter().cloned().collect();
        let r: Vec<String> = m.right.iter().cloned().collect();
        let slow = oracle::oracle_join(&[oracle::oracle_project(&c.relation, &l)?, oracle::oracle_project(&c.relation, &r)?])?;
        let count = m.spurious_count(&c.relation)?;
        if count.join_size != slow.distinct_len() as u128 {
            return fail(format!("{m}: join size {}, nested-loop join {}", count.join_size, slow.distinct_len()));
        }
        let i = m.mutual_info(&p)?.nats();
        if i > count.log1p_ratio() + TOL || count.log1p_ratio() > whole + TOL {
            return fail(format!("{m}: I = {i}, log(1 + rho_i) = {}, log(1 + rho) = {whole}", count.log1p_ratio()));
        }
    }
    Ok(None)
}

fn check_minimality(c: &Case, rng: &mut ChaCha8Rng, _: JoinCounter) -> Result<Option<String>> {
    let dense = DenseDistribution::from_relation(&c.relation)?;
    let j = oracle::oracle_j(&dense, &c.tree)?;
    let support = oracle::oracle_project(&c.relation, &names(&c.tree))?;
    let q = oracle::random_model(rng, &support, &c.tree)?;
    let d = oracle::oracle_kl(&dense, &q)?;
    if j > d + TOL {
        return fail(format!("J = {j} exceeds D(P || Q) = {d} for a Q satisfying the tree"));
    }
    Ok(None)
}

fn check_root_invariance(c: &Case, _: &mut ChaCha8Rng, _: JoinCounter) -> Result<Option<String>> {
    let p = Distribution::empirical(&c.relation)?;
    let j = jointree::j_measure(&c.tree, &p)?.nats();
    for n in c.tree.nodes() {
        let rerooted = c.tree.clone().with_root(n.id)?;
        let jr = jointree::j_measure(&rerooted, &p)?.nats();
        let b = jointree::j_bounds(&c.tree, &p, &c.tree.dfs_order(n.id)?)?;
        if (jr - j).abs() > TOL || b.lower > j + TOL || j > b.upper + TOL {
            return fail(format!("root {} gives J = {jr}, bounds [{}, {}], expected J = {j}", n.id, b.lower, b.upper));
        }
    }
    Ok(None)
}

fn check_lossless(_: &Case, rng: &mut ChaCha8Rng, join: JoinCounter) -> Result<Option<String>> {
    let nodes = rng.random_range(1..=4);
    let attrs = rng.random_range(2..=5);
    let tree = oracle::random_join_tree(rng, nodes, attrs)?;
    let schema = oracle::numbered_schema(&vec![3; attrs]);
    let r = oracle::markov_relation(rng, &tree, &schema, 4)?;
    let p = Distribution::empirical(&r)?;
    let j = jointree::j_measure(&tree, &p)?;
    let size = join(&r, &tree)?;
    if j.nats() > TOL || size != r.distinct_len() as u128 {
        return fail(format!("lossless relation gave J = {}, join size {size} for {} tuples", j.nats(), r.distinct_len()));
    }
    if !jointree::models(&p, &tree, TOL)? {
        return fail("lossless relation does not model the tree".into());
    }
    Ok(None)
}

struct Suite {
    name: &'static str,
    distinct: bool,
    check: Check,
}

const SUITES: &[Suite] = &[
    Suite { name: "join_size_matches_nested_loop", distinct: false, check: check_join_size },
    Suite { name: "j_equals_kl_to_factorization", distinct: false, check: check_j_is_kl },
    Suite { name: "factorization_preserves_bag_marginals", distinct: false, check: check_marginals },
    Suite { name: "j_at_most_log1p_rho", distinct: true, check: check_lower_bound },
    Suite { name: "max_i_at_most_j_at_most_sum_i", distinct: false, check: check_sandwich },
    Suite { name: "i_at_most_log1p_rho_i_at_most_log1p_rho", distinct: true, check: check_mvd_ratios },
    Suite { name: "factorization_is_closest_model", distinct: false, check: check_minimality },
    Suite { name: "j_independent_of_root", distinct: false, check: check_root_invariance },
    Suite { name: "lossless_iff_j_zero", distinct: true, check: check_lossless },
];

fn run_suite(index: usize, suite: &Suite, seed: u64, cases: usize, join: JoinCounter) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut failures = 0;
    let mut first_failure = None;
    for k in 0..cases {
        let outcome = random_case(&mut rng, suite.distinct).and_then(|c| (suite.check)(&c, &mut rng, join));
        let message = match outcome {
            Ok(None) => continue,
            Ok(Some(m)) => m,
            Err(e) => format!("error: {e}"),
        };
        failures += 1;
        first_failure.get_or_insert(format!("case {k}: {message}"));
    }
    SuiteResult { name: suite.name.to_string(), cases, failures, first_failure }
}

/// Counts cases where `log(1 + ρ) ≤ Σ_i log(1 + ρ_i)` over the MVD support holds.
/// The inequality fails for some relations, so violations are recorded, not failed.
fn observe_chain(seed: u64, cases: usize) -> Observation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUITES.len() as u64);
    let (mut holds, mut first_counterexample) = (0, None);
    for k in 0..cases {
        let outcome = random_case(&mut rng, true).and_then(|c| {
            let chain = bounds::chain_inequality(&c.relation, &c.tree, &c.tree.default_order())?;
            Ok((chain.pass, c, chain))
        });
        match outcome {
            Ok((true, ..)) => holds += 1,
            Ok((false, c, chain)) => {
                first_counterexample.get_or_insert_with(|| {
                    format!("case {k}: tree {}, log(1 + rho) = {}, sum = {}", c.tree.to_json(), chain.lhs, chain.rhs)
                });
            }
            Err(e) => {
                first_counterexample.get_or_insert_with(|| format!("case {k}: error: {e}"));
            }
        }
    }
    Observation { name: "log1p_rho_at_most_sum_log1p_rho_i".into(), cases, holds, first_counterexample }
}

/// Runs every suite, then checks that the join-size suite rejects [`faulty_join_size`].
pub fn run(options: VerifyOptions) -> VerifyReport {
    let cases = if options.quick { 50 } else { 1000 };
    let join: JoinCounter = if options.inject_fault { faulty_join_size } else { jointree::join_size };
    let mut suites: Vec<SuiteResult> =
        SUITES.iter().enumerate().map(|(i, s)| run_suite(i, s, options.seed, cases, join)).collect();

    let mutant = run_suite(0, &SUITES[0], options.seed, cases, faulty_join_size);
    suites.push(SuiteResult {
        name: "faulty_join_is_detected".into(),
        cases,
        failures: usize::from(mutant.pass()),
        first_failure: mutant.pass().then(|| "the faulty join passed every case".to_string()),
    });
    let pass = suites.iter().all(SuiteResult::pass);
    let observations = vec![observe_chain(options.seed, cases)];
    VerifyReport { seed: options.seed, quick: options.quick, inject_fault: options.inject_fault, suites, observations, pass }
}
