//! Slow reference implementations over exact rationals, plus generators of
//! random join trees, relations and distributions.
//!
//! Nothing here shares code with the fast paths beyond the data types: joins
//! are nested loops, `P_T` is evaluated cell by cell from the edge list, and
//! masses stay rational until a logarithm is taken.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::info::Mass;
use crate::jointree::{JoinTree, Node};
use crate::relation::{Attribute, Distribution, Relation, Schema};

/// Largest join [`oracle_join`] will produce.
pub const ORACLE_JOIN_LIMIT: usize = 10_000;

/// Partial assignments [`oracle_join`] may visit before giving up.
const ORACLE_STEP_LIMIT: u64 = 50_000_000;

/// A distribution stored as an explicit table of exact masses.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDistribution {
    schema: Schema,
    cells: BTreeMap<Vec<u32>, BigRational>,
}

fn ratio(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

impl DenseDistribution {
    /// Normalizes positive integer weights.
    pub fn from_weights(schema: Schema, weights: impl IntoIterator<Item = (Vec<u32>, u64)>) -> Result<Self> {
        let mut raw: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        for (t, w) in weights {
            schema.check_tuple(&t)?;
            if w > 0 {
                *raw.entry(t).or_default() += w;
            }
        }
        let total: u64 = raw.values().sum();
        if total == 0 {
            return Err(Error::EmptyRelation);
        }
        let cells = raw.into_iter().map(|(t, w)| (t, ratio(w, total))).collect();
        Ok(DenseDistribution { schema, cells })
    }

    /// Exact empirical distribution of a relation.
    pub fn from_relation(r: &Relation) -> Result<Self> {
        DenseDistribution::from_weights(r.schema().clone(), r.iter().map(|(t, k)| (t.to_vec(), k)))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], &BigRational)> + '_ {
        self.cells.iter().map(|(t, p)| (t.as_slice(), p))
    }

    pub fn get(&self, t: &[u32]) -> Option<&BigRational> {
        self.cells.get(t)
    }

    pub fn total(&self) -> BigRational {
        self.cells.values().fold(BigRational::zero(), |acc, p| acc + p)
    }

    pub fn support(&self) -> Relation {
        Relation::from_rows(self.schema.clone(), self.cells.keys()).expect("support tuples are in domain")
    }

    /// Marginal on `attrs`, in the given order.
    pub fn marginal<S: AsRef<str>>(&self, attrs: &[S]) -> Result<DenseDistribution> {
        let cols = self.schema.resolve(attrs)?;
        let mut cells: BTreeMap<Vec<u32>, BigRational> = BTreeMap::new();
        for (t, p) in &self.cells {
            let key: Vec<u32> = cols.iter().map(|&c| t[c]).collect();
            let slot = cells.entry(key).or_insert_with(BigRational::zero);
            *slot += p;
        }
        Ok(DenseDistribution { schema: self.schema.select(&cols), cells })
    }

    /// Rounds every mass to `f64` and renormalizes nothing.
    pub fn to_distribution(&self) -> Result<Distribution> {
        Distribution::from_masses(self.schema.clone(), self.cells.iter().map(|(t, p)| (t.clone(), to_f64(p))))
    }
}

impl Mass for DenseDistribution {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn mass_at(&self, tuple: &[u32]) -> f64 {
        self.cells.get(tuple).map_or(0.0, to_f64)
    }
}

pub fn to_f64(p: &BigRational) -> f64 {
    p.to_f64().unwrap_or(f64::NAN)
}

/// Natural join of all `relations` by backtracking over tuple combinations.
/// Attributes appear in order of first occurrence. Multiplicities are ignored.
pub fn oracle_join(relations: &[Relation]) -> Result<Relation> {
    if relations.is_empty() {
        return Err(Error::InvalidArgument("join of no relations".into()));
    }
    let mut attrs: Vec<Attribute> = Vec::new();
    let mut positions: Vec<Vec<usize>> = Vec::new();
    for r in relations {
        let mut pos = Vec::new();
        for a in r.schema().attributes() {
            match attrs.iter().position(|b| b.name() == a.name()) {
                Some(i) => {
                    if attrs[i].size() != a.size() {
                        return Err(Error::DomainConflict(a.name().to_string()));
                    }
                    pos.push(i);
                }
                None => {
                    attrs.push(a.clone());
                    pos.push(attrs.len() - 1);
                }
            }
        }
        positions.push(pos);
    }
    let schema = Schema::new(attrs)?;
    let mut search = Search { relations, positions, out: BTreeSet::new(), steps: 0 };
    let mut current = vec![None; schema.len()];
    search.extend(0, &mut current)?;
    Relation::from_rows(schema, search.out)
}

struct Search<'a> {
    relations: &'a [Relation],
    positions: Vec<Vec<usize>>,
    out: BTreeSet<Vec<u32>>,
    steps: u64,
}

impl Search<'_> {
    fn extend(&mut self, depth: usize, current: &mut Vec<Option<u32>>) -> Result<()> {
        if depth == self.relations.len() {
            self.out.insert(current.iter().map(|v| v.unwrap()).collect());
            if self.out.len() > ORACLE_JOIN_LIMIT {
                return Err(Error::JoinTooLarge { size: self.out.len() as u128, cap: ORACLE_JOIN_LIMIT as u128 });
            }
            return Ok(());
        }
        for (t, _) in self.relations[depth].iter() {
            self.steps += 1;
            if self.steps > ORACLE_STEP_LIMIT {
                return Err(Error::JoinTooLarge { size: self.steps as u128, cap: ORACLE_STEP_LIMIT as u128 });
            }
            let saved = current.clone();
            let consistent = self.positions[depth].iter().zip(t).all(|(&p, &v)| match current[p] {
                Some(w) => w == v,
                None => {
                    current[p] = Some(v);
                    true
                }
            });
            if consistent {
                self.extend(depth + 1, current)?;
            }
            *current = saved;
        }
        Ok(())
    }
}

/// Distinct tuples of `r` restricted to `attrs`, computed by direct column picking.
pub fn oracle_project<S: AsRef<str>>(r: &Relation, attrs: &[S]) -> Result<Relation> {
    let cols = r.schema().resolve(attrs)?;
    let rows: BTreeSet<Vec<u32>> = r.iter().map(|(t, _)| cols.iter().map(|&c| t[c]).collect()).collect();
    Relation::from_rows(r.schema().select(&cols), rows)
}

/// `H(attrs)` in nats, summed term by term from exact marginal masses.
pub fn oracle_entropy<S: AsRef<str>>(p: &DenseDistribution, attrs: &[S]) -> Result<f64> {
    let m = p.marginal(attrs)?;
    let mut h = 0.0;
    for (_, q) in m.iter() {
        let q = to_f64(q);
        h -= q * q.ln();
    }
    Ok(h)
}

/// `I(A; B | C)` from four oracle entropies.
pub fn oracle_cmi<S: AsRef<str>>(p: &DenseDistribution, a: &[S], b: &[S], c: &[S]) -> Result<f64> {
    let set = |xs: &[&[S]]| -> Vec<String> {
        let s: BTreeSet<String> = xs.iter().flat_map(|x| x.iter().map(|s| s.as_ref().to_string())).collect();
        s.into_iter().collect()
    };
    Ok(oracle_entropy(p, &set(&[a, c]))? + oracle_entropy(p, &set(&[b, c]))?
        - oracle_entropy(p, &set(&[a, b, c]))?
        - oracle_entropy(p, &set(&[c]))?)
}

fn bag_names(tree: &JoinTree, id: u32) -> Vec<String> {
    tree.nodes().iter().find(|n| n.id == id).map(|n| n.bag.clone()).unwrap_or_default()
}

fn edge_separator(tree: &JoinTree, a: u32, b: u32) -> Vec<String> {
    let bb = bag_names(tree, b);
    bag_names(tree, a).into_iter().filter(|x| bb.contains(x)).collect()
}

/// `P_T(x) = ∏ P[Ω_i](x) / ∏ P[Δ_e](x)` over the join of the bag-marginal supports,
/// computed exactly. The result is not renormalized.
pub fn oracle_enumerate_pt(p: &DenseDistribution, tree: &JoinTree) -> Result<DenseDistribution> {
    let bags: Vec<DenseDistribution> =
        tree.nodes().iter().map(|n| p.marginal(&n.bag)).collect::<Result<_>>()?;
    let seps: Vec<DenseDistribution> =
        tree.edges().iter().map(|&(a, b)| p.marginal(&edge_separator(tree, a, b))).collect::<Result<_>>()?;
    let supports: Vec<Relation> = bags.iter().map(|b| b.support()).collect();
    let joined = oracle_join(&supports)?;

    // Lay columns out in the order of `p`'s schema.
    let names: BTreeSet<String> = tree.nodes().iter().flat_map(|n| n.bag.iter().cloned()).collect();
    let out_names: Vec<String> = p.schema().names().filter(|n| names.contains(*n)).map(String::from).collect();
    let perm = joined.schema().resolve(&out_names)?;
    let out_schema = p.schema().select(&p.schema().resolve(&out_names)?);

    let mut cells = BTreeMap::new();
    for (t, _) in joined.iter() {
        let x: Vec<u32> = perm.iter().map(|&c| t[c]).collect();
        let mut value = BigRational::one();
        for b in &bags {
            value *= lookup(b, &out_schema, &x)?;
        }
        for s in &seps {
            let d = lookup(s, &out_schema, &x)?;
            if d.is_zero() {
                return Err(Error::Consistency("separator marginal vanishes on the join".into()));
            }
            value /= d;
        }
        if !value.is_zero() {
            cells.insert(x, value);
        }
    }
    Ok(DenseDistribution { schema: out_schema, cells })
}

fn lookup(m: &DenseDistribution, schema: &Schema, x: &[u32]) -> Result<BigRational> {
    let key: Vec<u32> = m.schema().names().map(|n| schema.index_of(n).map(|i| x[i])).collect::<Result<_>>()?;
    Ok(m.get(&key).cloned().unwrap_or_else(BigRational::zero))
}

/// `D_KL(P ‖ Q)` with exact likelihood ratios. Infinite when `Q` misses the support of `P`.
pub fn oracle_kl(p: &DenseDistribution, q: &DenseDistribution) -> Result<f64> {
    let names: Vec<&str> = q.schema().names().collect();
    let p = p.marginal(&names)?;
    let mut d = 0.0;
    for (t, pm) in p.iter() {
        match q.get(t) {
            Some(qm) if !qm.is_zero() => d += to_f64(pm) * to_f64(&(pm / qm)).ln(),
            _ => return Ok(f64::INFINITY),
        }
    }
    Ok(d)
}

/// `J(T)` as `D_KL(P ‖ P_T)`.
pub fn oracle_j(p: &DenseDistribution, tree: &JoinTree) -> Result<f64> {
    oracle_kl(p, &oracle_enumerate_pt(p, tree)?)
}

/// `(|⋈ π_{Ω_i}(R)|, |π_{χ(T)}(R)|)` by nested-loop join.
pub fn oracle_join_count(r: &Relation, tree: &JoinTree) -> Result<(u64, u64)> {
    let projections: Vec<Relation> =
        tree.nodes().iter().map(|n| oracle_project(r, &n.bag)).collect::<Result<_>>()?;
    let joined = oracle_join(&projections)?;
    let all: Vec<String> = joined.schema().names().map(String::from).collect();
    let distinct = oracle_project(r, &all)?;
    Ok((joined.distinct_len() as u64, distinct.distinct_len() as u64))
}

/// `ρ = (|⋈ π_{Ω_i}(R)| - |R|) / |R|` over distinct tuples.
pub fn oracle_rho(r: &Relation, tree: &JoinTree) -> Result<f64> {
    let (join, distinct) = oracle_join_count(r, tree)?;
    Ok((join - distinct) as f64 / distinct as f64)
}

/// A random join tree on `nodes` nodes over attributes `X1..X{attrs}`.
/// Each attribute occupies a random connected set of nodes and no bag is empty;
/// an empty bag inherits one attribute from its parent.
pub fn random_join_tree<G: Rng + ?Sized>(rng: &mut G, nodes: usize, attrs: usize) -> Result<JoinTree> {
    if nodes == 0 || attrs == 0 {
        return Err(Error::InvalidArgument("random join tree needs at least one node and attribute".into()));
    }
    let parent: Vec<Option<usize>> =
        (0..nodes).map(|i| if i == 0 { None } else { Some(rng.random_range(0..i)) }).collect();
    let mut adj = vec![Vec::new(); nodes];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            adj[i].push(p);
            adj[p].push(i);
        }
    }
    let mut bags: Vec<Vec<String>> = vec![Vec::new(); nodes];
    for a in 0..attrs {
        let name = format!("X{}", a + 1);
        let start = if a == 0 { 0 } else { rng.random_range(0..nodes) };
        let mut member = vec![false; nodes];
        member[start] = true;
        let mut frontier = vec![start];
        while let Some(v) = frontier.pop() {
            for &w in &adj[v] {
                if !member[w] && rng.random_bool(0.4) {
                    member[w] = true;
                    frontier.push(w);
                }
            }
        }
        for (i, m) in member.into_iter().enumerate() {
            if m {
                bags[i].push(name.clone());
            }
        }
    }
    // Parents precede children, so a copied attribute stays connected.
    for i in 1..nodes {
        if bags[i].is_empty() {
            let p = parent[i].unwrap();
            let pick = bags[p][rng.random_range(0..bags[p].len())].clone();
            bags[i].push(pick);
        }
    }
    let node_list = bags.iter().enumerate().map(|(i, b)| Node::new(i as u32, b)).collect();
    let edges = parent.iter().enumerate().filter_map(|(i, p)| p.map(|p| (p as u32, i as u32))).collect();
    JoinTree::new(node_list, edges)
}

/// Schema `X1..Xn` with the given domain sizes.
pub fn numbered_schema(dims: &[u32]) -> Schema {
    let sizes: Vec<(String, u32)> = dims.iter().enumerate().map(|(i, &d)| (format!("X{}", i + 1), d)).collect();
    Schema::with_sizes(&sizes).expect("numbered names are unique")
}

/// `rows` tuples drawn uniformly with replacement, as a multiset.
pub fn random_relation<G: Rng + ?Sized>(rng: &mut G, schema: &Schema, rows: usize) -> Result<Relation> {
    let data: Vec<Vec<u32>> = (0..rows)
        .map(|_| schema.attributes().iter().map(|a| rng.random_range(0..a.size())).collect())
        .collect();
    Relation::from_rows(schema.clone(), data)
}

/// A relation whose decomposition along `tree` is lossless: the nested-loop join
/// of independent random relations on each bag, retried until non-empty.
pub fn markov_relation<G: Rng + ?Sized>(rng: &mut G, tree: &JoinTree, schema: &Schema, rows_per_bag: usize) -> Result<Relation> {
    for _ in 0..100 {
        let parts: Vec<Relation> = tree
            .nodes()
            .iter()
            .map(|n| {
                let cols = schema.resolve(&n.bag)?;
                random_relation(rng, &schema.select(&cols), rows_per_bag).map(|r| r.distinct())
            })
            .collect::<Result<_>>()?;
        let joined = oracle_join(&parts)?;
        if !joined.is_empty() {
            let names: Vec<&str> = schema.names().filter(|n| joined.schema().index_of(n).is_ok()).collect();
            return oracle_project(&joined, &names);
        }
    }
    Err(Error::EmptyRelation)
}

/// Random positive integer weights in `1..=max_weight` on the tuples of `support`.
pub fn random_weights<G: Rng + ?Sized>(rng: &mut G, support: &Relation, max_weight: u64) -> Result<DenseDistribution> {
    DenseDistribution::from_weights(
        support.schema().clone(),
        support.iter().map(|(t, _)| (t.to_vec(), rng.random_range(1..=max_weight))),
    )
}

/// A random distribution that satisfies `tree` and covers `support`:
/// `P'_T` for a random reweighting `P'` of `support`.
pub fn random_model<G: Rng + ?Sized>(rng: &mut G, support: &Relation, tree: &JoinTree) -> Result<DenseDistribution> {
    oracle_enumerate_pt(&random_weights(rng, support, 9)?, tree)
}
