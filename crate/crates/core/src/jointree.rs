//! Join trees and the quantities defined on them.
//!
//! A [`JoinTree`] is a tree whose nodes carry attribute bags satisfying the
//! running intersection property. From a tree and a relation (or its empirical
//! distribution) this module computes the J-measure, the factorized
//! distribution `P_T = prod P[bag] / prod P[separator]`, the MVD support, the
//! exact size of the acyclic join of the bag projections, and the spurious-tuple
//! ratio.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{self, Mass, Measure};
use crate::relation::{Distribution, Relation, Schema};

pub type AttrSet = BTreeSet<String>;

/// Default cap on the number of tuples [`acyclic_join`] will materialize.
pub const DEFAULT_MATERIALIZATION_CAP: u128 = 1 << 22;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: u32,
    pub bag: Vec<String>,
}

impl Node {
    pub fn new<S: AsRef<str>>(id: u32, bag: &[S]) -> Self {
        Node { id, bag: bag.iter().map(|s| s.as_ref().to_string()).collect() }
    }
}

/// Reasons a node/edge list is not a join tree.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeViolation {
    #[error("tree has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(u32),
    #[error("edge references unknown node {0}")]
    UnknownNode(u32),
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("attribute `{attr}` repeated in the bag of node {node}")]
    RepeatedAttribute { node: u32, attr: String },
    #[error("edge ({0}, {1}) closes a cycle")]
    Cycle(u32, u32),
    #[error("nodes {0} and {1} are not connected")]
    Disconnected(u32, u32),
    #[error("running intersection violated: attribute `{attr}` is in nodes {a} and {b} but not on the path between them")]
    RunningIntersection { attr: String, a: u32, b: u32 },
}

/// Checks that `nodes`/`edges` form a join tree. Returns warnings for bags
/// contained in other bags.
pub fn validate(nodes: &[Node], edges: &[(u32, u32)]) -> Result<Vec<String>, TreeViolation> {
    if nodes.is_empty() {
        return Err(TreeViolation::Empty);
    }
    let mut index = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if index.insert(n.id, i).is_some() {
            return Err(TreeViolation::DuplicateNode(n.id));
        }
        for (k, a) in n.bag.iter().enumerate() {
            if n.bag[..k].contains(a) {
                return Err(TreeViolation::RepeatedAttribute { node: n.id, attr: a.clone() });
            }
        }
    }
    let m = nodes.len();
    let mut uf: Vec<usize> = (0..m).collect();
    fn find(uf: &mut [usize], mut x: usize) -> usize {
        while uf[x] != x {
            uf[x] = uf[uf[x]];
            x = uf[x];
        }
        x
    }
    let mut adj = vec![Vec::new(); m];
    for &(a, b) in edges {
        let ia = *index.get(&a).ok_or(TreeViolation::UnknownNode(a))?;
        let ib = *index.get(&b).ok_or(TreeViolation::UnknownNode(b))?;
        if ia == ib {
            return Err(TreeViolation::SelfLoop(a));
        }
        let (ra, rb) = (find(&mut uf, ia), find(&mut uf, ib));
        if ra == rb {
            return Err(TreeViolation::Cycle(a, b));
        }
        uf[ra] = rb;
        adj[ia].push(ib);
        adj[ib].push(ia);
    }
    let r0 = find(&mut uf, 0);
    if let Some(i) = (1..m).find(|&i| find(&mut uf, i) != r0) {
        return Err(TreeViolation::Disconnected(nodes[0].id, nodes[i].id));
    }

    // Running intersection: the nodes holding each attribute induce a connected subtree.
    let mut holders: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        for a in &n.bag {
            holders.entry(a.as_str()).or_default().push(i);
        }
    }
    for (attr, hs) in &holders {
        let mut seen = vec![false; m];
        let mut stack = vec![hs[0]];
        seen[hs[0]] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] && nodes[v].bag.iter().any(|b| b == attr) {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        if let Some(&b) = hs.iter().find(|&&h| !seen[h]) {
            return Err(TreeViolation::RunningIntersection {
                attr: attr.to_string(),
                a: nodes[hs[0]].id,
                b: nodes[b].id,
            });
        }
    }

    let mut warnings = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for (j, b) in nodes.iter().enumerate() {
            if i != j && a.bag.iter().all(|x| b.bag.contains(x)) && (a.bag.len() < b.bag.len() || i < j) {
                warnings.push(format!("bag of node {} is contained in the bag of node {}", a.id, b.id));
            }
        }
    }
    Ok(warnings)
}

/// The on-disk form of a join tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JoinTreeFile {
    nodes: Vec<Node>,
    edges: Vec<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domains: Option<BTreeMap<String, u32>>,
}

/// A validated join tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinTree {
    nodes: Vec<Node>,
    edges: Vec<(u32, u32)>,
    root: Option<u32>,
    domains: Option<BTreeMap<String, u32>>,
    warnings: Vec<String>,
}

impl JoinTree {
    pub fn new(nodes: Vec<Node>, edges: Vec<(u32, u32)>) -> Result<Self> {
        let warnings = validate(&nodes, &edges)?;
        Ok(JoinTree { nodes, edges, root: None, domains: None, warnings })
    }

    /// Parses the JSON form `{"nodes": [{"id", "bag"}], "edges": [[a, b]], "root"?, "domains"?}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: JoinTreeFile = serde_json::from_str(text)?;
        let mut tree = JoinTree::new(file.nodes, file.edges.iter().map(|e| (e[0], e[1])).collect())?;
        if let Some(r) = file.root {
            tree.node_index(r)?;
        }
        if let Some(d) = &file.domains {
            if let Some((a, _)) = d.iter().find(|(_, &s)| s == 0) {
                return Err(Error::InvalidDomain { attr: a.clone(), message: "domain size must be at least 1".into() });
            }
        }
        tree.root = file.root;
        tree.domains = file.domains;
        Ok(tree)
    }

    pub fn to_json(&self) -> String {
        let file = JoinTreeFile {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            root: self.root,
            domains: self.domains.clone(),
        };
        serde_json::to_string(&file).expect("join tree serializes")
    }

    pub fn with_root(mut self, root: u32) -> Result<Self> {
        self.node_index(root)?;
        self.root = Some(root);
        Ok(self)
    }

    pub fn with_domains(mut self, domains: BTreeMap<String, u32>) -> Self {
        self.domains = Some(domains);
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn domains(&self) -> Option<&BTreeMap<String, u32>> {
        self.domains.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The root used when none is requested: the declared root, else node 0, else the smallest id.
    pub fn default_root(&self) -> u32 {
        self.root.unwrap_or_else(|| {
            if self.nodes.iter().any(|n| n.id == 0) {
                0
            } else {
                self.nodes.iter().map(|n| n.id).min().unwrap()
            }
        })
    }

    fn node_index(&self, id: u32) -> Result<usize> {
        self.nodes.iter().position(|n| n.id == id).ok_or(Error::UnknownNode(id))
    }

    /// `chi(T)`: the union of all bags.
    pub fn attributes(&self) -> AttrSet {
        self.nodes.iter().flat_map(|n| n.bag.iter().cloned()).collect()
    }

    pub fn bag(&self, id: u32) -> Result<AttrSet> {
        Ok(self.nodes[self.node_index(id)?].bag.iter().cloned().collect())
    }

    /// Separator `chi(a) ∩ chi(b)` of every edge, in edge order.
    pub fn separators(&self) -> Vec<AttrSet> {
        self.edges
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (self.bag(a).unwrap(), self.bag(b).unwrap());
                a.intersection(&b).cloned().collect()
            })
            .collect()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            let (ia, ib) = (self.node_index(a).unwrap(), self.node_index(b).unwrap());
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
        for list in &mut adj {
            list.sort_by_key(|&i| self.nodes[i].id);
        }
        adj
    }

    pub fn dfs_order(&self, root: u32) -> Result<RootedOrder> {
        dfs_order(self, root)
    }

    pub fn default_order(&self) -> RootedOrder {
        dfs_order(self, self.default_root()).expect("default root exists in a validated tree")
    }
}

/// A depth-first enumeration `u_1, .., u_m` of a rooted join tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RootedOrder {
    root: u32,
    ids: Vec<u32>,
    parent: Vec<Option<usize>>,
    bags: Vec<AttrSet>,
    separators: Vec<AttrSet>,
    /// Subtree of position `i` occupies positions `i..subtree_end[i]`.
    subtree_end: Vec<usize>,
}

/// Roots `tree` at `root` and enumerates it depth first, children by ascending id.
pub fn dfs_order(tree: &JoinTree, root: u32) -> Result<RootedOrder> {
    let r = tree.node_index(root)?;
    let adj = tree.adjacency();
    let m = tree.nodes.len();
    let mut ids = Vec::with_capacity(m);
    let mut parent = Vec::with_capacity(m);
    let mut pos_of = vec![usize::MAX; m];
    let mut subtree_end = vec![0; m];
    // (node, parent position, next child cursor)
    let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(r, None, 0)];
    pos_of[r] = 0;
    ids.push(tree.nodes[r].id);
    parent.push(None);
    while let Some(top) = stack.last_mut() {
        let (u, _, cursor) = *top;
        let next = adj[u][cursor..].iter().position(|&v| pos_of[v] == usize::MAX).map(|k| cursor + k);
        match next {
            Some(k) => {
                top.2 = k + 1;
                let v = adj[u][k];
                pos_of[v] = ids.len();
                ids.push(tree.nodes[v].id);
                parent.push(Some(pos_of[u]));
                stack.push((v, Some(pos_of[u]), 0));
            }
            None => {
                subtree_end[pos_of[u]] = ids.len();
                stack.pop();
            }
        }
    }
    let bags: Vec<AttrSet> = ids.iter().map(|&id| tree.bag(id).unwrap()).collect();
    let mut separators = vec![AttrSet::new()];
    let mut prefix: AttrSet = bags[0].clone();
    for i in 1..m {
        let p = parent[i].unwrap();
        let sep: AttrSet = bags[p].intersection(&bags[i]).cloned().collect();
        let via_prefix: AttrSet = prefix.intersection(&bags[i]).cloned().collect();
        if sep != via_prefix {
            return Err(Error::Consistency(format!(
                "separator of node {} differs from its intersection with the preceding bags",
                ids[i]
            )));
        }
        prefix.extend(bags[i].iter().cloned());
        separators.push(sep);
    }
    Ok(RootedOrder { root, ids, parent, bags, separators, subtree_end })
}

impl RootedOrder {
    pub fn root(&self) -> u32 {
        self.root
    }

    /// Number of nodes `m`.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Node ids in enumeration order.
    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Position of the parent of position `i` (`None` for the root).
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn bag(&self, i: usize) -> &AttrSet {
        &self.bags[i]
    }

    /// `Δ_i` for `i >= 1` (zero-based); empty for the root.
    pub fn separator(&self, i: usize) -> &AttrSet {
        &self.separators[i]
    }

    /// Union of the bags at positions `from..to`.
    pub fn union(&self, from: usize, to: usize) -> AttrSet {
        self.bags[from..to].iter().flatten().cloned().collect()
    }

    /// Union of the bags in the subtree rooted at position `i`.
    pub fn subtree_union(&self, i: usize) -> AttrSet {
        self.union(i, self.subtree_end[i])
    }

    /// Union of the bags outside the subtree rooted at position `i`.
    pub fn outside_union(&self, i: usize) -> AttrSet {
        let mut u = self.union(0, i);
        u.extend(self.union(self.subtree_end[i], self.len()));
        u
    }

    pub fn subtree_end(&self, i: usize) -> usize {
        self.subtree_end[i]
    }
}

/// The multivalued dependency `key ↠ left | right`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mvd {
    pub key: AttrSet,
    pub left: AttrSet,
    pub right: AttrSet,
}

impl Mvd {
    fn sets(&self) -> [Vec<&String>; 3] {
        [self.left.iter().collect(), self.right.iter().collect(), self.key.iter().collect()]
    }

    /// `I(left; right | key)` under `p`.
    pub fn mutual_info(&self, p: &Distribution) -> Result<Measure> {
        let [l, r, k] = self.sets();
        info::cond_mutual_info(p, &l, &r, &k)
    }

    /// Size of `π_left(R) ⋈ π_right(R)` against `|distinct R|`.
    pub fn spurious_count(&self, r: &Relation) -> Result<SpuriousCount> {
        let tree = JoinTree::new(
            vec![Node { id: 0, bag: self.left.iter().cloned().collect() }, Node {
                id: 1,
                bag: self.right.iter().cloned().collect(),
            }],
            vec![(0, 1)],
        )?;
        spurious_count(r, &tree)
    }

    /// Attributes of `left` and `right` outside the key.
    pub fn sides(&self) -> (AttrSet, AttrSet) {
        (self.left.difference(&self.key).cloned().collect(), self.right.difference(&self.key).cloned().collect())
    }
}

impl std::fmt::Display for Mvd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let join = |s: &AttrSet| s.iter().cloned().collect::<Vec<_>>().join(",");
        write!(f, "{{{}}} ->> {{{}}} | {{{}}}", join(&self.key), join(&self.left), join(&self.right))
    }
}

/// The `m - 1` MVDs supporting the tree: one per non-root position `i`,
/// `Δ_i ↠ (bags outside the subtree of u_i) | (bags in the subtree of u_i)`.
///
/// For a path rooted at an end the two sides are the prefix and suffix unions
/// of the enumeration.
pub fn mvd_support(order: &RootedOrder) -> Vec<Mvd> {
    (1..order.len())
        .map(|i| Mvd {
            key: order.separator(i).clone(),
            left: order.outside_union(i),
            right: order.subtree_union(i),
        })
        .collect()
}

fn names(set: &AttrSet) -> Vec<&str> {
    set.iter().map(String::as_str).collect()
}

/// `J(T) = Σ_v H(χ(v)) - Σ_edges H(χ(v1) ∩ χ(v2)) - H(χ(T))` under `p`.
pub fn j_measure(tree: &JoinTree, p: &Distribution) -> Result<Measure> {
    let schema = p.schema();
    let mut bags = Vec::new();
    for n in &tree.nodes {
        bags.push(info::entropy_cols(p, &schema.resolve_set(&n.bag)?));
    }
    let mut seps = Vec::new();
    for s in tree.separators() {
        seps.push(info::entropy_cols(p, &schema.resolve_set(&names(&s))?));
    }
    let all = info::entropy_cols(p, &schema.resolve_set(&names(&tree.attributes()))?);
    let scale: f64 = bags.iter().sum();
    let j = info::stable_sum(bags.into_iter().chain(seps.into_iter().map(|h| -h)).chain([-all]));
    if j < -1e-9 * scale.max(1.0) {
        return Err(Error::Consistency(format!("J-measure evaluated to {j:e}")));
    }
    Ok(Measure::from_nats(j.max(0.0)))
}

/// `max_i I_i` and `Σ_i I_i` over the MVD support, with the individual terms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JBounds {
    pub terms: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

pub fn j_bounds(_tree: &JoinTree, p: &Distribution, order: &RootedOrder) -> Result<JBounds> {
    let terms =
        mvd_support(order).iter().map(|m| m.mutual_info(p).map(Measure::nats)).collect::<Result<Vec<_>>>()?;
    let lower = terms.iter().copied().fold(0.0, f64::max);
    let upper = info::stable_sum(terms.iter().copied());
    Ok(JBounds { terms, lower, upper })
}

/// Whether every support MVD has `I_i <= tol` under `p`.
pub fn models(p: &Distribution, tree: &JoinTree, tol: f64) -> Result<bool> {
    let order = tree.default_order();
    for m in mvd_support(&order) {
        if m.mutual_info(p)?.nats() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `P_T(x) = Π_i P[Ω_i](x[Ω_i]) / Π_edges P[Δ](x[Δ])`, zero where a separator marginal vanishes.
#[derive(Debug, Clone)]
pub struct FactorizedDistribution {
    tree: JoinTree,
    schema: Schema,
    bags: Vec<(Vec<usize>, HashMap<Vec<u32>, f64>)>,
    separators: Vec<(Vec<usize>, HashMap<Vec<u32>, f64>)>,
    source: Distribution,
}

pub fn factorized_distribution(tree: &JoinTree, p: &Distribution) -> Result<FactorizedDistribution> {
    let attrs = tree.attributes();
    let cols = p.schema().resolve_set(&names(&attrs))?;
    let sub_names: Vec<&str> = cols.iter().map(|&c| p.schema().attributes()[c].name()).collect();
    let source = if cols.len() == p.schema().len() { p.clone() } else { p.marginal(&sub_names)? };
    let schema = source.schema().clone();
    let table = |set: &[String]| -> Result<(Vec<usize>, HashMap<Vec<u32>, f64>)> {
        let c = schema.resolve_set(set)?;
        let m = source.marginal_cols(&c).into_iter().collect();
        Ok((c, m))
    };
    let bags = tree.nodes.iter().map(|n| table(&n.bag)).collect::<Result<Vec<_>>>()?;
    let separators = tree
        .separators()
        .iter()
        .map(|s| table(&s.iter().cloned().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FactorizedDistribution { tree: tree.clone(), schema, bags, separators, source })
}

impl FactorizedDistribution {
    pub fn tree(&self) -> &JoinTree {
        &self.tree
    }

    /// Enumerates the support (the acyclic join of the bag supports) and evaluates `P_T` on it.
    pub fn materialize(&self, cap: u128) -> Result<Distribution> {
        let support = acyclic_join(&self.source.support(), &self.tree, cap)?;
        let points: Vec<(Vec<u32>, f64)> = support.iter().map(|(t, _)| (t.to_vec(), self.evaluate(t))).collect();
        Distribution::from_masses(self.schema.clone(), points)
    }

    fn evaluate(&self, tuple: &[u32]) -> f64 {
        let mut key = Vec::new();
        let mut lookup = |cols: &[usize], table: &HashMap<Vec<u32>, f64>| {
            key.clear();
            key.extend(cols.iter().map(|&c| tuple[c]));
            table.get(&key).copied().unwrap_or(0.0)
        };
        let mut denom = 1.0;
        for (cols, table) in &self.separators {
            let d = lookup(cols, table);
            if d == 0.0 {
                return 0.0;
            }
            denom *= d;
        }
        let mut num = 1.0;
        for (cols, table) in &self.bags {
            num *= lookup(cols, table);
        }
        num / denom
    }
}

impl Mass for FactorizedDistribution {
    fn schema(&self) -> &Schema {
        &self.schema
    }

    fn mass_at(&self, tuple: &[u32]) -> f64 {
        if tuple.len() != self.schema.len() {
            return 0.0;
        }
        self.evaluate(tuple)
    }
}

/// Bag projections of a relation with per-tuple subtree counts, rooted at the default root.
struct Messages {
    order: RootedOrder,
    /// Output columns (within `attrs`) of each position's bag.
    bag_cols: Vec<Vec<usize>>,
    /// Distinct projection onto each bag, in `bag_cols` order.
    bags: Vec<Relation>,
    /// Number of join tuples over the subtree extending each bag tuple.
    weights: Vec<Vec<u128>>,
    /// Positions of `Δ_i` within bag `i` and within the parent's bag.
    sep_in_child: Vec<Vec<usize>>,
    sep_in_parent: Vec<Vec<usize>>,
    schema: Schema,
}

fn pass_messages(r: &Relation, tree: &JoinTree) -> Result<Messages> {
    let order = tree.default_order();
    let attrs = tree.attributes();
    let all_cols = r.schema().resolve_set(&names(&attrs))?;
    let schema = r.schema().select(&all_cols);
    let base = r.project_cols(&all_cols);
    let m = order.len();
    let mut bag_cols = Vec::with_capacity(m);
    let mut bags = Vec::with_capacity(m);
    for i in 0..m {
        let cols = schema.resolve_set(&names(order.bag(i)))?;
        bags.push(base.project_cols(&cols).distinct());
        bag_cols.push(cols);
    }
    let mut sep_in_child = vec![Vec::new(); m];
    let mut sep_in_parent = vec![Vec::new(); m];
    for i in 1..m {
        let p = order.parent(i).unwrap();
        let sep = schema.resolve_set(&names(order.separator(i)))?;
        let pos = |cols: &[usize]| sep.iter().map(|s| cols.iter().position(|c| c == s).unwrap()).collect::<Vec<_>>();
        sep_in_child[i] = pos(&bag_cols[i]);
        sep_in_parent[i] = pos(&bag_cols[p]);
    }

    let mut weights: Vec<Vec<u128>> = bags.iter().map(|b| vec![1u128; b.distinct_len()]).collect();
    let overflow = || Error::Overflow("acyclic join size exceeds u128".into());
    for i in (1..m).rev() {
        let p = order.parent(i).unwrap();
        let mut message: HashMap<Vec<u32>, u128> = HashMap::new();
        for (k, (t, _)) in bags[i].iter().enumerate() {
            if weights[i][k] == 0 {
                continue;
            }
            let key: Vec<u32> = sep_in_child[i].iter().map(|&c| t[c]).collect();
            let slot = message.entry(key).or_insert(0);
            *slot = slot.checked_add(weights[i][k]).ok_or_else(overflow)?;
        }
        let mut key = Vec::new();
        for k in 0..bags[p].distinct_len() {
            let t = bags[p].tuple(k);
            key.clear();
            key.extend(sep_in_parent[i].iter().map(|&c| t[c]));
            let w = message.get(&key).copied().unwrap_or(0);
            weights[p][k] = weights[p][k].checked_mul(w).ok_or_else(overflow)?;
        }
    }
    Ok(Messages { order, bag_cols, bags, weights, sep_in_child, sep_in_parent, schema })
}

/// `|⋈_i π_{Ω_i}(R)|`, counted by leaf-to-root message passing without materializing the join.
pub fn join_size(r: &Relation, tree: &JoinTree) -> Result<u128> {
    let msgs = pass_messages(r, tree)?;
    msgs.weights[0].iter().try_fold(0u128, |acc, &w| acc.checked_add(w)).ok_or(Error::Overflow("acyclic join size exceeds u128".into()))
}

/// Materializes `⋈_i π_{Ω_i}(R)` over `χ(T)` when it has at most `cap` tuples.
pub fn acyclic_join(r: &Relation, tree: &JoinTree, cap: u128) -> Result<Relation> {
    let msgs = pass_messages(r, tree)?;
    let size: u128 = msgs.weights[0].iter().sum();
    if size > cap {
        return Err(Error::JoinTooLarge { size, cap });
    }
    let m = msgs.order.len();
    // For each non-root position, live bag tuples indexed by separator value.
    let mut index: Vec<HashMap<Vec<u32>, Vec<usize>>> = vec![HashMap::new(); m];
    for i in 1..m {
        for (k, (t, _)) in msgs.bags[i].iter().enumerate() {
            if msgs.weights[i][k] > 0 {
                let key = msgs.sep_in_child[i].iter().map(|&c| t[c]).collect();
                index[i].entry(key).or_default().push(k);
            }
        }
    }
    let width = msgs.schema.len();
    let mut out = Vec::with_capacity(size as usize * width);
    let mut row = vec![0u32; width];
    let mut chosen = vec![0usize; m];

    fn extend(
        i: usize,
        msgs: &Messages,
        index: &[HashMap<Vec<u32>, Vec<usize>>],
        row: &mut Vec<u32>,
        chosen: &mut Vec<usize>,
        out: &mut Vec<u32>,
    ) {
        if i == msgs.order.len() {
            out.extend_from_slice(row);
            return;
        }
        let p = msgs.order.parent(i).unwrap();
        let pt = msgs.bags[p].tuple(chosen[p]);
        let key: Vec<u32> = msgs.sep_in_parent[i].iter().map(|&c| pt[c]).collect();
        let Some(matches) = index[i].get(&key) else { return };
        for &k in matches {
            let t = msgs.bags[i].tuple(k);
            for (v, &c) in t.iter().zip(&msgs.bag_cols[i]) {
                row[c] = *v;
            }
            chosen[i] = k;
            extend(i + 1, msgs, index, row, chosen, out);
        }
    }

    for k in 0..msgs.bags[0].distinct_len() {
        if msgs.weights[0][k] == 0 {
            continue;
        }
        for (v, &c) in msgs.bags[0].tuple(k).iter().zip(&msgs.bag_cols[0]) {
            row[c] = *v;
        }
        chosen[0] = k;
        extend(1, &msgs, &index, &mut row, &mut chosen, &mut out);
    }
    let n = out.len() / width.max(1);
    let n = if width == 0 { size as usize } else { n };
    Ok(Relation::from_flat(msgs.schema.clone(), out, vec![1; n]))
}

/// Join size of the bag projections next to the number of distinct tuples of `π_{χ(T)}(R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpuriousCount {
    pub join_size: u128,
    pub distinct: u64,
}

impl SpuriousCount {
    /// `ρ = (|join| - |R|) / |R|`.
    pub fn ratio(&self) -> f64 {
        (self.join_size - self.distinct as u128) as f64 / self.distinct as f64
    }

    /// `log(1 + ρ) = log(|join| / |R|)` in nats.
    pub fn log1p_ratio(&self) -> f64 {
        (self.join_size as f64 / self.distinct as f64).ln()
    }

    pub fn spurious(&self) -> u128 {
        self.join_size - self.distinct as u128
    }
}

pub fn spurious_count(r: &Relation, tree: &JoinTree) -> Result<SpuriousCount> {
    let attrs = tree.attributes();
    let projected = r.project(&names(&attrs))?;
    if projected.is_empty() {
        return Err(Error::EmptyRelation);
    }
    let join_size = join_size(r, tree)?;
    let distinct = projected.distinct_len() as u64;
    if join_size < distinct as u128 {
        return Err(Error::Consistency(format!("join of {join_size} tuples is smaller than the relation ({distinct})")));
    }
    Ok(SpuriousCount { join_size, distinct })
}

/// Relative number of spurious tuples `ρ(R, T)`, measured against the distinct tuples of `R`.
pub fn spurious_ratio(r: &Relation, tree: &JoinTree) -> Result<f64> {
    Ok(spurious_count(r, tree)?.ratio())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::{empirical, Schema};

    fn tree(bags: &[&[&str]], edges: &[(u32, u32)]) -> Result<JoinTree> {
        JoinTree::new(bags.iter().enumerate().map(|(i, b)| Node::new(i as u32, b)).collect(), edges.to_vec())
    }

    fn set(names: &[&str]) -> AttrSet {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn rel(sizes: &[(&str, u32)], rows: &[&[u32]]) -> Relation {
        Relation::from_rows(Schema::with_sizes(sizes).unwrap(), rows.iter()).unwrap()
    }

    #[test]
    fn validates_path_with_contiguous_attributes() {
        let t = tree(&[&["A", "F"], &["A", "C", "D"], &["A", "B", "D"], &["B", "D", "E"]], &[(0, 1), (1, 2), (2, 3)]);
        assert!(t.is_ok());
        assert!(t.unwrap().warnings().is_empty());
    }

    #[test]
    fn rejects_running_intersection_violation() {
        let err = validate(
            &[Node::new(0, &["A", "B"]), Node::new(1, &["B", "C"]), Node::new(2, &["A", "C"])],
            &[(0, 1), (1, 2)],
        )
        .unwrap_err();
        assert_eq!(err, TreeViolation::RunningIntersection { attr: "A".into(), a: 0, b: 2 });
    }

    #[test]
    fn single_node_and_structural_errors() {
        assert!(tree(&[&["A", "B"]], &[]).is_ok());
        assert_eq!(validate(&[], &[]).unwrap_err(), TreeViolation::Empty);
        let nodes = [Node::new(0, &["A"]), Node::new(1, &["A"]), Node::new(2, &["A"])];
        assert_eq!(validate(&nodes, &[(0, 1), (1, 2), (2, 0)]).unwrap_err(), TreeViolation::Cycle(2, 0));
        assert_eq!(validate(&nodes, &[(0, 1)]).unwrap_err(), TreeViolation::Disconnected(0, 2));
        assert_eq!(validate(&nodes, &[(0, 7)]).unwrap_err(), TreeViolation::UnknownNode(7));
        assert_eq!(validate(&nodes, &[(1, 1)]).unwrap_err(), TreeViolation::SelfLoop(1));
        assert_eq!(
            validate(&[Node::new(0, &["A"]), Node::new(0, &["B"])], &[]).unwrap_err(),
            TreeViolation::DuplicateNode(0)
        );
    }

    #[test]
    fn warns_on_contained_bags() {
        let t = tree(&[&["A", "B"], &["B"]], &[(0, 1)]).unwrap();
        assert_eq!(t.warnings(), ["bag of node 1 is contained in the bag of node 0"]);
    }

    #[test]
    fn parses_json() {
        let t = JoinTree::from_json(
            r#"{"nodes":[{"id":0,"bag":["A","B"]},{"id":1,"bag":["B","C"]}],"edges":[[0,1]],"root":1,"domains":{"A":2}}"#,
        )
        .unwrap();
        assert_eq!(t.default_root(), 1);
        assert_eq!(t.domains().unwrap()["A"], 2);
        assert_eq!(JoinTree::from_json(&t.to_json()).unwrap(), t);
        assert!(matches!(JoinTree::from_json(r#"{"nodes":[],"edges":[]}"#), Err(Error::InvalidTree(_))));
        assert!(matches!(JoinTree::from_json(r#"{"nodes":[{"id":0,"bag":["A"]}],"edges":[],"root":3}"#), Err(Error::UnknownNode(3))));
        assert!(matches!(JoinTree::from_json("{"), Err(Error::Json(_))));
    }

    #[test]
    fn dfs_orders() {
        let star = tree(&[&["X", "A"], &["X", "B"], &["X", "C"], &["X", "D"]], &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let o = star.dfs_order(0).unwrap();
        assert_eq!(o.ids(), [0, 1, 2, 3]);
        for i in 1..4 {
            assert_eq!(o.separator(i), &set(&["X"]));
        }
        let two = tree(&[&["A", "B"], &["B", "C"]], &[(0, 1)]).unwrap();
        assert_eq!(two.dfs_order(0).unwrap().separator(1), &set(&["B"]));
        assert!(matches!(two.dfs_order(9), Err(Error::UnknownNode(9))));

        // Both ends of a path give the same separators.
        let path = tree(&[&["A", "B"], &["B", "C"], &["C", "D"], &["D", "E"]], &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let seps = |root| {
            let o = path.dfs_order(root).unwrap();
            let mut s: Vec<AttrSet> = (1..4).map(|i| o.separator(i).clone()).collect();
            s.sort();
            s
        };
        assert_eq!(seps(0), seps(3));
    }

    #[test]
    fn mvd_support_of_path() {
        let t = tree(&[&["X", "U"], &["X", "V"], &["X", "W"]], &[(0, 1), (1, 2)]).unwrap();
        let mvds = mvd_support(&t.dfs_order(0).unwrap());
        assert_eq!(mvds, [
            Mvd { key: set(&["X"]), left: set(&["X", "U"]), right: set(&["X", "V", "W"]) },
            Mvd { key: set(&["X"]), left: set(&["X", "U", "V"]), right: set(&["X", "W"]) },
        ]);
        let two = tree(&[&["A", "B"], &["B", "C"]], &[(0, 1)]).unwrap();
        assert_eq!(mvd_support(&two.default_order()), [Mvd {
            key: set(&["B"]),
            left: set(&["A", "B"]),
            right: set(&["B", "C"])
        }]);
    }

    #[test]
    fn mvd_support_of_branching_tree_cuts_edges() {
        let t = tree(&[&["A", "B", "Z"], &["A", "P"], &["B", "Q"]], &[(0, 1), (0, 2)]).unwrap();
        let mvds = mvd_support(&t.default_order());
        assert_eq!(mvds.len(), 2);
        assert_eq!(mvds[0], Mvd { key: set(&["A"]), left: set(&["A", "B", "Z", "Q"]), right: set(&["A", "P"]) });
        assert_eq!(mvds[1], Mvd { key: set(&["B"]), left: set(&["A", "B", "Z", "P"]), right: set(&["B", "Q"]) });
    }

    fn diagonal(n: u32) -> Relation {
        Relation::from_rows(Schema::with_sizes(&[("A", n), ("B", n)]).unwrap(), (0..n).map(|i| [i, i])).unwrap()
    }

    #[test]
    fn diagonal_relation() {
        let n = 9;
        let r = diagonal(n);
        let t = tree(&[&["A"], &["B"]], &[(0, 1)]).unwrap();
        let p = empirical(&r).unwrap();
        assert!((j_measure(&t, &p).unwrap().nats() - (n as f64).ln()).abs() < 1e-12);
        assert_eq!(join_size(&r, &t).unwrap(), (n * n) as u128);
        assert_eq!(spurious_ratio(&r, &t).unwrap(), (n - 1) as f64);
        assert!(!models(&p, &t, 1e-9).unwrap());
    }

    #[test]
    fn small_join_matches_hand_count() {
        let r = rel(&[("A", 2), ("B", 2)], &[&[0, 0], &[0, 1], &[1, 0]]);
        let t = tree(&[&["A"], &["B"]], &[(0, 1)]).unwrap();
        assert_eq!(join_size(&r, &t).unwrap(), 4);
        assert!((spurious_ratio(&r, &t).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let j = acyclic_join(&r, &t, 100).unwrap();
        assert_eq!(j.iter().map(|(t, _)| t.to_vec()).collect::<Vec<_>>(), [[0, 0], [0, 1], [1, 0], [1, 1]]);
        assert!(matches!(acyclic_join(&r, &t, 3), Err(Error::JoinTooLarge { size: 4, cap: 3 })));
    }

    #[test]
    fn single_node_join_is_distinct_projection() {
        let r = rel(&[("A", 2), ("B", 2)], &[&[0, 0], &[0, 0], &[1, 0]]);
        let t = tree(&[&["A", "B"]], &[]).unwrap();
        assert_eq!(acyclic_join(&r, &t, 100).unwrap(), r.distinct());
        assert_eq!(spurious_ratio(&r, &t).unwrap(), 0.0);
    }

    #[test]
    fn two_bag_j_is_conditional_mutual_information() {
        let r = rel(&[("X", 2), ("Y", 3), ("Z", 2)], &[
            &[0, 0, 0],
            &[0, 1, 1],
            &[0, 2, 1],
            &[1, 0, 0],
            &[1, 1, 0],
            &[1, 2, 1],
            &[1, 2, 0],
        ]);
        let p = empirical(&r).unwrap();
        let t = tree(&[&["X", "Z"], &["X", "Y"]], &[(0, 1)]).unwrap();
        let j = j_measure(&t, &p).unwrap().nats();
        let i = info::cond_mutual_info(&p, &["Z"], &["Y"], &["X"]).unwrap().nats();
        assert!(j > 0.0);
        assert!((j - i).abs() < 1e-12);
        let b = j_bounds(&t, &p, &t.default_order()).unwrap();
        assert!((b.lower - j).abs() < 1e-12 && (b.upper - j).abs() < 1e-12);
    }

    #[test]
    fn factorized_two_bag_formula() {
        let r = rel(&[("A", 2), ("B", 2), ("C", 2)], &[&[0, 0, 0], &[1, 0, 1], &[1, 1, 1], &[0, 1, 0], &[0, 1, 1]]);
        let p = empirical(&r).unwrap();
        let t = tree(&[&["A", "B"], &["B", "C"]], &[(0, 1)]).unwrap();
        let pt = factorized_distribution(&t, &p).unwrap();
        let m = |attrs: &[&str], key: &[u32]| p.marginal(attrs).unwrap().mass_at(key);
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let expected = m(&["A", "B"], &[a, b]) * m(&["B", "C"], &[b, c]) / m(&["B"], &[b]);
                    assert!((pt.mass_at(&[a, b, c]) - expected).abs() < 1e-15);
                }
            }
        }
        let dense = pt.materialize(1000).unwrap();
        let total: f64 = dense.iter().map(|(_, m)| m).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let kl = info::kl_divergence(&p, &pt).unwrap().nats();
        assert!((kl - j_measure(&t, &p).unwrap().nats()).abs() < 1e-12);
    }

    #[test]
    fn markov_product_is_lossless() {
        // B determines the admissible A and C values independently.
        let mut rows = Vec::new();
        for (b, avals, cvals) in [(0u32, vec![0u32, 1], vec![0u32, 2]), (1, vec![1], vec![0, 1, 2])] {
            for &a in &avals {
                for &c in &cvals {
                    rows.push([a, b, c]);
                }
            }
        }
        let r = Relation::from_rows(Schema::with_sizes(&[("A", 2), ("B", 2), ("C", 3)]).unwrap(), &rows).unwrap();
        let t = tree(&[&["A", "B"], &["B", "C"]], &[(0, 1)]).unwrap();
        let p = empirical(&r).unwrap();
        assert_eq!(j_measure(&t, &p).unwrap(), Measure::ZERO);
        assert_eq!(join_size(&r, &t).unwrap(), r.distinct_len() as u128);
        assert!(models(&p, &t, 1e-9).unwrap());
        assert_eq!(j_bounds(&t, &p, &t.default_order()).unwrap().upper, 0.0);
        let pt = factorized_distribution(&t, &p).unwrap();
        for (x, m) in p.iter() {
            assert!((pt.mass_at(x) - m).abs() < 1e-15);
        }
    }

    #[test]
    fn mvd_spurious_count() {
        let r = diagonal(4);
        let mvd = Mvd { key: AttrSet::new(), left: set(&["A"]), right: set(&["B"]) };
        let c = mvd.spurious_count(&r).unwrap();
        assert_eq!(c, SpuriousCount { join_size: 16, distinct: 4 });
        assert_eq!(c.ratio(), 3.0);
        assert_eq!(c.log1p_ratio(), 4f64.ln());
    }

    #[test]
    fn empty_relation_has_no_ratio() {
        let r = Relation::empty(Schema::with_sizes(&[("A", 2), ("B", 2)]).unwrap());
        let t = tree(&[&["A"], &["B"]], &[(0, 1)]).unwrap();
        assert_eq!(spurious_ratio(&r, &t).unwrap_err(), Error::EmptyRelation);
        assert_eq!(join_size(&r, &t).unwrap(), 0);
    }

    #[test]
    fn unknown_bag_attribute() {
        let r = diagonal(3);
        let t = tree(&[&["A"], &["Q"]], &[(0, 1)]).unwrap();
        assert_eq!(join_size(&r, &t).unwrap_err(), Error::UnknownAttribute("Q".into()));
    }
}
