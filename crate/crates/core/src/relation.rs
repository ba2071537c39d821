//! Relations over finite, integer-coded domains.
//!
//! A [`Relation`] is a multiset of tuples. Values are interned to dense codes
//! `0..d` per attribute when loaded, and distinct tuples are kept sorted in a
//! flat row-major buffer with one multiplicity per distinct tuple.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::Serialize;

use crate::error::{Error, Result};

/// A named attribute with a finite domain `{0, .., size - 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attribute {
    name: String,
    size: u32,
    /// Original spelling of each code, when the domain was inferred from data.
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    declared: bool,
}

impl Attribute {
    /// An attribute whose domain size was declared up front.
    pub fn declared(name: impl Into<String>, size: u32) -> Result<Self> {
        let name = name.into();
        if size == 0 {
            return Err(Error::InvalidDomain { attr: name, message: "domain size must be at least 1".into() });
        }
        Ok(Attribute { name, size, labels: None, declared: true })
    }

    /// An attribute whose domain is the given set of observed labels.
    pub fn inferred(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::InvalidDomain { attr: name, message: "empty domain".into() });
        }
        let size = u32::try_from(labels.len())
            .map_err(|_| Error::InvalidDomain { attr: name.clone(), message: "domain too large".into() })?;
        Ok(Attribute { name, size, labels: Some(labels), declared: false })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    /// Whether the domain size came from a declaration rather than from the data.
    pub fn is_declared(&self) -> bool {
        self.declared
    }

    /// The original value for `code`.
    pub fn label(&self, code: u32) -> String {
        match &self.labels {
            Some(l) => l.get(code as usize).cloned().unwrap_or_else(|| code.to_string()),
            None => code.to_string(),
        }
    }

    /// Treats the observed domain as the declared one.
    pub fn declare_observed(mut self) -> Attribute {
        self.declared = true;
        self
    }

    fn same_domain(&self, other: &Attribute) -> bool {
        self.name == other.name && self.size == other.size && self.labels == other.labels
    }
}

/// Ordered list of attributes with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Schema {
    attrs: Vec<Attribute>,
}

impl Schema {
    pub fn new(attrs: Vec<Attribute>) -> Result<Self> {
        for (i, a) in attrs.iter().enumerate() {
            if attrs[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::DuplicateAttribute(a.name.clone()));
            }
        }
        Ok(Schema { attrs })
    }

    /// Schema of declared domains, e.g. `Schema::with_sizes(&[("A", 4), ("B", 2)])`.
    pub fn with_sizes<S: AsRef<str>>(sizes: &[(S, u32)]) -> Result<Self> {
        let attrs = sizes
            .iter()
            .map(|(n, d)| Attribute::declared(n.as_ref(), *d))
            .collect::<Result<Vec<_>>>()?;
        Schema::new(attrs)
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attrs
    }

    pub fn attribute(&self, name: &str) -> Result<&Attribute> {
        Ok(&self.attrs[self.index_of(name)?])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.attrs.iter().map(|a| a.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.attrs
            .iter()
            .position(|a| a.name == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Column indices of `names`, in the order given. Rejects unknown and repeated names.
    pub fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            let i = self.index_of(n.as_ref())?;
            if cols.contains(&i) {
                return Err(Error::DuplicateAttribute(n.as_ref().to_string()));
            }
            cols.push(i);
        }
        Ok(cols)
    }

    /// Column indices of the union of `names`, sorted in schema order.
    pub fn resolve_set<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        let mut cols = names.iter().map(|n| self.index_of(n.as_ref())).collect::<Result<Vec<_>>>()?;
        cols.sort_unstable();
        cols.dedup();
        Ok(cols)
    }

    pub fn select(&self, cols: &[usize]) -> Schema {
        Schema { attrs: cols.iter().map(|&c| self.attrs[c].clone()).collect() }
    }

    /// True when names and domain sizes agree position by position.
    pub fn same_shape(&self, other: &Schema) -> bool {
        self.attrs.len() == other.attrs.len()
            && self.attrs.iter().zip(&other.attrs).all(|(a, b)| a.name == b.name && a.size == b.size)
    }

    pub(crate) fn check_tuple(&self, tuple: &[u32]) -> Result<()> {
        if tuple.len() != self.attrs.len() {
            return Err(Error::SchemaMismatch(format!(
                "tuple of arity {} for a schema of arity {}",
                tuple.len(),
                self.attrs.len()
            )));
        }
        for (v, a) in tuple.iter().zip(&self.attrs) {
            if *v >= a.size {
                return Err(Error::DomainViolation { attr: a.name.clone(), value: v.to_string(), size: a.size });
            }
        }
        Ok(())
    }
}

/// Sorts `n` flat rows and merges duplicates, summing their weights.
fn sort_merge<W: Copy + std::ops::AddAssign>(arity: usize, data: &[u32], weights: &[W]) -> (Vec<u32>, Vec<W>) {
    let n = weights.len();
    let row = |i: usize| &data[i * arity..(i + 1) * arity];
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_unstable_by(|&a, &b| row(a).cmp(row(b)));
    let mut out = Vec::with_capacity(data.len());
    let mut out_w: Vec<W> = Vec::with_capacity(n);
    for (k, &i) in perm.iter().enumerate() {
        if k > 0 && row(perm[k - 1]) == row(i) {
            *out_w.last_mut().unwrap() += weights[i];
        } else {
            out.extend_from_slice(row(i));
            out_w.push(weights[i]);
        }
    }
    (out, out_w)
}

/// Options for [`load_csv`].
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub header: bool,
    pub delimiter: u8,
    /// Declared domain sizes. Values of a declared attribute must be integers in `0..size`.
    pub domains: Option<BTreeMap<String, u32>>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { header: true, delimiter: b',', domains: None }
    }
}

/// A multiset of tuples over a [`Schema`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    schema: Schema,
    /// Distinct tuples, sorted, row-major.
    data: Vec<u32>,
    /// Multiplicity of each distinct tuple; all positive.
    counts: Vec<u64>,
}

impl Relation {
    pub fn empty(schema: Schema) -> Self {
        Relation { schema, data: Vec::new(), counts: Vec::new() }
    }

    /// Builds a relation from rows; repeated rows become multiplicities.
    pub fn from_rows<I, T>(schema: Schema, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u32]>,
    {
        Relation::from_counts(schema, rows.into_iter().map(|r| (r, 1)))
    }

    /// Builds a relation from `(tuple, multiplicity)` pairs. Zero multiplicities are dropped.
    pub fn from_counts<I, T>(schema: Schema, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (T, u64)>,
        T: AsRef<[u32]>,
    {
        let mut data = Vec::new();
        let mut counts = Vec::new();
        for (t, k) in rows {
            let t = t.as_ref();
            schema.check_tuple(t)?;
            if k > 0 {
                data.extend_from_slice(t);
                counts.push(k);
            }
        }
        Ok(Relation::from_flat(schema, data, counts))
    }

    /// Builds from unchecked flat rows; callers guarantee domain membership.
    pub(crate) fn from_flat(schema: Schema, data: Vec<u32>, counts: Vec<u64>) -> Self {
        let (data, counts) = sort_merge(schema.len(), &data, &counts);
        Relation { schema, data, counts }
    }

    /// Builds from `n` rows that are already sorted and distinct, each with multiplicity one.
    pub(crate) fn from_sorted_set(schema: Schema, data: Vec<u32>, n: usize) -> Self {
        debug_assert_eq!(data.len(), n * schema.len());
        Relation { schema, data, counts: vec![1; n] }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn arity(&self) -> usize {
        self.schema.len()
    }

    /// N: number of rows counting multiplicity.
    pub fn len(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of distinct tuples.
    pub fn distinct_len(&self) -> usize {
        self.counts.len()
    }

    pub fn tuple(&self, i: usize) -> &[u32] {
        let a = self.arity();
        &self.data[i * a..(i + 1) * a]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    /// Distinct tuples in sorted order with their multiplicities.
    pub fn iter(&self) -> impl Iterator<Item = (&[u32], u64)> + '_ {
        (0..self.counts.len()).map(move |i| (self.tuple(i), self.counts[i]))
    }

    pub fn multiplicity(&self, tuple: &[u32]) -> u64 {
        self.position(tuple).map_or(0, |i| self.counts[i])
    }

    pub fn contains(&self, tuple: &[u32]) -> bool {
        self.position(tuple).is_some()
    }

    fn position(&self, tuple: &[u32]) -> Option<usize> {
        if tuple.len() != self.arity() {
            return None;
        }
        let (mut lo, mut hi) = (0, self.counts.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.tuple(mid).cmp(tuple) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// The same tuples with every multiplicity set to one.
    pub fn distinct(&self) -> Relation {
        Relation { schema: self.schema.clone(), data: self.data.clone(), counts: vec![1; self.counts.len()] }
    }

    /// Projection onto `attrs` (in the order given). Multiplicities of collapsed rows are summed.
    pub fn project<S: AsRef<str>>(&self, attrs: &[S]) -> Result<Relation> {
        let cols = self.schema.resolve(attrs)?;
        Ok(self.project_cols(&cols))
    }

    pub(crate) fn project_cols(&self, cols: &[usize]) -> Relation {
        let mut data = Vec::with_capacity(self.counts.len() * cols.len());
        for (t, _) in self.iter() {
            data.extend(cols.iter().map(|&c| t[c]));
        }
        Relation::from_flat(self.schema.select(cols), data, self.counts.clone())
    }

    /// Natural join with set semantics: output tuples are distinct, multiplicity one.
    pub fn natural_join(&self, other: &Relation) -> Result<Relation> {
        let mut shared = Vec::new();
        let mut extra = Vec::new();
        for (j, b) in other.schema.attrs.iter().enumerate() {
            match self.schema.attrs.iter().position(|a| a.name == b.name) {
                Some(i) => {
                    if !self.schema.attrs[i].same_domain(b) {
                        return Err(Error::DomainConflict(b.name.clone()));
                    }
                    shared.push((i, j));
                }
                None => extra.push(j),
            }
        }
        let mut attrs = self.schema.attrs.clone();
        attrs.extend(extra.iter().map(|&j| other.schema.attrs[j].clone()));
        let schema = Schema::new(attrs)?;

        let mut index: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
        for i in 0..other.distinct_len() {
            let t = other.tuple(i);
            index.entry(shared.iter().map(|&(_, j)| t[j]).collect()).or_default().push(i);
        }
        let mut data = Vec::new();
        let mut n = 0;
        let mut key = Vec::with_capacity(shared.len());
        for (t, _) in self.iter() {
            key.clear();
            key.extend(shared.iter().map(|&(i, _)| t[i]));
            if let Some(matches) = index.get(&key) {
                for &m in matches {
                    let u = other.tuple(m);
                    data.extend_from_slice(t);
                    data.extend(extra.iter().map(|&j| u[j]));
                    n += 1;
                }
            }
        }
        Ok(Relation::from_flat(schema, data, vec![1; n]))
    }

    /// Rows whose `attr` equals `value`, multiplicities preserved.
    pub fn select_eq(&self, attr: &str, value: u32) -> Result<Relation> {
        let c = self.schema.index_of(attr)?;
        let a = &self.schema.attrs[c];
        if value >= a.size {
            return Err(Error::DomainViolation { attr: a.name.clone(), value: value.to_string(), size: a.size });
        }
        let mut data = Vec::new();
        let mut counts = Vec::new();
        for (t, k) in self.iter().filter(|(t, _)| t[c] == value) {
            data.extend_from_slice(t);
            counts.push(k);
        }
        Ok(Relation { schema: self.schema.clone(), data, counts })
    }

    /// Marks every attribute's domain as declared, using the observed values for
    /// attributes whose domain was inferred.
    pub fn with_observed_domains(self) -> Relation {
        let attrs = self.schema.attrs.iter().cloned().map(Attribute::declare_observed).collect();
        Relation { schema: Schema { attrs }, ..self }
    }

    /// Replaces this relation's schema by one of the same shape, e.g. to declare domains.
    pub fn with_schema(self, schema: Schema) -> Result<Relation> {
        if schema.len() != self.schema.len() {
            return Err(Error::SchemaMismatch("arity differs".into()));
        }
        for (t, _) in self.iter() {
            schema.check_tuple(t)?;
        }
        Ok(Relation { schema, ..self })
    }
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

/// Reads a delimiter-separated relation. Duplicate rows are kept as multiplicities.
pub fn load_csv<R: Read>(source: R, options: &CsvOptions) -> Result<Relation> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(options.delimiter)
        .flexible(true)
        .from_reader(source);

    let mut names: Option<Vec<String>> = None;
    let mut columns: Vec<Vec<u32>> = Vec::new();
    let mut interners: Vec<(HashMap<String, u32>, Vec<String>)> = Vec::new();
    let mut declared: Vec<Option<u32>> = Vec::new();
    let mut arity = None;
    let mut record = csv::StringRecord::new();
    let mut rows = 0usize;

    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(Error::Parse { line: csv_line(&e), message: e.to_string() }),
        }
        let line = record.position().map_or(0, |p| p.line());
        match arity {
            None => {
                let n = record.len();
                arity = Some(n);
                let header: Vec<String> = if options.header {
                    record.iter().map(|s| s.trim().to_string()).collect()
                } else {
                    (1..=n).map(|i| format!("X{i}")).collect()
                };
                for (i, h) in header.iter().enumerate() {
                    if h.is_empty() {
                        return Err(Error::Parse { line, message: format!("empty name for column {}", i + 1) });
                    }
                    if header[..i].contains(h) {
                        return Err(Error::DuplicateAttribute(h.clone()));
                    }
                }
                if let Some(domains) = &options.domains {
                    for (name, &size) in domains {
                        if size == 0 {
                            return Err(Error::InvalidDomain {
                                attr: name.clone(),
                                message: "domain size must be at least 1".into(),
                            });
                        }
                    }
                }
                declared = header
                    .iter()
                    .map(|h| options.domains.as_ref().and_then(|d| d.get(h).copied()))
                    .collect();
                columns = vec![Vec::new(); n];
                interners = vec![(HashMap::new(), Vec::new()); n];
                names = Some(header);
                if options.header {
                    continue;
                }
            }
            Some(n) if n != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {n} fields, found {}", record.len()),
                });
            }
            Some(_) => {}
        }
        let names = names.as_ref().unwrap();
        for (c, field) in record.iter().enumerate() {
            let field = field.trim();
            let code = match declared[c] {
                Some(size) => match field.parse::<u32>() {
                    Ok(v) if v < size => v,
                    _ => {
                        return Err(Error::DomainViolation {
                            attr: names[c].clone(),
                            value: field.to_string(),
                            size,
                        })
                    }
                },
                None => {
                    let (map, labels) = &mut interners[c];
                    match map.get(field) {
                        Some(&v) => v,
                        None => {
                            let v = labels.len() as u32;
                            map.insert(field.to_string(), v);
                            labels.push(field.to_string());
                            v
                        }
                    }
                }
            };
            columns[c].push(code);
        }
        rows += 1;
    }

    if rows == 0 || arity == Some(0) {
        return Err(Error::EmptyRelation);
    }
    let names = names.unwrap();
    if let Some(domains) = &options.domains {
        if let Some(unknown) = domains.keys().find(|k| !names.contains(k)) {
            return Err(Error::UnknownAttribute(unknown.clone()));
        }
    }
    let attrs = names
        .iter()
        .zip(declared)
        .zip(interners)
        .map(|((name, decl), (_, labels))| match decl {
            Some(size) => Attribute::declared(name.clone(), size),
            None => Attribute::inferred(name.clone(), labels),
        })
        .collect::<Result<Vec<_>>>()?;
    let schema = Schema::new(attrs)?;
    let arity = schema.len();
    let mut data = Vec::with_capacity(rows * arity);
    for r in 0..rows {
        data.extend(columns.iter().map(|col| col[r]));
    }
    Ok(Relation::from_flat(schema, data, vec![1; rows]))
}

/// A probability mass function over tuples of a schema, stored on its support.
///
/// Built from a relation it is the empirical distribution `P(t) = K/N`; exact
/// counts are then kept so marginals are summed in integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    schema: Schema,
    data: Vec<u32>,
    mass: Vec<f64>,
    counts: Option<(Vec<u64>, u64)>,
}

pub type EmpiricalDistribution = Distribution;

/// The empirical distribution of `r`.
pub fn empirical(r: &Relation) -> Result<Distribution> {
    Distribution::empirical(r)
}

impl Distribution {
    pub fn empirical(r: &Relation) -> Result<Distribution> {
        let total = r.len();
        if total == 0 {
            return Err(Error::EmptyRelation);
        }
        let mass = r.counts.iter().map(|&k| k as f64 / total as f64).collect();
        Ok(Distribution { schema: r.schema.clone(), data: r.data.clone(), mass, counts: Some((r.counts.clone(), total)) })
    }

    /// Builds a distribution from explicit masses. Zero masses are dropped; the
    /// rest must be positive and sum to one.
    pub fn from_masses<I, T>(schema: Schema, points: I) -> Result<Distribution>
    where
        I: IntoIterator<Item = (T, f64)>,
        T: AsRef<[u32]>,
    {
        let mut data = Vec::new();
        let mut mass = Vec::new();
        for (t, p) in points {
            let t = t.as_ref();
            schema.check_tuple(t)?;
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!("mass {p} is not a finite non-negative number")));
            }
            if p > 0.0 {
                data.extend_from_slice(t);
                mass.push(p);
            }
        }
        let (data, mass) = sort_merge(schema.len(), &data, &mass);
        let total = crate::info::stable_sum(mass.iter().copied());
        let tol = 1e-12 + 4.0 * f64::EPSILON * mass.len() as f64;
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidArgument(format!("masses sum to {total}, not 1")));
        }
        Ok(Distribution { schema, data, mass, counts: None })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn support_len(&self) -> usize {
        self.mass.len()
    }

    pub fn point(&self, i: usize) -> &[u32] {
        let a = self.schema.len();
        &self.data[i * a..(i + 1) * a]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u32], f64)> + '_ {
        (0..self.mass.len()).map(move |i| (self.point(i), self.mass[i]))
    }

    /// `P(t)`, zero off the support.
    pub fn mass_at(&self, tuple: &[u32]) -> f64 {
        let (mut lo, mut hi) = (0, self.mass.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.point(mid).cmp(tuple) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return self.mass[mid],
            }
        }
        0.0
    }

    /// Marginal masses over `cols`, keyed by the projected tuple, in key order.
    pub(crate) fn marginal_cols(&self, cols: &[usize]) -> Vec<(Vec<u32>, f64)> {
        let mut data = Vec::with_capacity(self.mass.len() * cols.len());
        for (t, _) in self.iter() {
            data.extend(cols.iter().map(|&c| t[c]));
        }
        let k = cols.len();
        let rows = |d: &[u32], n: usize| -> Vec<Vec<u32>> { (0..n).map(|i| d[i * k..(i + 1) * k].to_vec()).collect() };
        match &self.counts {
            Some((counts, total)) => {
                let (d, c) = sort_merge(k, &data, counts);
                let n = c.len();
                rows(&d, n).into_iter().zip(c).map(|(t, c)| (t, c as f64 / *total as f64)).collect()
            }
            None => {
                // Sum in ascending order per key so rounding is reproducible.
                let mut perm: Vec<usize> = (0..self.mass.len()).collect();
                let row = |i: usize| &data[i * k..(i + 1) * k];
                perm.sort_unstable_by(|&a, &b| row(a).cmp(row(b)).then(self.mass[a].total_cmp(&self.mass[b])));
                let mut out: Vec<(Vec<u32>, Vec<f64>)> = Vec::new();
                for i in perm {
                    match out.last_mut() {
                        Some((key, ms)) if key.as_slice() == row(i) => ms.push(self.mass[i]),
                        _ => out.push((row(i).to_vec(), vec![self.mass[i]])),
                    }
                }
                out.into_iter().map(|(key, ms)| (key, crate::info::stable_sum(ms))).collect()
            }
        }
    }

    /// Marginal distribution over `attrs`.
    pub fn marginal<S: AsRef<str>>(&self, attrs: &[S]) -> Result<Distribution> {
        let cols = self.schema.resolve(attrs)?;
        let schema = self.schema.select(&cols);
        match &self.counts {
            Some((counts, total)) => {
                let mut data = Vec::with_capacity(counts.len() * cols.len());
                for (t, _) in self.iter() {
                    data.extend(cols.iter().map(|&c| t[c]));
                }
                let (data, c) = sort_merge(cols.len(), &data, counts);
                let mass = c.iter().map(|&k| k as f64 / *total as f64).collect();
                Ok(Distribution { schema, data, mass, counts: Some((c, *total)) })
            }
            None => {
                let m = self.marginal_cols(&cols);
                let data = m.iter().flat_map(|(t, _)| t.iter().copied()).collect();
                let mass = m.into_iter().map(|(_, p)| p).collect();
                Ok(Distribution { schema, data, mass, counts: None })
            }
        }
    }

    /// Exact integer counts and total when the distribution is empirical.
    pub fn counts(&self) -> Option<(&[u64], u64)> {
        self.counts.as_ref().map(|(c, t)| (c.as_slice(), *t))
    }

    /// The support as a relation with multiplicity one per point.
    pub fn support(&self) -> Relation {
        Relation::from_sorted_set(self.schema.clone(), self.data.clone(), self.mass.len())
    }
}
