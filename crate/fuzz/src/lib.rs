//! Fuzz entry points. Each takes raw bytes, feeds them to a parser and, when the
//! input parses, checks invariants that must hold for every accepted input.
//! Errors are fine; panics are findings.

use std::collections::BTreeMap;

use ajd_core::{bounds, jointree, CsvOptions, Distribution, JoinTree, Relation};

const DELIMITERS: [u8; 4] = [b',', b';', b'\t', b'|'];

/// First byte: bit 0 toggles the header row, bits 1-2 pick the delimiter and
/// bit 3 declares a domain of size `(byte >> 4) + 1` for the first column.
pub fn load_csv(data: &[u8]) {
    let Some((&flags, body)) = data.split_first() else { return };
    let mut options = CsvOptions {
        header: flags & 1 == 0,
        delimiter: DELIMITERS[((flags >> 1) & 3) as usize],
        domains: None,
    };
    if flags & 8 != 0 {
        let first = body.split(|&b| b == b'\n' || b == options.delimiter).next().unwrap_or_default();
        let name = if options.header { String::from_utf8_lossy(first).trim().to_string() } else { "c0".to_string() };
        options.domains = Some(BTreeMap::from([(name, u32::from(flags >> 4) + 1)]));
    }
    if let Ok(r) = ajd_core::load_csv(body, &options) {
        check_relation(&r);
    }
}

fn check_relation(r: &Relation) {
    assert!(!r.is_empty());
    assert!(r.distinct_len() as u64 <= r.len());
    for (t, count) in r.iter() {
        assert!(count >= 1);
        for (v, a) in t.iter().zip(r.schema().attributes()) {
            assert!(*v < a.size(), "value {v} outside the domain of {}", a.name());
        }
    }
    let p = Distribution::empirical(r).expect("non-empty relation has an empirical distribution");
    let total: f64 = p.iter().map(|(_, m)| m).sum();
    assert!((total - 1.0).abs() <= 1e-9);
    let names: Vec<&str> = r.schema().names().collect();
    assert_eq!(&r.project(&names).expect("projection on own attributes"), r);
}

pub fn jointree_json(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(tree) = JoinTree::from_json(text) else { return };
    let again = JoinTree::from_json(&tree.to_json()).expect("serialized tree parses");
    assert_eq!(again.nodes(), tree.nodes());
    assert_eq!(again.edges(), tree.edges());
    assert_eq!(again.domains(), tree.domains());
    let attrs = tree.attributes();
    for n in tree.nodes() {
        let order = tree.dfs_order(n.id).expect("every node can root the tree");
        assert_eq!(order.len(), tree.len());
        let support = jointree::mvd_support(&order);
        assert_eq!(support.len(), tree.len() - 1);
        for m in &support {
            let union: std::collections::BTreeSet<_> = m.left.union(&m.right).cloned().collect();
            assert_eq!(union, attrs);
        }
    }
}

/// A CSV relation and a join-tree JSON document separated by a NUL byte.
pub fn analyze(data: &[u8]) {
    if data.len() > 4096 {
        return;
    }
    let Some(split) = data.iter().position(|&b| b == 0) else { return };
    let (csv, tree) = (&data[..split], &data[split + 1..]);
    let Ok(tree) = std::str::from_utf8(tree).map_err(drop).and_then(|t| JoinTree::from_json(t).map_err(drop)) else {
        return;
    };
    let options = CsvOptions { domains: tree.domains().cloned(), ..CsvOptions::default() };
    let Ok(r) = ajd_core::load_csv(csv, &options) else { return };
    let r = r.with_observed_domains();
    let Ok(report) = bounds::schema_upper_bound(&tree, &r, 0.05, &tree.default_order()) else { return };
    assert!(report.j >= 0.0 && report.rho >= 0.0);
    assert!(report.verdicts.deterministic_ok, "deterministic bound failed: {:?}", report.verdicts);
}
