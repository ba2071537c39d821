//! Small fixed examples for every module, each checked against a brute-force
//! or hand-computed reference.

use ajd_core::bounds::{self, MvdDims};
use ajd_core::info;
use ajd_core::jointree::{self, JoinTree, Node};
use ajd_core::oracle::{self, DenseDistribution};
use ajd_core::{Distribution, Relation, Schema};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(sizes: &[(&str, u32)], rows: &[&[u32]]) -> Relation {
    Relation::from_rows(Schema::with_sizes(sizes).unwrap(), rows.iter().map(|r| r.to_vec())).unwrap()
}

fn tree(bags: &[&[&str]], edges: &[(u32, u32)]) -> JoinTree {
    JoinTree::new(bags.iter().enumerate().map(|(i, b)| Node::new(i as u32, b)).collect(), edges.to_vec()).unwrap()
}

fn random_dims(rng: &mut ChaCha8Rng, attrs: usize, max: u32) -> Vec<u32> {
    (0..attrs).map(|_| rng.random_range(2..=max)).collect()
}

#[test]
fn natural_join_agrees_with_the_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for case in 0..100 {
        let k = rng.random_range(2..=5);
        let dims = random_dims(&mut rng, k, 4);
        let schema = oracle::numbered_schema(&dims);
        let k = rng.random_range(1..=25);
        let r = oracle::random_relation(&mut rng, &schema, k).unwrap();
        let names: Vec<&str> = schema.names().collect();
        let pick = |rng: &mut ChaCha8Rng| -> Vec<&str> { names.iter().copied().filter(|_| rng.random_bool(0.6)).collect() };
        let parts: Vec<Relation> = (0..3).map(|_| r.project(&pick(&mut rng)).unwrap()).collect();
        let fast = parts[0].natural_join(&parts[1]).unwrap().natural_join(&parts[2]).unwrap();
        let slow = oracle::oracle_join(&parts).unwrap();
        let order: Vec<String> = fast.schema().names().map(str::to_string).collect();
        assert_eq!(fast, oracle::oracle_project(&slow, &order).unwrap(), "case {case}");
    }
}

#[test]
fn entropy_agrees_with_exact_marginals_on_100_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..100 {
        let k = rng.random_range(1..=4);
        let dims = random_dims(&mut rng, k, 4);
        let schema = oracle::numbered_schema(&dims);
        let k = rng.random_range(1..=30);
        let support = oracle::random_relation(&mut rng, &schema, k).unwrap().distinct();
        let p = oracle::random_weights(&mut rng, &support, 20).unwrap();
        let pf = p.to_distribution().unwrap();
        let names: Vec<String> = schema.names().map(str::to_string).collect();
        for _ in 0..4 {
            let y: Vec<&String> = names.iter().filter(|_| rng.random_bool(0.5)).collect();
            let fast = info::entropy(&pf, &y).unwrap().nats();
            let slow = oracle::oracle_entropy(&p, &y).unwrap();
            assert!((fast - slow).abs() <= 1e-12, "case {case}: {fast} vs {slow}");
        }
    }
}

#[test]
fn oracle_edge_cases() {
    assert!(oracle::oracle_join(&[]).is_err());
    let r = rel(&[("A", 3), ("B", 3)], &[&[0, 1], &[0, 1], &[2, 0]]);
    assert_eq!(oracle::oracle_join(std::slice::from_ref(&r)).unwrap(), r.distinct());

    let cube = rel(&[("A", 2), ("B", 2), ("C", 2)], &[
        &[0, 0, 0], &[0, 0, 1], &[0, 1, 0], &[0, 1, 1], &[1, 0, 0], &[1, 0, 1], &[1, 1, 0], &[1, 1, 1],
    ]);
    let uniform = DenseDistribution::from_relation(&cube).unwrap();
    assert!((oracle::oracle_entropy(&uniform, &["A", "B", "C"]).unwrap() - 8f64.ln()).abs() <= 1e-15);
    let point = DenseDistribution::from_relation(&rel(&[("A", 2)], &[&[1]])).unwrap();
    assert_eq!(oracle::oracle_entropy(&point, &["A"]).unwrap(), 0.0);
}

#[test]
fn a_distribution_that_models_the_tree_is_its_own_factorization() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..60 {
        let attrs = rng.random_range(2..=4);
        let k = rng.random_range(1..=4);
        let t = oracle::random_join_tree(&mut rng, k, attrs).unwrap();
        let dims = random_dims(&mut rng, attrs, 3);
        let support = oracle::random_relation(&mut rng, &oracle::numbered_schema(&dims), 15).unwrap().distinct();
        let p = oracle::random_model(&mut rng, &support, &t).unwrap();
        // Exact: enumerating the factorization of a model returns it unchanged.
        assert_eq!(oracle::oracle_enumerate_pt(&p, &t).unwrap(), p, "case {case}");
        let pf = p.to_distribution().unwrap();
        assert!(jointree::models(&pf, &t, 1e-9).unwrap());
        let pt = jointree::factorized_distribution(&t, &pf).unwrap().materialize(1 << 20).unwrap();
        assert_eq!(pt.support_len(), pf.support_len());
        for (x, m) in pf.iter() {
            assert!((pt.mass_at(x) - m).abs() <= 1e-12, "case {case}");
        }
        assert!(jointree::j_measure(&t, &pf).unwrap().nats() <= 1e-12);
    }
}

#[test]
fn chain_factorizations_on_the_cube_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let chain = tree(&[&["X1", "X2"], &["X2", "X3"]], &[(0, 1)]);
    let schema = oracle::numbered_schema(&[2, 2, 2]);
    for _ in 0..100 {
        let support = oracle::random_relation(&mut rng, &schema, 12).unwrap().distinct();
        let p = oracle::random_weights(&mut rng, &support, 50).unwrap();
        let exact = oracle::oracle_enumerate_pt(&p, &chain).unwrap();
        assert_eq!(exact.total(), BigRational::from_integer(1.into()));
        let pt = jointree::factorized_distribution(&chain, &p.to_distribution().unwrap())
            .unwrap()
            .materialize(1 << 20)
            .unwrap();
        let total: f64 = pt.iter().map(|(_, m)| m).sum();
        assert!((total - 1.0).abs() <= 1e-12);
        for (x, q) in exact.iter() {
            assert!((pt.mass_at(x) - oracle::to_f64(q)).abs() <= 1e-12);
        }
    }
}

#[test]
fn unseen_separator_values_carry_no_mass() {
    // B = 1 never occurs.
    let r = rel(&[("A", 2), ("B", 2), ("C", 2)], &[&[0, 0, 0], &[1, 0, 1], &[1, 0, 0]]);
    let t = tree(&[&["A", "B"], &["B", "C"]], &[(0, 1)]);
    let exact = oracle::oracle_enumerate_pt(&DenseDistribution::from_relation(&r).unwrap(), &t).unwrap();
    assert!(exact.iter().all(|(x, _)| x[1] == 0));
    let pt = jointree::factorized_distribution(&t, &Distribution::empirical(&r).unwrap()).unwrap().materialize(64).unwrap();
    for a in 0..2 {
        for c in 0..2 {
            assert_eq!(pt.mass_at(&[a, 1, c]), 0.0);
        }
    }
    assert_eq!(pt.support_len(), 4);
}

#[test]
fn models_examples() {
    let singletons = tree(&[&["A"], &["B"]], &[(0, 1)]);
    let product = rel(&[("A", 2), ("B", 3)], &[&[0, 0], &[0, 1], &[0, 2], &[1, 0], &[1, 1], &[1, 2]]);
    assert!(jointree::models(&Distribution::empirical(&product).unwrap(), &singletons, 1e-9).unwrap());
    let diagonal = rel(&[("A", 5), ("B", 5)], &[&[0, 0], &[1, 1], &[2, 2], &[3, 3], &[4, 4]]);
    assert!(!jointree::models(&Distribution::empirical(&diagonal).unwrap(), &singletons, 1e-9).unwrap());

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for _ in 0..30 {
        let t = oracle::random_join_tree(&mut rng, 3, 4).unwrap();
        let r = oracle::random_relation(&mut rng, &oracle::numbered_schema(&[3, 2, 3, 2]), 20).unwrap();
        let p = Distribution::empirical(&r).unwrap();
        let pt = jointree::factorized_distribution(&t, &p).unwrap().materialize(1 << 20).unwrap();
        assert!(jointree::models(&pt, &t, 1e-9).unwrap());
    }
}

#[test]
fn sandwich_on_random_binary_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let schema = oracle::numbered_schema(&[2, 2, 2, 2]);
    for case in 0..100 {
        let t = oracle::random_join_tree(&mut rng, 4, 4).unwrap();
        let support = oracle::random_relation(&mut rng, &schema, 16).unwrap().distinct();
        let p = oracle::random_weights(&mut rng, &support, 30).unwrap();
        let pf = p.to_distribution().unwrap();
        let j = jointree::j_measure(&t, &pf).unwrap().nats();
        assert!((j - oracle::oracle_j(&p, &t).unwrap()).abs() <= 1e-9, "case {case}");
        for n in t.nodes() {
            let b = jointree::j_bounds(&t, &pf, &t.dfs_order(n.id).unwrap()).unwrap();
            assert_eq!(b.terms.len(), 3);
            assert!(b.lower <= j + 1e-9 && j <= b.upper + 1e-9, "case {case}: {} <= {j} <= {}", b.lower, b.upper);
            for (m, &i) in jointree::mvd_support(&t.dfs_order(n.id).unwrap()).iter().zip(&b.terms) {
                let (l, r, k) = (
                    m.left.iter().collect::<Vec<_>>(),
                    m.right.iter().collect::<Vec<_>>(),
                    m.key.iter().collect::<Vec<_>>(),
                );
                assert!((i - oracle::oracle_cmi(&p, &l, &r, &k).unwrap()).abs() <= 1e-9);
            }
        }
    }
    // One MVD: both ends of the sandwich are J.
    let two = tree(&[&["X1", "X2"], &["X2", "X3"]], &[(0, 1)]);
    let r = oracle::random_relation(&mut rng, &oracle::numbered_schema(&[3, 3, 3]), 12).unwrap();
    let p = Distribution::empirical(&r).unwrap();
    let b = jointree::j_bounds(&two, &p, &two.default_order()).unwrap();
    let j = jointree::j_measure(&two, &p).unwrap().nats();
    assert_eq!(b.lower, b.upper);
    assert!((b.lower - j).abs() <= 1e-12);
}

#[test]
fn path_separators_do_not_depend_on_the_end_chosen() {
    let path = tree(&[&["A", "F"], &["A", "C", "D"], &["A", "B", "D"], &["B", "D", "E"]], &[(0, 1), (1, 2), (2, 3)]);
    let seps = |root: u32| {
        let o = path.dfs_order(root).unwrap();
        let mut s: Vec<Vec<String>> = (1..o.len()).map(|i| o.separator(i).iter().cloned().collect()).collect();
        s.sort();
        s
    };
    assert_eq!(seps(0), seps(3));
    let mut expected: Vec<Vec<String>> = path.separators().into_iter().map(|s| s.into_iter().collect()).collect();
    expected.sort();
    assert_eq!(seps(0), expected);
}

#[test]
fn lossless_relations_and_their_deletions() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut lossless, mut lossy) = (0, 0);
    for case in 0..100 {
        let attrs = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let t = oracle::random_join_tree(&mut rng, k, attrs).unwrap();
        let schema = oracle::numbered_schema(&random_dims(&mut rng, attrs, 3));
        let r = oracle::markov_relation(&mut rng, &t, &schema, 4).unwrap();
        let j = jointree::j_measure(&t, &Distribution::empirical(&r).unwrap()).unwrap().nats();
        assert_eq!(jointree::spurious_ratio(&r, &t).unwrap(), 0.0, "case {case}");
        assert!(j <= 1e-9, "case {case}: J = {j}");
        lossless += 1;
        if r.distinct_len() < 2 {
            continue;
        }
        // Removing one tuple may or may not break the dependency; J and rho must agree on which.
        let drop = rng.random_range(0..r.distinct_len());
        let rows: Vec<Vec<u32>> = r.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, (x, _))| x.to_vec()).collect();
        let smaller = Relation::from_rows(r.schema().clone(), rows).unwrap();
        let rho = jointree::spurious_ratio(&smaller, &t).unwrap();
        assert_eq!(rho, oracle::oracle_rho(&smaller, &t).unwrap());
        let j = jointree::j_measure(&t, &Distribution::empirical(&smaller).unwrap()).unwrap().nats();
        assert_eq!(rho == 0.0, j <= 1e-9, "case {case}: rho {rho}, J {j}");
        if rho > 0.0 {
            lossy += 1;
        }
    }
    assert_eq!(lossless, 100);
    assert!(lossy > 10, "only {lossy} deletions broke the dependency");
}

#[test]
fn chain_inequality_examples() {
    let two = tree(&[&["A", "B"], &["B", "C"]], &[(0, 1)]);
    let r = rel(&[("A", 3), ("B", 2), ("C", 3)], &[&[0, 0, 0], &[1, 0, 1], &[2, 1, 2], &[0, 1, 0]]);
    let c = bounds::chain_inequality(&r, &two, &two.default_order()).unwrap();
    assert_eq!(c.lhs, c.rhs);

    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let lossless = oracle::markov_relation(&mut rng, &two, &Schema::with_sizes(&[("A", 3), ("B", 2), ("C", 3)]).unwrap(), 4)
        .unwrap();
    let c = bounds::chain_inequality(&lossless, &two, &two.default_order()).unwrap();
    assert_eq!((c.lhs, c.rhs), (0.0, 0.0));

    // Three nodes over three attributes: both sides from nested-loop joins.
    for case in 0..200 {
        let t = oracle::random_join_tree(&mut rng, 3, 3).unwrap();
        let schema = oracle::numbered_schema(&random_dims(&mut rng, 3, 4));
        let k = rng.random_range(1..=20);
        let r = oracle::random_relation(&mut rng, &schema, k).unwrap();
        let order = t.default_order();
        let c = bounds::chain_inequality(&r, &t, &order).unwrap();
        assert!((c.lhs - oracle::oracle_rho(&r, &t).unwrap().ln_1p()).abs() <= 1e-12);
        let mut rhs = 0.0;
        for m in jointree::mvd_support(&order) {
            let sides = tree(
                &[&m.left.iter().map(String::as_str).collect::<Vec<_>>(), &m.right.iter().map(String::as_str).collect::<Vec<_>>()],
                &[(0, 1)],
            );
            rhs += oracle::oracle_rho(&r, &sides).unwrap().ln_1p();
        }
        assert!((c.rhs - rhs).abs() <= 1e-9, "case {case}");
        assert!(c.pass, "case {case}: {} > {}", c.lhs, c.rhs);
    }
}

#[test]
fn mi_confidence_rises_with_eta_past_its_turning_point() {
    let values: Vec<f64> =
        (1..=4096u64).map(|eta| bounds::mi_confidence(64, 64, eta, 0.1).unwrap().bound).collect();
    let turn = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert!(turn < 8, "turning point at eta = {}", turn + 1);
    assert!(values[turn..].windows(2).all(|w| w[0] < w[1]));
    let last = bounds::mi_confidence(64, 64, 4096, 0.1).unwrap();
    assert_eq!(last.rho_bar, 0.0);
    assert!(last.bound <= 0.0);
}

#[test]
fn single_mvd_report_is_i_plus_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let t = tree(&[&["A", "C"], &["B", "C"]], &[(0, 1)]);
    let schema = Schema::with_sizes(&[("A", 5), ("B", 3), ("C", 2)]).unwrap();
    for _ in 0..20 {
        let r = oracle::random_relation(&mut rng, &schema, 20).unwrap().distinct();
        let report = bounds::schema_upper_bound(&t, &r, 0.05, &t.default_order()).unwrap();
        let p = Distribution::empirical(&r).unwrap();
        let i = info::cond_mutual_info(&p, &["A"], &["B"], &["C"]).unwrap().nats();
        let eps = bounds::epsilon_star(MvdDims::new(5, 3, 2).unwrap(), r.len(), 0.05).unwrap().value;
        assert_eq!(report.mvds.len(), 1);
        assert!((report.mvds[0].i - i).abs() <= 1e-12);
        assert_eq!(report.mvds[0].epsilon, eps);
        assert!((report.upper_bound_sum_i - (i + eps)).abs() <= 1e-9);
        assert!((report.upper_bound_m_j - (report.j + eps)).abs() <= 1e-9);
    }
}

#[test]
fn sum_form_never_exceeds_the_m_j_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for case in 0..100 {
        let attrs = rng.random_range(2..=5);
        let k = rng.random_range(2..=4);
        let t = oracle::random_join_tree(&mut rng, k, attrs).unwrap();
        let schema = oracle::numbered_schema(&random_dims(&mut rng, attrs, 3));
        let r = oracle::random_relation(&mut rng, &schema, 25).unwrap().distinct();
        let report = bounds::schema_upper_bound(&t, &r, 0.1, &t.default_order()).unwrap();
        assert!(report.upper_bound_sum_i <= report.upper_bound_m_j + 1e-9, "case {case}");
        assert!(report.verdicts.deterministic_ok, "case {case}");
    }
}

#[test]
fn lossless_product_has_upper_bound_sum_of_epsilons() {
    let d = 20u32;
    let rows: Vec<Vec<u32>> =
        (0..d).flat_map(|a| (0..d).flat_map(move |b| (0..d).map(move |c| vec![a, b, c]))).collect();
    let r = Relation::from_rows(Schema::with_sizes(&[("A", d), ("B", d), ("C", d)]).unwrap(), rows).unwrap();
    let t = tree(&[&["A", "C"], &["B", "C"]], &[(0, 1)]);
    let report = bounds::schema_upper_bound(&t, &r, 0.1, &t.default_order()).unwrap();
    assert_eq!(report.rho, 0.0);
    assert!(report.j.abs() <= 1e-12);
    let eps: f64 = report.mvds.iter().map(|m| m.epsilon).sum();
    assert!(eps > 0.0);
    assert!((report.upper_bound_sum_i - eps).abs() <= 1e-9);
    assert!(report.verdicts.upper_bound_sum_i.pass && report.verdicts.upper_bound_m_j.pass);
}
