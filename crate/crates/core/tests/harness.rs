use std::collections::BTreeSet;

use fedscdg::explorer::{explore, Strategy};
use fedscdg::fedproto::AggregationMode;
use fedscdg::harness::*;
use fedscdg::scdg::{build_scdg, Scdg};
use proptest::prelude::*;

fn fake_graphs(labels: &[usize], source: usize) -> Vec<LabelledGraph> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| LabelledGraph {
            program: i,
            source,
            label,
            graph: Scdg::default(),
        })
        .collect()
}

fn family_count(g: &[LabelledGraph], f: usize) -> usize {
    g.iter().filter(|x| x.label == f).count()
}

/// Every family's count in `group` is the floor or ceiling of its share.
fn stratified(group: &[LabelledGraph], all: &[LabelledGraph], families: usize) -> bool {
    (0..families).all(|f| {
        let share = group.len() as f64 * family_count(all, f) as f64 / all.len() as f64;
        (family_count(group, f) as f64 - share).abs() < 1.0
    })
}

fn programs(g: &[LabelledGraph]) -> BTreeSet<(usize, usize)> {
    g.iter().map(|x| (x.source, x.program)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_homogeneous_split_sizes(labels in prop::collection::vec(0usize..4, 20..200), n in 1usize..5, seed in any::<u64>()) {
        let data = fake_graphs(&labels, 0);
        let split = split_dataset(&data, SplitScheme::Homogeneous, n, seed).unwrap();
        let test = (data.len() + 5) / 10;
        prop_assert_eq!(split.test.len(), 1);
        prop_assert_eq!(split.test[0].len(), test);
        prop_assert_eq!(split.train.len(), n);
        let mut seen = programs(&split.test[0]);
        for part in &split.train {
            prop_assert_eq!(part.len(), (data.len() - test) / n);
            prop_assert!(stratified(part, &data, 4));
            let ids = programs(part);
            prop_assert!(seen.is_disjoint(&ids));
            seen.extend(ids);
        }
        prop_assert!(stratified(&split.test[0], &data, 4));
        prop_assert!(data.len() - seen.len() < n);
    }

    #[test]
    fn prop_inhomogeneous_split_by_source(sizes in prop::collection::vec(4usize..60, 3), seed in any::<u64>()) {
        let mut data = Vec::new();
        for (k, &s) in sizes.iter().enumerate() {
            let labels: Vec<usize> = (0..s).map(|i| i % 3).collect();
            data.extend(fake_graphs(&labels, k));
        }
        let split = split_dataset(&data, SplitScheme::Inhomogeneous, 3, seed).unwrap();
        for k in 0..3 {
            let own: Vec<LabelledGraph> = data.iter().filter(|g| g.source == k).cloned().collect();
            prop_assert_eq!(split.test[k].len(), (own.len() + 2) / 4);
            prop_assert_eq!(split.train[k].len() + split.test[k].len(), own.len());
            prop_assert!(split.train[k].iter().chain(&split.test[k]).all(|g| g.source == k));
            prop_assert!(programs(&split.train[k]).is_disjoint(&programs(&split.test[k])));
            prop_assert!(stratified(&split.test[k], &own, 3));
        }
    }

    #[test]
    fn prop_accuracy_matches_count(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)) {
        let (y, y_hat): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut hits = 0;
        for (a, b) in &pairs {
            if a == b {
                hits += 1;
            }
        }
        prop_assert_eq!(accuracy(&y, &y_hat).unwrap(), hits as f64 / pairs.len() as f64);
    }

    #[test]
    fn prop_report_matches_scan(accs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 1..8), base in 0.0f64..=1.0) {
        let mut csv = format!("{CSV_HEADER}\n0,central,{base},full,homogeneous\n");
        for (r, row) in accs.iter().enumerate() {
            for (k, a) in row.iter().enumerate() {
                csv.push_str(&format!("{},{},{a},full,homogeneous\n", r + 1, k + 1));
            }
        }
        let s = report(&csv).unwrap();
        prop_assert_eq!(s.baseline, Some(base));
        prop_assert_eq!(s.curves.len(), 3);
        for (k, c) in s.curves.iter().enumerate() {
            let mut max = f64::MIN;
            for row in &accs {
                if row[k] > max {
                    max = row[k];
                }
            }
            prop_assert_eq!(c.final_accuracy, accs.last().unwrap()[k]);
            prop_assert_eq!(c.max_accuracy, max);
            prop_assert_eq!(c.points.len(), accs.len());
        }
    }
}

#[test]
fn test_motif_oracle_recovers_labels() {
    let specs = family_specs(5, 20, DEFAULT_NOISE, 9).unwrap();
    let motifs: Vec<BTreeSet<String>> = specs
        .iter()
        .map(|s| {
            let g = build_scdg(&explore(&s.motif, Strategy::Bfs, exhaustive_budget()).unwrap());
            node_keys(&g)
        })
        .collect();
    let programs = gen_programs(&specs, 9).unwrap();
    let graphs = extract_graphs(&programs, Strategy::Bfs, exhaustive_budget(), 0).unwrap();
    assert_eq!(graphs.len(), 100);
    let hits = graphs
        .iter()
        .filter(|g| {
            let keys = node_keys(&g.graph);
            let best = (0..motifs.len())
                .max_by_key(|&f| keys.intersection(&motifs[f]).count())
                .unwrap();
            best == g.label
        })
        .count();
    assert!(hits >= 95, "{hits} of 100");
}

fn node_keys(g: &Scdg) -> BTreeSet<String> {
    g.nodes().iter().map(|(n, a)| format!("{n}@{a:x}")).collect()
}

#[test]
fn test_generation_is_deterministic() {
    let a = gen_synthetic_dataset(3, 10, 5).unwrap();
    let b = gen_synthetic_dataset(3, 10, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, gen_synthetic_dataset(3, 10, 6).unwrap());
}

#[test]
fn test_noise_free_instances_are_identical() {
    let specs = family_specs(3, 6, 0.0, 2).unwrap();
    let programs = gen_programs(&specs, 2).unwrap();
    let graphs = extract_graphs(&programs, Strategy::Bfs, exhaustive_budget(), 0).unwrap();
    for f in 0..3 {
        let fam: Vec<&Scdg> = graphs.iter().filter(|g| g.label == f).map(|g| &g.graph).collect();
        assert_eq!(fam.len(), 6);
        assert!(fam.iter().all(|g| *g == fam[0]));
    }
    assert_ne!(graphs[0].graph, graphs[6].graph);
}

#[test]
fn test_noise_rate_bounds() {
    assert!(family_specs(3, 1, 1.0, 0).is_err());
    assert!(family_specs(1, 1, 0.1, 0).is_err());
}

#[test]
fn test_dataset_file_round_trip() {
    let data = gen_synthetic_dataset(2, 4, 3).unwrap();
    assert_eq!(read_dataset(&write_dataset(&data)).unwrap(), data);
    assert!(read_dataset("nonsense").is_err());
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.per_family = 20;
    cfg.hidden = 8;
    cfg.protocol.secure = false;
    cfg.protocol.rounds = 2;
    cfg
}

#[test]
fn test_zero_rounds_reports_initial_accuracy_only() {
    let mut cfg = small_config();
    cfg.protocol.rounds = 0;
    let exp = Experiment::prepare(cfg.clone()).unwrap();
    let mut csv = Vec::new();
    let out = exp.federated(&cfg.protocol, 0.5, &mut csv).unwrap();
    assert!(out.run.is_none());
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.reports[0].round, 0);
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 2 + 3);
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(text.lines().nth(1).unwrap(), "0,central,0.5,full,homogeneous");
}

#[test]
fn test_shared_test_set_gives_equal_initial_accuracy() {
    let cfg = small_config();
    let exp = Experiment::prepare(cfg.clone()).unwrap();
    let out = exp.federated(&cfg.protocol, 0.0, &mut Vec::new()).unwrap();
    let r0 = &out.reports[0].accuracies;
    assert!(r0.iter().all(|a| *a == r0[0]));
    assert_eq!(out.reports.len(), 3);
    assert!(out.run.unwrap().aborted_rounds().is_empty());
}

#[test]
fn test_full_mode_clients_agree_after_each_round() {
    // identical global parameters and a shared test set give one accuracy
    let mut cfg = small_config();
    cfg.protocol.local_epochs = 0;
    let exp = Experiment::prepare(cfg.clone()).unwrap();
    let out = exp.federated(&cfg.protocol, 0.0, &mut Vec::new()).unwrap();
    for r in &out.reports {
        assert!(r.accuracies.iter().all(|a| *a == r.accuracies[0]));
    }
}

#[test]
fn test_client_count_mismatch_is_config_error() {
    let cfg = small_config();
    let exp = Experiment::prepare(cfg.clone()).unwrap();
    let mut p = cfg.protocol.clone();
    p.n_clients = 2;
    assert!(matches!(exp.federated(&p, 0.0, &mut Vec::new()), Err(HarnessError::Config(_))));
}

#[test]
fn test_write_csv_skips_failed_evaluations() {
    let rows: Vec<Evaluation> = vec![
        (1, 0, Ok(0.25)),
        (1, 1, Err(HarnessError::EmptyInput)),
        (2, 0, Ok(0.5)),
    ];
    let mut out = Vec::new();
    let reports = write_csv(&mut out, &rows, 0.75, AggregationMode::Partly, SplitScheme::Inhomogeneous, 2).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].accuracies, vec![0.25]);
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("1,1,0.25,partly,inhomogeneous\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn test_inhomogeneous_budgets_shape_extraction() {
    let mut cfg = ExperimentConfig::default();
    cfg.scheme = SplitScheme::Inhomogeneous;
    cfg.per_family = 10;
    let graphs = generate_graphs(&cfg).unwrap();
    let per_source: Vec<usize> = (0..3).map(|k| graphs.iter().filter(|g| g.source == k).count()).collect();
    assert!(per_source.iter().all(|&c| c > 0 && c <= 50));
    // same programs, different extraction
    let a: BTreeSet<usize> = graphs.iter().filter(|g| g.source == 0).map(|g| g.program).collect();
    let b: BTreeSet<usize> = graphs.iter().filter(|g| g.source == 1).map(|g| g.program).collect();
    assert!(!a.is_disjoint(&b));
}
