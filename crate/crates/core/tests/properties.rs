use std::collections::{BTreeMap, BTreeSet};

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use rfbn_core::features::{Feature, FeatureVector, N_FEATURES};
use rfbn_core::pipeline::*;
use rfbn_core::votemodel::{VoteModel, VoteModelConfig};

fn record(id: String, log_joint: f64, period: Option<f64>) -> CandidateRecord {
    let mut c = CandidateRecord::empty(id);
    c.log_joint = log_joint;
    c.score = score_from_log_joint(log_joint);
    c.period = period;
    c.votes = vec![0.5, 0.5];
    c
}

fn candidates(max: usize) -> impl Strategy<Value = Vec<CandidateRecord>> {
    prop::collection::vec((0u32..40, -30.0f64..0.0, prop::option::of(0.2f64..400.0)), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (name, lj, p))| record(format!("o{name}-{i}"), (lj * 4.0).round() / 4.0, p))
            .collect()
    })
}

fn vote_rows(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0u32..10, k), 5..60).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let total: u32 = r.iter().sum::<u32>() + 1;
                let mut v: Vec<f64> = r.iter().map(|&c| c as f64 / total as f64).collect();
                v[0] += 1.0 / total as f64;
                v
            })
            .collect()
    })
}

fn assignments(k: usize, bins: usize) -> Vec<Vec<u16>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|p| (0..bins as u16).map(move |b| [p.clone(), vec![b]].concat()))
            .collect();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joint_sums_to_one(votes in vote_rows(3), bins in 2usize..5, parents in 0usize..3, alpha in 0.5f64..6.0) {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let cfg = VoteModelConfig { n_bins: bins, max_parents: parents, alpha, ..Default::default() };
        let (m, _) = VoteModel::fit(&votes, &names, &cfg).unwrap();
        let total: f64 = assignments(3, bins).iter().map(|a| m.log_joint_bins(a).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }

    #[test]
    fn score_is_monotone_in_log_joint(a in -700.0f64..0.0, b in -700.0f64..0.0) {
        let (sa, sb) = (score_from_log_joint(a), score_from_log_joint(b));
        prop_assert!((0.0..1.0).contains(&sa));
        if a < b {
            prop_assert!(sa >= sb);
        }
    }

    #[test]
    fn ranks_are_a_permutation_in_rank_order(mut cands in candidates(80)) {
        assign_ranks(&mut cands);
        let ranks: Vec<usize> = cands.iter().map(|c| c.rank).collect();
        prop_assert_eq!(ranks, (1..=cands.len()).collect::<Vec<_>>());
        for w in cands.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
            prop_assert!(w[0].log_joint <= w[1].log_joint);
            if w[0].log_joint == w[1].log_joint {
                prop_assert!(w[0].object_id < w[1].object_id);
            }
        }
    }

    #[test]
    fn ranking_ignores_input_order(mut cands in candidates(60), seed in any::<u64>()) {
        let mut shuffled = cands.clone();
        let n = shuffled.len();
        if n > 1 {
            for i in 0..n {
                let j = (seed.wrapping_mul(i as u64 + 7) % n as u64) as usize;
                shuffled.swap(i, j);
            }
        }
        assign_ranks(&mut cands);
        assign_ranks(&mut shuffled);
        prop_assert_eq!(cands, shuffled);
    }

    #[test]
    fn alias_filter_only_removes(cands in candidates(60), tol in 0.001f64..0.05) {
        let before: BTreeSet<String> = cands.iter().map(|c| c.object_id.clone()).collect();
        let (kept, tally) = alias_filter(cands.clone(), &AliasConfig { tolerance: tol }).unwrap();
        prop_assert!(kept.len() <= cands.len());
        prop_assert_eq!(tally.input, cands.len());
        prop_assert_eq!(tally.kept + tally.removed.len(), tally.input);
        prop_assert!(kept.iter().all(|c| before.contains(&c.object_id)));
        let pos: Vec<usize> = kept
            .iter()
            .map(|k| cands.iter().position(|c| c.object_id == k.object_id).unwrap())
            .collect();
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cross_band_filter_only_removes(mut blue in candidates(40), mut red in candidates(40), depth in 1usize..50) {
        assign_ranks(&mut blue);
        assign_ranks(&mut red);
        let (kept, tally) = cross_band_filter(blue.clone(), &red, Depth::Absolute(depth)).unwrap();
        let top: BTreeSet<&str> = red.iter().filter(|c| c.rank <= depth).map(|c| c.object_id.as_str()).collect();
        prop_assert!(kept.iter().all(|c| top.contains(c.object_id.as_str())));
        prop_assert_eq!(tally.kept, kept.len());
        prop_assert_eq!(tally.kept + tally.removed.len(), blue.len());
        let (all, _) = cross_band_filter(blue.clone(), &red, Depth::Unlimited).unwrap();
        prop_assert_eq!(all, blue);
    }

    #[test]
    fn candidate_csv_round_trips(mut cands in candidates(30)) {
        assign_ranks(&mut cands);
        for (i, c) in cands.iter_mut().enumerate() {
            let mut v = [0.0; N_FEATURES];
            v.iter_mut().enumerate().for_each(|(j, x)| *x = (i * 13 + j) as f64 * 0.37 - 2.0);
            if let Some(p) = c.period {
                v[Feature::Period as usize] = p;
            }
            c.features = FeatureVector::from_values(v);
            c.period = c.features.get(Feature::Period);
            c.run_id = "score-abc".into();
            if i % 3 == 0 {
                c.triage_label = TriageState::Artifact("streak".into());
            }
        }
        let classes = vec!["x".to_string(), "y".to_string()];
        let mut buf = Vec::new();
        write_candidates(&mut buf, &classes, &cands).unwrap();
        let (cls, back) = read_candidates(buf.as_slice()).unwrap();
        prop_assert_eq!(cls, classes);
        prop_assert_eq!(back, cands);
    }

    #[test]
    fn label_log_replay_matches_last_writer(ops in prop::collection::vec((0usize..6, 0usize..5), 0..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let decisions = ["interesting", "skip", "artifact:streak", "artifact:edge", "known:rrlyr"];
        let mut expected = BTreeMap::new();
        for (i, (obj, d)) in ops.iter().enumerate() {
            let label = TriageLabel {
                object_id: format!("obj{obj}"),
                decision: decisions[*d].parse().unwrap(),
                reviewer: "r".into(),
                timestamp: Utc.timestamp_opt(1_700_000_000 + i as i64, 0).unwrap(),
                run_id: "score-1".into(),
            };
            append_label(&path, &label).unwrap();
            expected.insert(label.object_id.clone(), TriageState::from(&label.decision));
        }
        let log = read_labels(&path).unwrap();
        prop_assert_eq!(log.len(), ops.len());
        prop_assert_eq!(replay(&log), expected);
    }

    #[test]
    fn angular_separation_is_a_metric(ra1 in 0.0f64..360.0, d1 in -90.0f64..90.0, ra2 in 0.0f64..360.0, d2 in -90.0f64..90.0) {
        let s = angular_separation_deg(ra1, d1, ra2, d2);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&s));
        prop_assert!((s - angular_separation_deg(ra2, d2, ra1, d1)).abs() < 1e-9);
        prop_assert!(angular_separation_deg(ra1, d1, ra1, d1).abs() < 1e-9);
    }

    #[test]
    fn undersized_groups_counts_distinct_members(sizes in prop::collection::vec(0usize..9, 1..5), min in 1usize..8) {
        let groups: Vec<ArtifactGroup> = sizes
            .iter()
            .enumerate()
            .map(|(g, &n)| ArtifactGroup::new(format!("g{g}"), (0..n).flat_map(|i| [format!("m{i}"), format!("m{i}")]).collect()))
            .collect();
        let small = undersized_groups(&groups, min);
        let expected: Vec<(String, usize)> = sizes
            .iter()
            .enumerate()
            .filter(|(_, &n)| n < min)
            .map(|(g, &n)| (format!("g{g}"), n))
            .collect();
        prop_assert_eq!(small, expected);
    }
}
