//! Every primary acceptance criterion, one PASS/FAIL line each.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use editimpact_core::assoc::TablePairScorer;
use editimpact_core::config::PipelineConfig;
use editimpact_core::corpus::{tokenize, DependencyTree, Language, Sentence, SentencePair};
use editimpact_core::edits::{extract_edits, Edit, EditOp, EditSet, Span};
use editimpact_core::eval::{s_bound, s_rank, EditLabel, EvalConfig, LabeledRanking};
use editimpact_core::merge::{
    build_graph, connected_components, singletons, EditGroup, MergeConfig,
};
use editimpact_core::pipeline::run_pipeline;
use editimpact_core::rank::{rank_ours_traced, rank_random, Affine, Ranker, StubScorer};
use editimpact_core::toy::write_workspace;

use common::fixtures::{all_rankings, instance, random_tree};
use common::{
    brute_s_bound, brute_s_rank, gradient_check, mining_oracle, mutated_pair, random_edges,
    random_partition, random_transactions, rng, round_trips, small_corpus_config,
    synthetic_learning, union_find_groups, HashScorer,
};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);
type StepOne = (Vec<usize>, Vec<(usize, f64)>);

fn check(ok: bool, why: impl FnOnce() -> String) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    check(elapsed < limit, || {
        format!("took {elapsed:?}, limit {limit:?}")
    })
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = EvalConfig::default();
    for k in 1..=8usize {
        for mask in 0u32..(1 << k) {
            let bits: Vec<bool> = (0..k).map(|i| mask >> i & 1 == 1).collect();
            let labels = bits
                .iter()
                .map(|&c| {
                    if c {
                        EditLabel::Corrected
                    } else {
                        EditLabel::Reasonable
                    }
                })
                .collect();
            let lr = LabeledRanking::new(labels).map_err(|e| e.to_string())?;
            let (b, r) = (s_bound(&lr), s_rank(&lr, &cfg));
            check((b - brute_s_bound(&bits)).abs() <= 1e-12, || {
                format!("s_bound {bits:?}")
            })?;
            check(
                (r - brute_s_rank(&bits, cfg.epsilon)).abs() <= 1e-12,
                || format!("s_rank {bits:?}"),
            )?;
        }
    }
    within(start.elapsed(), Duration::from_secs(1))
}

fn stub_step_one(
    scorer: &StubScorer,
    source: &Sentence,
    set: &EditSet,
    groups: &[EditGroup],
) -> Result<StepOne, String> {
    let (out, trace) = rank_ours_traced(scorer, source, set, groups).map_err(|e| e.to_string())?;
    Ok((out.edit_order(), trace[0].clone()))
}

fn worked_examples() -> Outcome {
    // two-edit English sentence: tense then lexical choice
    let en = Language::En;
    let pair = SentencePair::new(
        "t7",
        "I have finish my task .",
        "I have finished my homework .",
        en,
    );
    let set = extract_edits(&pair.source, &pair.target);
    check(set.len() == 2, || {
        format!("expected 2 edits, got {}", set.len())
    })?;
    let scorer = StubScorer::new()
        .with("I have finish my task .", en, 1391.3)
        .with("I have finish my homework .", en, 1165.1)
        .with("I have finished my task .", en, 224.9)
        .with("I have finished my homework .", en, 180.5);
    let (order, step) = stub_step_one(&scorer, &pair.source, &set, &singletons(2))?;
    check(order == vec![0, 1], || format!("order {order:?}"))?;
    let delta = |g: usize| {
        step.iter()
            .find(|c| c.0 == g)
            .map(|c| c.1)
            .unwrap_or(f64::NAN)
    };
    check((delta(0) - 1166.4).abs() <= 1e-9, || {
        format!("tense delta {}", delta(0))
    })?;
    check((delta(1) - 226.2).abs() <= 1e-9, || {
        format!("lexical delta {}", delta(1))
    })?;

    // German separable verb: stem and particle
    let de = Language::De;
    let pair = SentencePair::new(
        "t6",
        "Er fang die Arbeit am .",
        "Er fängt die Arbeit an .",
        de,
    );
    let set = extract_edits(&pair.source, &pair.target);
    check(set.len() == 2, || {
        format!("expected 2 edits, got {}", set.len())
    })?;
    let scorer = StubScorer::new()
        .with("Er fang die Arbeit am .", de, 1312.5)
        .with("Er fängt die Arbeit am .", de, 155.1)
        .with("Er fang die Arbeit an .", de, 1736.0)
        .with("Er fängt die Arbeit an .", de, 112.8);
    let merged = [EditGroup {
        members: vec![0, 1],
    }];
    let (_, step) = stub_step_one(&scorer, &pair.source, &set, &merged)?;
    check(step[0].1 == 1199.7, || {
        format!("merged delta {}", step[0].1)
    })?;
    let (_, step) = stub_step_one(&scorer, &pair.source, &set, &singletons(2))?;
    let prefix = step
        .iter()
        .find(|c| c.0 == 1)
        .map(|c| c.1)
        .unwrap_or(f64::NAN);
    check(prefix == -423.5, || format!("prefix-only delta {prefix}"))
}

fn edit_round_trip() -> Outcome {
    let start = Instant::now();
    for (seed, lang) in [(1, Language::En), (2, Language::Zh)] {
        let mut r = rng(seed);
        for id in 0..1000 {
            let pair = mutated_pair(&mut r, id, lang);
            check(round_trips(&pair), || {
                format!("{lang:?} pair {id} did not round trip")
            })?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))
}

fn mining() -> Outcome {
    let cfg = small_corpus_config();
    let mut r = rng(5);
    for i in 0..100 {
        let ts = random_transactions(&mut r);
        let got: std::collections::BTreeMap<_, _> = editimpact_core::mining::mine_pairs(&ts, &cfg)
            .map_err(|e| e.to_string())?
            .pairs
            .into_iter()
            .map(|a| ((a.item_a, a.item_b), a.stats))
            .collect();
        check(got == mining_oracle(&ts, &cfg), || {
            format!("corpus {i} differs")
        })?;
    }
    Ok(())
}

fn components() -> Outcome {
    let mut r = rng(9);
    for i in 0..1000 {
        let n = rand::Rng::gen_range(&mut r, 0..=50);
        let edges = random_edges(&mut r, n);
        let got: Vec<Vec<usize>> = connected_components(n, &edges)
            .into_iter()
            .map(|g| g.members)
            .collect();
        check(got == union_find_groups(n, &edges), || {
            format!("graph {i} differs")
        })?;
    }
    Ok(())
}

fn gradients() -> Outcome {
    for probe in 0..12 {
        let err = gradient_check(probe, 7, 5, probe % 2 == 1);
        check(err <= 1e-4, || {
            format!("probe {probe}: relative error {err}")
        })?;
    }
    Ok(())
}

fn synthetic() -> Outcome {
    let start = Instant::now();
    let res = synthetic_learning(1);
    check(res.epochs <= 30, || format!("{} epochs", res.epochs))?;
    check(res.auc >= 0.95, || format!("auc {}", res.auc))?;
    within(start.elapsed(), Duration::from_secs(60))
}

fn affine() -> Outcome {
    let mut r = rng(21);
    for i in 0..100 {
        let (pair, set) = instance(&mut r, 1);
        let groups = random_partition(&mut r, set.len());
        let tree = random_tree(&mut r, pair.target.len());
        let base = all_rankings(&HashScorer, &pair.source, &set, &groups, tree.as_ref());
        for scale in [0.5, 2.0, 10.0] {
            for offset in [-5.0, 0.0, 7.0] {
                let mapped = Affine {
                    inner: HashScorer,
                    scale,
                    offset,
                };
                let got = all_rankings(&mapped, &pair.source, &set, &groups, tree.as_ref());
                check(got == base, || {
                    format!("instance {i}, a={scale} b={offset}")
                })?;
            }
        }
    }
    Ok(())
}

fn random_calibration() -> Outcome {
    let src = tokenize("a . b . c . d . e . f", Language::En);
    let tgt = tokenize("u . v . w . x . y . z", Language::En);
    let set = extract_edits(&src, &tgt);
    check(set.len() == 6, || {
        format!("expected 6 edits, got {}", set.len())
    })?;
    let labels: Vec<EditLabel> = (0..6)
        .map(|i| {
            if i % 2 == 0 {
                EditLabel::Corrected
            } else {
                EditLabel::Reasonable
            }
        })
        .collect();
    let cfg = EvalConfig::default();
    let runs = 10_000u64;
    let mut total = 0.0;
    for seed in 0..runs {
        let out = rank_random(&set, seed);
        let lr =
            LabeledRanking::from_edit_rank(&labels, &out.edit_rank).map_err(|e| e.to_string())?;
        total += s_rank(&lr, &cfg);
    }
    let mean = total / runs as f64;
    check((mean - 0.5).abs() <= 0.02, || format!("mean S_rank {mean}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_path = write_workspace(dir.path(), 400, 200, 7).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::load(&cfg_path).map_err(|e| e.to_string())?;
    let summary = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    check(summary.pairs >= 200, || format!("{} pairs", summary.pairs))?;
    let report = summary.report.ok_or("no report")?;
    let ours = &report.per_ranker[&Ranker::Ours];
    let vanilla = &report.per_ranker[&Ranker::Vanilla];
    check(ours.s_bound_mean > vanilla.s_bound_mean, || {
        format!(
            "S_bound ours {} vs vanilla {}",
            ours.s_bound_mean, vanilla.s_bound_mean
        )
    })?;
    check(ours.s_rank_mean > vanilla.s_rank_mean, || {
        format!(
            "S_rank ours {} vs vanilla {}",
            ours.s_rank_mean, vanilla.s_rank_mean
        )
    })?;
    within(start.elapsed(), Duration::from_secs(300))
}

fn dependency_gate() -> Outcome {
    // "If you look at the map , the reason for this path is clear ."
    let heads = vec![3, 3, 13, 3, 6, 4, 13, 9, 13, 9, 12, 10, 0, 13, 13];
    let rels = [
        "mark", "nsubj", "advcl", "prep", "det", "pobj", "punct", "det", "nsubj", "prep", "det",
        "pobj", "root", "acomp", "punct",
    ];
    let tree = DependencyTree::new(heads, rels.iter().map(|s| s.to_string()).collect(), "gate")
        .map_err(|e| e.to_string())?;
    let edit = |at: usize, from: &str, to: &str| Edit {
        op: EditOp::Substitute,
        src_span: Span::new(at, at + 1),
        tgt_span: Span::new(at, at + 1),
        src_text: from.into(),
        tgt_text: to.into(),
    };
    let set = EditSet {
        edits: vec![edit(2, "see", "look"), edit(9, "of", "for")],
    };
    let scorer = TablePairScorer::new(0.0).with("~look", "~for", 0.9);
    let merges = |delta_dep: usize| -> Result<usize, String> {
        let cfg = MergeConfig {
            tau: 0.6,
            delta_seq: 8,
            delta_dep,
        };
        let g = build_graph(&set, Language::En, &scorer, &cfg, Some(&tree))
            .map_err(|e| e.to_string())?;
        Ok(g.edges.len())
    };
    let (two, three) = (merges(2)?, merges(3)?);
    check(two == 0, || format!("{two} edges at delta_dep 2"))?;
    check(three == 1, || format!("{three} edges at delta_dep 3"))
}

fn read_tree(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        files.push((
            p.file_name().unwrap().to_string_lossy().into_owned(),
            fs::read(&p)?,
        ));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = write_workspace(dir.path(), 150, 40, 1).map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["run1", "run2"] {
        let out = dir.path().join(name);
        let r = Command::new(env!("CARGO_BIN_EXE_editimpact"))
            .env("RUST_LOG", "off")
            .args(["pipeline", "--seed", "7", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        check(r.status.success(), || {
            String::from_utf8_lossy(&r.stderr).into_owned()
        })?;
        runs.push(read_tree(&out).map_err(|e| e.to_string())?);
    }
    check(!runs[0].is_empty(), || "no artifacts".into())?;
    check(runs[0] == runs[1], || {
        "artifacts differ between runs".into()
    })
}

#[test]
fn primary_criteria() {
    let criteria: [Criterion; 12] = [
        ("metric oracle", metric_oracle),
        ("worked examples", worked_examples),
        ("edit round trip", edit_round_trip),
        ("mining oracle", mining),
        ("components oracle", components),
        ("gradient check", gradients),
        ("synthetic learning", synthetic),
        ("affine invariance", affine),
        ("random calibration", random_calibration),
        ("end-to-end separation", end_to_end),
        ("dependency gate", dependency_gate),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        // bypass libtest capture so the lines reach the log
        let mut err = std::io::stderr().lock();
        match outcome {
            Ok(()) => writeln!(err, "PASS {name} ({secs:.2}s)").unwrap(),
            Err(why) => {
                writeln!(err, "FAIL {name} ({secs:.2}s): {why}").unwrap();
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
