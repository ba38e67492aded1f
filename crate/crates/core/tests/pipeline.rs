mod common;

use std::path::Path;

use common::{plain_pool, rule, table, write_json, write_lines, StubServer};
use fewshot_core::backend::GenerationParams;
use fewshot_core::backend::MockFallback;
use fewshot_core::metrics::{corpus_mean, FormalityLabel};
use fewshot_core::pipeline::{
    bucket_sweep, build_prompts, style_experiment, translate_testset, BackendSpec, PipelineError, RecordStatus,
    RunConfig, RunEnv, TestItem,
};
use fewshot_core::pool::{load_pool, CdsBucket, Demonstration, PoolError, StyleAxis};
use fewshot_core::prompt::extract_query;

fn mock_config(dir: &Path, pool: &[Demonstration], rules: Vec<fewshot_core::backend::MockRule>) -> RunConfig {
    write_lines(&dir.join("pool.jsonl"), pool);
    let mock = write_json(&dir.join("mock.json"), &table(rules));
    let mut cfg = RunConfig::new(dir.join("pool.jsonl"), BackendSpec::Mock { table: mock }, dir.join("out"));
    cfg.generation.num_samples = 4;
    cfg.rng_seed = 99;
    cfg
}

fn env(cfg: &RunConfig) -> RunEnv {
    RunEnv::from_config(cfg, &Default::default(), 2).unwrap()
}

#[test]
fn majority_candidate_wins_with_four_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        mock_config(dir.path(), &plain_pool(10), vec![rule("Danke", None, &[("Thank you", 3.0), ("Thanks", 1.0)])]);
    let items = vec![TestItem::new("Danke").with_reference("Thank you")];
    let out = translate_testset(&cfg, &items, &env(&cfg)).unwrap();
    let rec = &out.manifest.records[0];
    assert_eq!(rec.status, RecordStatus::Ok);
    assert_eq!(rec.candidates.len(), 4);
    assert_eq!(rec.demos.len(), 5);
    // the two strings share no token, so expected utility is the string's share
    let count = |s: &str| rec.candidates.iter().filter(|c| *c == s).count();
    let best = rec
        .candidates
        .iter()
        .max_by_key(|c| (count(c), std::cmp::Reverse(rec.candidates.iter().position(|x| x == *c))))
        .unwrap();
    assert_eq!(rec.selected.as_deref(), Some(best.as_str()));
    assert_eq!(rec.expected_utility, Some(count(best) as f64 / 4.0));
    for f in ["manifest.json", "records.jsonl", "report.json", "report.txt"] {
        assert!(cfg.output_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn beam_mode_bypasses_mbr() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg =
        mock_config(dir.path(), &plain_pool(10), vec![rule("Danke", None, &[("Thanks", 1.0), ("Thank you", 2.0)])]);
    cfg.generation = GenerationParams::beam();
    let out = translate_testset(&cfg, &[TestItem::new("Danke")], &env(&cfg)).unwrap();
    let rec = &out.manifest.records[0];
    assert_eq!(rec.candidates, vec!["Thank you"]);
    assert_eq!(rec.selected.as_deref(), Some("Thank you"));
    assert_eq!(rec.expected_utility, None);
}

#[test]
fn failures_are_recorded_and_thresholded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mock_config(dir.path(), &plain_pool(10), vec![rule("known", None, &[("ok", 1.0)])]);
    let items = vec![TestItem::new("known"), TestItem::new("unknown"), TestItem::new("known")];
    cfg.max_failure_rate = 0.5;
    let out = translate_testset(&cfg, &items, &env(&cfg)).unwrap();
    let statuses: Vec<_> = out.manifest.records.iter().map(|r| r.status).collect();
    assert_eq!(statuses, [RecordStatus::Ok, RecordStatus::Failed, RecordStatus::Ok]);
    assert!(out.manifest.records[1].error.as_deref().unwrap().contains("unknown"));
    assert_eq!(out.manifest.report.failed, 1);
    assert_eq!(out.exit_code(), 0);

    cfg.max_failure_rate = 0.0;
    let out = translate_testset(&cfg, &items, &env(&cfg)).unwrap();
    assert_eq!(out.exit_code(), 3);
}

#[test]
fn demos_depend_only_on_seed_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let mut table_rules = Vec::new();
    let items: Vec<TestItem> = (0..6).map(|i| TestItem::new(format!("q{i}"))).collect();
    for i in 0..6 {
        table_rules.push(rule(&format!("q{i}"), None, &[("a", 1.0)]));
    }
    let cfg = mock_config(dir.path(), &plain_pool(30), table_rules);
    let pool = load_pool(&cfg.pool).unwrap();
    let all = build_prompts(&pool, &cfg.selection, &cfg.pair, cfg.rng_seed, &items).unwrap();
    let run = translate_testset(&cfg, &items, &env(&cfg)).unwrap();
    for (p, r) in all.iter().zip(&run.manifest.records) {
        assert_eq!(p.meta.demos, r.demos.iter().map(|d| d.pool_index).collect::<Vec<_>>());
        assert_eq!(Some(&p.meta.prompt_hash), r.prompt_hash.as_ref());
        assert_eq!(extract_query(&p.prompt), Some(r.source.as_str()));
    }
    // dropping the last sentence leaves the others untouched
    let fewer = build_prompts(&pool, &cfg.selection, &cfg.pair, cfg.rng_seed, &items[..5]).unwrap();
    assert_eq!(fewer[..], all[..5]);
    // a different seed draws different demos somewhere
    let other = build_prompts(&pool, &cfg.selection, &cfg.pair, cfg.rng_seed + 1, &items).unwrap();
    assert_ne!(other, all);
}

#[test]
fn report_matches_recomputation_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let rules = (0..8)
        .map(|i| rule(&format!("s{i}"), None, &[(&format!("out {i} x"), 1.0), (&format!("out {i}"), 1.0)]))
        .collect();
    let cfg = mock_config(dir.path(), &plain_pool(10), rules);
    let items: Vec<TestItem> =
        (0..8).map(|i| TestItem::new(format!("s{i}")).with_reference(format!("out {i}"))).collect();
    let out = translate_testset(&cfg, &items, &env(&cfg)).unwrap();
    let scores: Vec<f64> = out.manifest.records.iter().filter_map(|r| r.scores.quality).collect();
    assert_eq!(scores.len(), 8);
    assert_eq!(out.manifest.report.quality, Some(corpus_mean(&scores).unwrap()));
    let on_disk: Vec<serde_json::Value> = std::fs::read_to_string(cfg.output_dir.join("records.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(on_disk.len(), 8);
}

fn cds_pool(buckets: &[(f64, usize)]) -> Vec<Demonstration> {
    let mut pool = Vec::new();
    for &(cds, n) in buckets {
        for i in 0..n {
            pool.push(Demonstration::new(format!("Satz {cds} {i}"), format!("Sentence {i}")).with_cds(cds));
        }
    }
    pool
}

#[test]
fn sweep_control_gives_equal_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(
        dir.path(),
        &cds_pool(&[(0.1, 6), (0.5, 6), (0.9, 6)]),
        vec![rule("Hallo", None, &[("Hello there", 1.0)])],
    );
    let items = vec![TestItem::new("Hallo").with_reference("Hello")];
    let sweep = bucket_sweep(&cfg, &items, &env(&cfg)).unwrap();
    let q: Vec<_> = sweep.buckets.iter().map(|b| b.report.quality).collect();
    assert_eq!(sweep.buckets.iter().map(|b| b.bucket).collect::<Vec<_>>(), CdsBucket::ALL);
    assert!(q.iter().all(|x| *x == q[0]));
    assert!(sweep.render().starts_with("CDS bucket"));
    assert!(cfg.output_dir.join("high/manifest.json").is_file());
}

#[test]
fn sweep_reports_the_short_bucket() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(
        dir.path(),
        &cds_pool(&[(0.1, 6), (0.5, 6), (0.9, 2)]),
        vec![rule("Hallo", None, &[("Hello", 1.0)])],
    );
    let err = bucket_sweep(&cfg, &[TestItem::new("Hallo")], &env(&cfg)).unwrap_err();
    match err {
        PipelineError::Pool(PoolError::InsufficientPool { filter, available, requested }) => {
            assert_eq!((filter.as_str(), available, requested), ("cds=high", 2, 5));
        }
        other => panic!("{other}"),
    }
    assert_eq!(bucket_sweep(&cfg, &[TestItem::new("Hallo")], &env(&cfg)).unwrap_err().exit_code(), 1);
}

#[test]
fn style_experiment_needs_tags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), &plain_pool(10), vec![rule("Hallo", None, &[("Hello", 1.0)])]);
    let err =
        style_experiment(&cfg, &[TestItem::new("Hallo")], &env(&cfg), StyleAxis::Formality, "formal").unwrap_err();
    assert!(matches!(err, PipelineError::Pool(PoolError::MissingMetadata("formality"))), "{err}");
}

#[test]
fn formality_matched_versus_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let mut pool = Vec::new();
    for i in 0..6 {
        pool.push(
            Demonstration::new(format!("Can you help {i}?"), format!("Können Sie helfen {i}?"))
                .with_formality("formal"),
        );
        pool.push(
            Demonstration::new(format!("Can you help {i}?"), format!("Kannst du helfen {i}?"))
                .with_formality("informal"),
        );
    }
    let rules = vec![
        rule("Do you have time?", Some("Sie"), &[("Haben Sie Zeit?", 1.0)]),
        rule("Do you have time?", Some("du"), &[("Hast du Zeit?", 1.0)]),
    ];
    let mut cfg = mock_config(dir.path(), &pool, rules);
    cfg.pair = fewshot_core::LanguagePair::new("English", "German").unwrap();
    let mut item = TestItem::new("Do you have time?");
    item.formal_ref = Some("Haben [Sie] Zeit?".into());
    item.informal_ref = Some("Hast [du] Zeit?".into());
    item.reference = Some("Haben Sie Zeit?".into());
    let report = style_experiment(&cfg, &[item], &env(&cfg), StyleAxis::Formality, "formal").unwrap();
    let m = report.matched.formality.as_ref().unwrap();
    let mm = report.mismatched.formality.as_ref().unwrap();
    assert_eq!((m.accuracy, mm.accuracy), (1.0, 0.0));
    assert_eq!(mm.informal, 1);
    assert!(report.render().contains("formality acc."));
    assert_eq!(cfg.evaluation.formality, None::<FormalityLabel>);
}

#[test]
fn identical_outputs_give_equal_style_quality() {
    let dir = tempfile::tempdir().unwrap();
    let pool: Vec<Demonstration> = (0..12)
        .map(|i| {
            Demonstration::new(format!("s{i}"), format!("t{i}")).with_formality(if i % 2 == 0 {
                "formal"
            } else {
                "informal"
            })
        })
        .collect();
    let cfg = mock_config(dir.path(), &pool, vec![rule("Hallo", None, &[("Hello", 1.0)])]);
    let mut item = TestItem::new("Hallo").with_reference("Hello");
    item.formal_ref = Some("[Guten Tag]".into());
    item.informal_ref = Some("[Hallo]".into());
    let r = style_experiment(&cfg, &[item], &env(&cfg), StyleAxis::Formality, "informal").unwrap();
    assert_eq!(r.matched.quality, r.mismatched.quality);
}

#[test]
fn echo_fallback_and_empty_pool_filter() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mock_config(dir.path(), &plain_pool(3), vec![]);
    let mut t = table(vec![]);
    t.fallback = MockFallback::Echo;
    write_json(&dir.path().join("mock.json"), &t);
    let err = translate_testset(&cfg, &[TestItem::new("x")], &env(&cfg)).unwrap_err();
    assert!(matches!(err, PipelineError::Pool(PoolError::InsufficientPool { available: 3, requested: 5, .. })));
    cfg.selection.k = 3;
    let out = translate_testset(&cfg, &[TestItem::new("Guten Tag")], &env(&cfg)).unwrap();
    assert_eq!(out.manifest.records[0].selected.as_deref(), Some("Guten Tag"));
}

#[test]
fn http_backend_run_against_stub() {
    let dir = tempfile::tempdir().unwrap();
    let server = StubServer::start(|_, req| {
        let n = req.json()["num_samples"].as_u64().unwrap() as usize;
        let c: Vec<String> = (0..n).map(|i| if i % 3 == 0 { "Hello".into() } else { "Hello friend".into() }).collect();
        (200, serde_json::json!({ "candidates": c }).to_string())
    });
    write_lines(&dir.path().join("pool.jsonl"), &plain_pool(8));
    let mut cfg = RunConfig::new(
        dir.path().join("pool.jsonl"),
        BackendSpec::Http { url: Some(server.url.clone()) },
        dir.path().join("out"),
    );
    cfg.generation.num_samples = 6;
    let env = RunEnv::from_config(&cfg, &Default::default(), 1).unwrap();
    let out = translate_testset(&cfg, &[TestItem::new("Hallo Freund")], &env).unwrap();
    assert_eq!(out.manifest.records[0].selected.as_deref(), Some("Hello friend"));
    // health probe plus one generate call
    assert_eq!(server.requests().len(), 2);
}
