use std::fs;
use std::path::{Path, PathBuf};

use stancekit::agreement::Kappa;
use stancekit::corpus::{load_jsonl, save_jsonl, Annotation, Dataset, Instance};
use stancekit::synthetic::{generate_split, SyntheticConfig};
use stancekit::StanceLabel::{self, *};
use stancekit_cli::*;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn instance(id: &str, labels: &[StanceLabel]) -> Instance {
    Instance {
        id: id.into(),
        query: "q".into(),
        title: "t".into(),
        content: format!("document {id}"),
        summary: None,
        annotations: labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Annotation::stance(format!("a_{}", i + 1), l))
            .collect(),
        split: None,
    }
}

fn write(dir: &Path, name: &str, instances: Vec<Instance>) -> PathBuf {
    let path = dir.join(name);
    save_jsonl(&Dataset::new(instances), &path).unwrap();
    path
}

fn run_cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("stancekit").chain(args.iter().copied()))
}

#[test]
fn preprocess_clean_file_keeps_everything() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.jsonl", vec![instance("1", &[Pro, Pro, Against]), instance("2", &[Neutral; 3])]);
    let out = dir.path().join("out.jsonl");
    let report = cmd_preprocess(&input, &out).unwrap();
    assert_eq!(report.removed(), 0);
    assert_eq!(fs::read(&input).unwrap(), fs::read(&out).unwrap());
}

#[test]
fn preprocess_all_no_majority_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "in.jsonl",
        vec![instance("1", &[Pro, Against, Neutral]), instance("2", &[Pro, Against])],
    );
    let out = dir.path().join("out.jsonl");
    let report = cmd_preprocess(&input, &out).unwrap();
    assert_eq!((report.no_majority, report.kept), (2, 0));
    assert!(fs::read_to_string(&out).unwrap().is_empty());
}

#[test]
fn agreement_on_unanimous_and_two_annotator_files() {
    let dir = tempfile::tempdir().unwrap();
    let unanimous = write(
        dir.path(),
        "u.jsonl",
        vec![instance("1", &[Pro; 3]), instance("2", &[Against; 3]), instance("3", &[NotAbout; 3])],
    );
    let r = cmd_agreement(&unanimous).unwrap();
    assert!((r.fleiss_kappa.unwrap().value().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(r.full_agreement_rate, 1.0);

    let pairs = write(
        dir.path(),
        "p.jsonl",
        vec![instance("1", &[Pro, Pro]), instance("2", &[Pro, Against]), instance("3", &[Neutral, Neutral])],
    );
    let r = cmd_agreement(&pairs).unwrap();
    assert_eq!(r.n_raters_per_item, Some(2));
    assert!(matches!(r.fleiss_kappa, Some(Kappa::Value(_))));
    assert_eq!(r.pairwise_cohen.len(), 1);
    assert_eq!(r.pairwise_cohen[0].shared_items, 3);
}

#[test]
fn augment_with_mock_matches_expected_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("llmd.jsonl");
    let audit = dir.path().join("audit.jsonl");
    let report_path = dir.path().join("report.json");
    let code = run_cli(&[
        "augment",
        fixture("augment/hd.jsonl").to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--audit",
        audit.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
        "--mock",
        fixture("augment/transcript.json").to_str().unwrap(),
        "--summary-threshold",
        "12",
        "--backoff-ms",
        "0",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(
        fs::read_to_string(&out).unwrap(),
        fs::read_to_string(fixture("augment/expected_llmd.jsonl")).unwrap()
    );

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["input"], 5);
    assert_eq!(report["skipped"], 1);
    assert_eq!(report["summarized"], 1);
    assert_eq!(report["written"], 3);
    assert_eq!(report["flagged"][0]["instance_id"], "d3");
    assert_eq!(report["maj_lm"]["d1"], "pro");
    assert_eq!(report["maj_lm"]["d2"], "neutral");
    assert_eq!(report["maj_lm"]["d4"], "against");
    assert!(report["maj_lm"].get("d3").is_none());

    let audit: Vec<serde_json::Value> = fs::read_to_string(&audit)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // one summary plus three annotators for each of d1..d4
    assert_eq!(audit.len(), 13);
    let d3_2 = audit
        .iter()
        .find(|r| r["instance_id"] == "d3" && r["annotator_id"] == "lm_2")
        .unwrap();
    assert_eq!(d3_2["raw_reply"], "Pro, but also Against");
    assert!(d3_2["error"].as_str().unwrap().contains("several labels"));
    let d4_1 = audit
        .iter()
        .find(|r| r["instance_id"] == "d4" && r["annotator_id"] == "lm_1")
        .unwrap();
    assert_eq!(d4_1["attempts"], 2);
}

#[test]
fn augment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let outputs: Vec<String> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("llmd{i}.jsonl"));
            let opts = AugmentOptions {
                input: fixture("augment/hd.jsonl"),
                output: out.clone(),
                audit: dir.path().join(format!("audit{i}.jsonl")),
                mock: Some(fixture("augment/transcript.json")),
                endpoint: stancekit::llmclient::EndpointConfig {
                    backoff_initial: std::time::Duration::ZERO,
                    backoff_max: std::time::Duration::ZERO,
                    ..Default::default()
                },
                models: Vec::new(),
                annotators: 3,
                summary_threshold: 12,
            };
            cmd_augment(&opts).unwrap();
            fs::read_to_string(out).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn unreachable_endpoint_is_an_external_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.jsonl", vec![instance("1", &[Pro; 3])]);
    let code = run_cli(&[
        "augment",
        input.to_str().unwrap(),
        "-o",
        dir.path().join("o.jsonl").to_str().unwrap(),
        "--audit",
        dir.path().join("a.jsonl").to_str().unwrap(),
        "--base-url",
        "http://127.0.0.1:1/v1",
        "--max-retries",
        "0",
        "--timeout-secs",
        "5",
    ]);
    assert_eq!(code, EXIT_EXTERNAL);
}

#[test]
fn textmetrics_tables() {
    let dir = tempfile::tempdir().unwrap();
    let refs = dir.path().join("refs.txt");
    fs::write(&refs, "the cat sat\na b c d\nsomething here\n").unwrap();
    let same = cmd_textmetrics(&refs, &refs).unwrap();
    for row in &same.rows {
        assert_eq!(row.scores.rouge1.f1, 1.0);
        assert_eq!(row.scores.rouge_l.f1, 1.0);
        assert_eq!(row.scores.bleu, 1.0);
    }

    let cands = dir.path().join("cands.txt");
    fs::write(&cands, "the cat ran\na c b d\n\n").unwrap();
    let t = cmd_textmetrics(&cands, &refs).unwrap();
    assert!((t.rows[0].scores.rouge1.f1 - 2.0 / 3.0).abs() < 1e-9);
    assert!((t.rows[0].scores.rouge2.f1 - 0.5).abs() < 1e-9);
    assert!((t.rows[1].scores.rouge_l.f1 - 0.75).abs() < 1e-9);
    assert_eq!(t.rows[2].scores.rouge1.f1, 0.0);
    assert_eq!(t.rows[2].scores.bleu, 0.0);
    assert!(t.markdown().lines().last().unwrap().starts_with("| mean |"));

    let short = dir.path().join("short.txt");
    fs::write(&short, "one line\n").unwrap();
    assert!(matches!(cmd_textmetrics(&short, &refs), Err(CliError::Data(_))));
}

fn split_corpus(dir: &Path) -> PathBuf {
    let cfg = SyntheticConfig {
        n_instances: 300,
        ..SyntheticConfig::default()
    };
    let d = generate_split(&cfg, "0.7,0.15,0.15".parse().unwrap(), 5);
    let path = dir.join("data.jsonl");
    save_jsonl(&d, &path).unwrap();
    path
}

#[test]
fn calibration_switch_keeps_classification_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = split_corpus(dir.path());
    let run = |calibrate: bool| {
        cmd_run(&ExperimentConfig {
            dataset_path: data.clone(),
            calibrate,
            output_dir: dir.path().join(format!("run-{calibrate}")),
            seed: 5,
            ..Default::default()
        })
        .unwrap()
        .metrics
    };
    let (on, off) = (run(true), run(false));
    let (a, b) = (&on.headline, &off.headline);
    assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
    assert_eq!(a.macro_precision.to_bits(), b.macro_precision.to_bits());
    assert_eq!(a.macro_recall.to_bits(), b.macro_recall.to_bits());
    assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
    assert_ne!(on.temperature, 1.0);
    assert_ne!(a.avg_confidence, b.avg_confidence);
}

#[test]
fn run_directory_contents_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let data = split_corpus(dir.path());
    let out = dir.path().join("run");
    let config = dir.path().join("exp.conf");
    fs::write(
        &config,
        format!("dataset={}\napproach=multi_perspective\nepochs=5\nseed=2\n", data.display()),
    )
    .unwrap();
    let code = run_cli(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "4",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    for f in RUN_FILES {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let echoed = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echoed.contains("approach=multi_perspective\n"));
    assert!(echoed.contains("epochs=5\n"));
    assert!(echoed.contains("seed=4\n"));
    let info: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run_info.json")).unwrap()).unwrap();
    assert_eq!(info["seed"], 4);
    assert!(info["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert_eq!(fs::read_to_string(out.join("loss_trace.csv")).unwrap().lines().count(), 6);

    // Re-running from the echoed config reproduces the metrics.
    let first = fs::read(out.join("metrics.json")).unwrap();
    assert_eq!(run_cli(&["run", "--config", out.join("config.txt").to_str().unwrap()]), EXIT_OK);
    assert_eq!(fs::read(out.join("metrics.json")).unwrap(), first);

    let rows = cmd_report(&[out.clone(), out]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].approach, "Multi-Perspective");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_cli(&["--help"]), EXIT_OK);
    assert_eq!(run_cli(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run_cli(&["run", "--approach", "bogus", "--dataset", "x"]), EXIT_USAGE);
    assert_eq!(run_cli(&["run", "--dataset", "x", "--epochs", "0"]), EXIT_USAGE);
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(run_cli(&["agreement", missing.to_str().unwrap()]), EXIT_DATA);

    // no split tags
    let unsplit = write(dir.path(), "u.jsonl", vec![instance("1", &[Pro; 3])]);
    assert_eq!(
        run_cli(&["run", "--dataset", unsplit.to_str().unwrap(), "-o", dir.path().join("r").to_str().unwrap()]),
        EXIT_DATA
    );
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    assert_eq!(run_cli(&["preprocess", bad.to_str().unwrap(), "-o", "/dev/null"]), EXIT_DATA);
}

#[test]
fn split_and_synth_commands() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let n = cmd_synth(&SynthOptions {
        output: raw.clone(),
        n_instances: 100,
        annotators: 3,
        seed: 1,
        split: None,
        removals: None,
    })
    .unwrap();
    assert_eq!(n, 100);
    let tagged = dir.path().join("tagged.jsonl");
    let r = cmd_split(&raw, &tagged, "0.8,0.1,0.1".parse().unwrap(), 3).unwrap();
    assert_eq!((r.train, r.validation, r.test), (80, 10, 10));
    assert!(load_jsonl(&tagged).unwrap().instances.iter().all(|i| i.split.is_some()));
}
