use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsb_core::pipeline::RunConfig;
use tsb_core::synth::SynthConfig;

fn tsb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsb")).args(args).output().expect("binary runs")
}

fn tsb_in(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let d = dir.to_str().unwrap();
    all.extend(["--out-dir", d]);
    tsb(&all)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    fs::write(
        &p,
        "seed = 3\n[synth]\nn_stays = 120\nn_features = 4\nn_statics = 2\nhours = 12\n\
         [embed.rnn]\nhidden_size = 4\nepochs = 2\nlearning_rate = 1e-3\n\
         [tsne]\niterations = 300\n[stratify]\nlevels = [1, 2]\n\
         [hpo]\nn_trials = 4\ntsne_iterations = 300\n",
    )
    .unwrap();
    p
}

#[test]
fn version_names_semver_and_schema() {
    let out = tsb(&["--version"]);
    ok(&out);
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains(env!("CARGO_PKG_VERSION")), "{s}");
    assert!(s.contains("config schema 1"), "{s}");
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let out = tsb(&["synth", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[synth]\nn_stays = 10\nsigma = 3\n").unwrap();
    let out = tsb_in(dir.path(), &["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("sigma"), "{}", stderr(&out));
}

#[test]
fn embed_without_preprocess_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsb_in(dir.path(), &["embed", "--method", "gru"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing preprocessed cohort"), "{}", stderr(&out));
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    for d in [&a, &b] {
        ok(&tsb_in(d, &["synth", "--config", cfg.to_str().unwrap(), "--seed", "42"]));
    }
    for f in ["timeseries.csv", "static.csv", "labels.csv", "taxonomy.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = root.path().join("c");
    ok(&tsb_in(&c, &["synth", "--config", cfg.to_str().unwrap(), "--seed", "43"]));
    assert_ne!(fs::read(a.join("timeseries.csv")).unwrap(), fs::read(c.join("timeseries.csv")).unwrap());
}

fn header_seed(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let first = text.lines().next().unwrap().to_string();
    first.split_whitespace().find_map(|w| w.strip_prefix("seed=")).unwrap().to_string()
}

#[test]
fn seed_precedence_is_flag_then_file_then_default() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    let c = cfg.to_str().unwrap();
    ok(&tsb_in(&root.path().join("flag"), &["synth", "--config", c, "--seed", "9", "--n-stays", "20"]));
    ok(&tsb_in(&root.path().join("file"), &["synth", "--config", c, "--n-stays", "20"]));
    ok(&tsb_in(&root.path().join("default"), &["synth", "--n-stays", "20"]));
    assert_eq!(header_seed(&root.path().join("flag/labels.csv")), "9");
    assert_eq!(header_seed(&root.path().join("file/labels.csv")), "3");
    assert_eq!(header_seed(&root.path().join("default/labels.csv")), "0");
    let labels = fs::read_to_string(root.path().join("flag/labels.csv")).unwrap();
    assert_eq!(labels.lines().filter(|l| l.starts_with('S')).count(), 20);
}

#[test]
fn full_pipeline_stamps_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    let c = cfg.to_str().unwrap();
    for step in [
        &["synth"][..],
        &["preprocess"],
        &["embed", "--method", "stat"],
        &["embed", "--method", "lstm"],
        &["reduce"],
        &["cluster", "--level", "2"],
        &["evaluate", "--level", "2"],
        &["stratify", "--method", "lstm"],
        &["rediscover"],
        &["assign-labels", "--strategy", "majority,medoid"],
        &["hpo"],
    ] {
        let mut args = step.to_vec();
        args.extend(["--config", c, "--threads", "1"]);
        ok(&tsb_in(&run, &args));
    }
    let report = tsb_in(&run, &["report", "--config", c]);
    ok(&report);
    let table = String::from_utf8_lossy(&report.stdout);
    assert!(table.starts_with("task"), "{table}");

    let mut checked = 0;
    let mut stack = vec![run.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            assert!(!name.ends_with(".tmp"), "leftover temp file {name}");
            let text = fs::read_to_string(&p).unwrap();
            if name.ends_with(".json") {
                let v: serde_json::Value = serde_json::from_str(&text).unwrap();
                let prov = &v["provenance"];
                assert!(prov["subcommand"].is_string() && prov["config_hash"].is_string(), "{name}");
                assert_eq!(prov["seed"], 3, "{name}");
            } else {
                let first = text.lines().next().unwrap();
                assert!(first.starts_with("# tsb ") && first.contains("config=") && first.contains("seed=3"), "{name}: {first}");
            }
            checked += 1;
        }
    }
    assert!(checked >= 20, "only {checked} artifacts");

    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    let records = v["records"].as_array().unwrap();
    let tasks: Vec<&str> = records.iter().map(|r| r["task"].as_str().unwrap()).collect();
    let mut sorted = tasks.clone();
    sorted.sort();
    assert_eq!(tasks, sorted);
    for t in ["assign", "evaluate", "flat", "hpo", "rediscover"] {
        assert!(tasks.contains(&t), "{t} missing from {tasks:?}");
    }
    assert_eq!(v["provenance"]["config"]["synth"]["n_stays"], 120);
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap() == "task,level,embedder,strategy,metric,value");
    let trials = fs::read_to_string(run.join("trials_stat.csv")).unwrap();
    assert_eq!(trials.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 4);
    let loss = fs::read_to_string(run.join("loss_lstm.csv")).unwrap();
    assert_eq!(loss.lines().nth(1).unwrap(), "epoch,train_mse,val_mse");
}

#[test]
fn malformed_intermediate_exits_two_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let c = cfg.to_str().unwrap();
    ok(&tsb_in(dir.path(), &["synth", "--config", c]));
    ok(&tsb_in(dir.path(), &["preprocess", "--config", c]));
    ok(&tsb_in(dir.path(), &["embed", "--config", c]));
    ok(&tsb_in(dir.path(), &["stratify", "--config", c]));
    let bad = dir.path().join("results/zz.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = tsb_in(dir.path(), &["report", "--config", c]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(bad.to_str().unwrap()), "{}", stderr(&out));

    let emb = dir.path().join("embeddings_stat.csv");
    fs::write(&emb, "stay_id,dim_0\nS1,abc\n").unwrap();
    let out = tsb_in(dir.path(), &["rediscover", "--config", c]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("embeddings_stat.csv"), "{}", stderr(&out));
}

#[test]
fn report_without_results_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsb_in(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no completed evaluations"), "{}", stderr(&out));
}

#[test]
fn ingest_copies_external_files_and_applies_top_codes() {
    let src = tempfile::tempdir().unwrap();
    let cfg = small_config(src.path());
    ok(&tsb_in(src.path(), &["synth", "--config", cfg.to_str().unwrap()]));
    let p = |f: &str| src.path().join(f).to_str().unwrap().to_string();
    let top = src.path().join("top.toml");
    fs::write(&top, "[cohort]\ntop_codes = 5\n").unwrap();
    let run = src.path().join("run");
    let out = tsb_in(
        &run,
        &[
            "ingest",
            "--config",
            top.to_str().unwrap(),
            "--timeseries",
            &p("timeseries.csv"),
            "--statics",
            &p("static.csv"),
            "--labels",
            &p("labels.csv"),
            "--taxonomy",
            &p("taxonomy.tsv"),
        ],
    );
    ok(&out);
    let labels = fs::read_to_string(run.join("labels.csv")).unwrap();
    let codes: std::collections::BTreeSet<&str> =
        labels.lines().filter(|l| l.starts_with('S')).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(codes.len(), 5);
    ok(&tsb_in(&run, &["preprocess", "--config", top.to_str().unwrap()]));

    let missing = tsb_in(&src.path().join("other"), &["ingest", "--timeseries", &p("timeseries.csv")]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("--statics"));
}

#[test]
fn ingest_rejects_duplicate_cells() {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, body: &str| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p.to_str().unwrap().to_string()
    };
    let ts = w("ts.csv", "stay_id,hour,feature,value\ns1,0,hr,80\ns1,0,hr,80\n");
    let st = w("st.csv", "stay_id,age\ns1,60\n");
    let lb = w("lb.csv", "stay_id,code\ns1,A.1.1.1\n");
    let tx = w("tx.tsv", "code\tparent\tlevel\tname\nA\tROOT\t1\t\nA.1\tA\t2\t\nA.1.1\tA.1\t3\t\nA.1.1.1\tA.1.1\t4\t\n");
    let out = tsb_in(&dir.path().join("run"), &["ingest", "--timeseries", &ts, "--statics", &st, "--labels", &lb, "--taxonomy", &tx]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("more than once"), "{}", stderr(&out));
}

fn shipped(name: &str) -> RunConfig {
    toml::from_str(&fs::read_to_string(configs().join(name)).unwrap()).unwrap()
}

#[test]
fn shipped_configs_match_presets() {
    for (file, preset) in [
        ("strong.toml", SynthConfig::strong_signal()),
        ("weak.toml", SynthConfig::weak_signal()),
        ("noiseless.toml", SynthConfig::noiseless()),
    ] {
        let cfg = shipped(file);
        assert_eq!(cfg.synth, SynthConfig { seed: cfg.synth.seed, ..preset }, "{file}");
        assert_eq!(cfg.stratify.min_cluster_size, 10);
    }
    let strong = shipped("strong.toml");
    assert_eq!(strong.embed.rnn.epochs, 20);
    assert_eq!(strong.embed.rnn.learning_rate, 1e-4);
    assert_eq!(strong.hpo.n_trials, 50);
    shipped("desk.toml");
}
