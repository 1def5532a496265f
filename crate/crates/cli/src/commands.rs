use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;

use serde_json::json;
use tsb_core::cohort::{self, Cohort, Split, SplitAssignment};
use tsb_core::embed_rnn::loss_curve_csv;
use tsb_core::hpo::{hpo_run, trials_csv};
use tsb_core::kmeans::kmeans_fit;
use tsb_core::metrics;
use tsb_core::pipeline::{self, RunConfig};
use tsb_core::preprocess::PreparedCohort;
use tsb_core::report::{aggregate, plot_csv, summary_table, ReportMetrics, TaskRecord};
use tsb_core::rng::stream_seed;
use tsb_core::stratify::{
    assign_cluster_labels, evaluate_assignment, rediscover, stratify_flat, ClusterSpace, FlatOptions, LevelLabels,
    RediscoverOptions, Strategy,
};
use tsb_core::synth::SynthConfig;
use tsb_core::tsne::tsne_fit;
use tsb_core::{EmbeddingMatrix, TaxonomyTree};

use crate::args::{Command, Method, Preset, StrategyArg};
use crate::artifacts::{
    portable, write_atomic, RunContext, Stamped, LABELS, PARAMS, PREPARED, RESULTS_DIR, SPLIT, STATICS, TAXONOMY,
    TIMESERIES,
};
use crate::error::{CliError, Result};

const COHORT_PRODUCER: &str = "synth` or `tsb ingest";

/// Folds subcommand flags into the config so that provenance hashes what
/// actually ran.
pub fn apply_overrides(cmd: &Command, cfg: &mut RunConfig) -> Result<()> {
    if let Some(seed) = cmd.common().seed {
        cfg.seed = seed;
    }
    match cmd {
        Command::Synth { preset, n_stays, .. } => {
            if let Some(p) = preset {
                cfg.synth = match p {
                    Preset::Strong => SynthConfig::strong_signal(),
                    Preset::Weak => SynthConfig::weak_signal(),
                    Preset::Noiseless => SynthConfig::noiseless(),
                };
            }
            if let Some(n) = n_stays {
                cfg.synth.n_stays = *n;
            }
        }
        Command::Ingest { timeseries, statics, labels, taxonomy, .. } => {
            let set = |slot: &mut Option<String>, v: &Option<std::path::PathBuf>| {
                if let Some(p) = v {
                    *slot = Some(p.display().to_string());
                }
            };
            set(&mut cfg.paths.timeseries, timeseries);
            set(&mut cfg.paths.statics, statics);
            set(&mut cfg.paths.labels, labels);
            set(&mut cfg.paths.taxonomy, taxonomy);
        }
        Command::Embed { epochs, .. } => {
            if let Some(e) = epochs {
                cfg.embed.rnn.epochs = *e;
            }
        }
        Command::Reduce { perplexity, out_dims, .. } => {
            if let Some(p) = perplexity {
                cfg.tsne.perplexity = *p;
            }
            if let Some(d) = out_dims {
                cfg.tsne.out_dims = *d;
            }
        }
        Command::Cluster { k, tsne, .. } | Command::Stratify { k, tsne, .. } => {
            if k.is_some() {
                cfg.stratify.k = *k;
            }
            if tsne.tsne {
                cfg.stratify.use_tsne = true;
            }
            if let Some(p) = tsne.perplexity {
                cfg.tsne.perplexity = p;
            }
            if let Some(d) = tsne.out_dims {
                cfg.tsne.out_dims = d;
            }
            if let Command::Stratify { levels: Some(l), .. } = cmd {
                cfg.stratify.levels = l.clone();
            }
        }
        Command::Rediscover { min_cluster_size, .. } => {
            if let Some(m) = min_cluster_size {
                cfg.stratify.min_cluster_size = *m;
            }
        }
        Command::AssignLabels { strategy, levels, .. } => {
            if let Some(s) = strategy {
                cfg.stratify.strategies = s
                    .iter()
                    .map(|s| match s {
                        StrategyArg::Centroid => Strategy::Centroid,
                        StrategyArg::Medoid => Strategy::Medoid,
                        StrategyArg::Majority => Strategy::Majority,
                    })
                    .collect();
            }
            if let Some(l) = levels {
                cfg.stratify.levels = l.clone();
            }
        }
        Command::Hpo { trials, level, .. } => {
            if let Some(t) = trials {
                cfg.hpo.n_trials = *t;
            }
            if let Some(l) = level {
                cfg.hpo.level = *l;
            }
        }
        Command::Preprocess { .. } | Command::Evaluate { .. } | Command::Report { .. } => {}
    }
    for &l in &cfg.stratify.levels {
        if !(1..=4).contains(&l) {
            return Err(CliError::Invalid(format!("taxonomy levels are 1..=4, got {l}")));
        }
    }
    Ok(())
}

pub fn execute(cmd: &Command, ctx: &RunContext) -> Result<()> {
    match cmd {
        Command::Synth { .. } => synth(ctx),
        Command::Ingest { .. } => ingest(ctx),
        Command::Preprocess { .. } => preprocess(ctx),
        Command::Embed { method, .. } => embed(ctx, method.method),
        Command::Reduce { method, .. } => reduce(ctx, method.method),
        Command::Cluster { method, level, .. } => cluster(ctx, method.method, *level),
        Command::Stratify { method, .. } => stratify(ctx, method.method),
        Command::Rediscover { method, .. } => rediscover_cmd(ctx, method.method),
        Command::AssignLabels { method, .. } => assign_labels(ctx, method.method),
        Command::Evaluate { method, level, .. } => evaluate(ctx, method.method, *level),
        Command::Hpo { method, .. } => hpo(ctx, method.method),
        Command::Report { .. } => report(ctx),
    }
}

fn write_cohort(ctx: &RunContext, tree: &TaxonomyTree, cohort: &Cohort) -> Result<()> {
    let (ts, st, lb) = cohort.to_csv_text();
    ctx.write_text(TIMESERIES, &ts)?;
    ctx.write_text(STATICS, &st)?;
    ctx.write_text(LABELS, &lb)?;
    ctx.write_text(TAXONOMY, &tree.to_tsv())?;
    eprintln!(
        "wrote {} stays, {} features, {} leaf codes to {}",
        cohort.len(),
        cohort.n_features(),
        tree.codes_at_level(4).len(),
        ctx.dir.display()
    );
    Ok(())
}

fn filter_top_codes(ctx: &RunContext, cohort: Cohort) -> Cohort {
    match ctx.cfg.cohort.top_codes {
        Some(n) => cohort.retain_codes(&cohort::select_top_codes(&cohort, n)),
        None => cohort,
    }
}

fn synth(ctx: &RunContext) -> Result<()> {
    let (tree, cohort) = pipeline::synth_dataset(&ctx.cfg.synth)?;
    write_cohort(ctx, &tree, &cohort)
}

fn ingest(ctx: &RunContext) -> Result<()> {
    let p = &ctx.cfg.paths;
    let need = |v: &Option<String>, flag: &str| {
        v.clone().ok_or_else(|| CliError::Invalid(format!("ingest needs --{flag} (or paths.{flag} in the config)")))
    };
    let (ts, st, lb, tx) = (
        need(&p.timeseries, "timeseries")?,
        need(&p.statics, "statics")?,
        need(&p.labels, "labels")?,
        need(&p.taxonomy, "taxonomy")?,
    );
    let tree = TaxonomyTree::load(tx.as_ref())?;
    let cohort = Cohort::ingest(ts.as_ref(), st.as_ref(), lb.as_ref(), &ctx.cfg.cohort.cohort_config())?;
    cohort.validate_labels(&tree)?;
    write_cohort(ctx, &tree, &filter_top_codes(ctx, cohort))
}

fn load_tree(ctx: &RunContext) -> Result<TaxonomyTree> {
    let (path, text) = ctx.read(TAXONOMY, "missing taxonomy", COHORT_PRODUCER)?;
    TaxonomyTree::from_tsv(&text).map_err(|e| CliError::malformed(&path, e))
}

fn load_cohort(ctx: &RunContext) -> Result<(TaxonomyTree, Cohort)> {
    let tree = load_tree(ctx)?;
    let (ts_path, ts) = ctx.read(TIMESERIES, "missing cohort", COHORT_PRODUCER)?;
    let (_, st) = ctx.read(STATICS, "missing cohort", COHORT_PRODUCER)?;
    let (_, lb) = ctx.read(LABELS, "missing cohort", COHORT_PRODUCER)?;
    let cohort = Cohort::from_csv_text(&ts, &st, &lb, &ctx.cfg.cohort.cohort_config()).map_err(|e| {
        let file = match &e {
            cohort::CohortError::MalformedRow { file, .. }
            | cohort::CohortError::UnknownFeature { file, .. }
            | cohort::CohortError::DuplicateStay { file, .. }
            | cohort::CohortError::OrphanRow { file, .. } => ctx.path(file),
            _ => ts_path.clone(),
        };
        CliError::malformed(&file, e)
    })?;
    cohort.validate_labels(&tree).map_err(|e| CliError::malformed(&ctx.path(LABELS), e))?;
    Ok((tree, filter_top_codes(ctx, cohort)))
}

fn preprocess(ctx: &RunContext) -> Result<()> {
    let (_, cohort) = load_cohort(ctx)?;
    let (split, prepared, params) =
        pipeline::split_and_prepare(&cohort, ctx.cfg.cohort.split, ctx.cfg.split_seed(), &ctx.cfg.preprocess)?;
    ctx.write_text(SPLIT, &split.to_csv())?;
    ctx.write_json(PARAMS, &params, true)?;
    ctx.write_json(PREPARED, &prepared, false)?;
    eprintln!(
        "split train/val/test = {}/{}/{}; {} static columns after encoding",
        split.count(Split::Train),
        split.count(Split::Val),
        split.count(Split::Test),
        prepared.n_statics()
    );
    Ok(())
}

fn load_split(ctx: &RunContext) -> Result<SplitAssignment> {
    let (path, text) = ctx.read(SPLIT, "missing preprocessed cohort", "preprocess")?;
    SplitAssignment::from_csv(&text).map_err(|e| CliError::malformed(&path, e))
}

fn load_prepared(ctx: &RunContext) -> Result<(SplitAssignment, PreparedCohort)> {
    let prepared: PreparedCohort = ctx.read_json(PREPARED, "missing preprocessed cohort", "preprocess")?;
    Ok((load_split(ctx)?, prepared))
}

fn embeddings_file(m: Method) -> String {
    format!("embeddings_{}.csv", m.as_str())
}

fn embed(ctx: &RunContext, m: Method) -> Result<()> {
    let (split, prepared) = load_prepared(ctx)?;
    let total = ctx.cfg.embed.rnn.epochs;
    let out = pipeline::embed(m.embedder(), &prepared, &split, &ctx.cfg.embed, |e| {
        let val = e.val_mse.map_or("-".into(), |v| format!("{v:.5}"));
        eprintln!("{} epoch {}/{}: train_mse {:.5} val_mse {}", m.as_str(), e.epoch, total, e.train_mse, val);
    })?;
    ctx.write_text(&embeddings_file(m), &out.matrix.to_csv())?;
    if let Some(model) = &out.model {
        ctx.write_json(&format!("model_{}.json", m.as_str()), &model.to_checkpoint(), false)?;
        ctx.write_text(&format!("loss_{}.csv", m.as_str()), &loss_curve_csv(&out.curve))?;
    }
    eprintln!("{} embeddings: {} stays x {} dims", m.as_str(), out.matrix.len(), out.matrix.dim);
    Ok(())
}

fn load_embeddings(ctx: &RunContext, m: Method) -> Result<EmbeddingMatrix> {
    let (path, text) = ctx.read(&embeddings_file(m), "missing embeddings", "embed")?;
    EmbeddingMatrix::from_csv(&text, m.embedder()).map_err(|e| CliError::malformed(&path, e))
}

fn load_labels(ctx: &RunContext, emb: &EmbeddingMatrix) -> Result<LevelLabels> {
    let tree = load_tree(ctx)?;
    let (path, text) = ctx.read(LABELS, "missing cohort", COHORT_PRODUCER)?;
    let mut leaf = HashMap::new();
    let mut rows = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    rows.next();
    for (i, line) in rows {
        let (id, code) = line
            .trim_end_matches('\r')
            .split_once(',')
            .ok_or_else(|| CliError::malformed(&path, format!("line {}: expected `stay_id,code`", i + 1)))?;
        leaf.insert(id.to_string(), code.to_string());
    }
    Ok(LevelLabels::new(&emb.stay_ids, &leaf, &tree)?)
}

fn results_file(name: &str) -> String {
    format!("{RESULTS_DIR}/{name}.json")
}

fn record(task: &str, m: Method) -> TaskRecord {
    TaskRecord {
        task: task.into(),
        level: None,
        transition: None,
        embedder: m.as_str().into(),
        strategy: None,
        k: None,
        used_tsne: false,
        metrics: ReportMetrics::default(),
        n_evaluated_clusters: None,
        n_skipped_clusters: None,
        hpo: None,
    }
}

fn reduce(ctx: &RunContext, m: Method) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let r = tsne_fit(&emb.data, emb.len(), emb.dim, &ctx.cfg.tsne)?;
    let rows = r.layout.chunks(r.out_dims).map(<[f64]>::to_vec).collect();
    let layout = EmbeddingMatrix::from_rows(emb.stay_ids.clone(), rows, m.embedder())?;
    ctx.write_text(&format!("tsne_{}.csv", m.as_str()), &layout.to_csv())?;
    eprintln!("t-SNE KL {:.4} -> {:.4}", r.initial_kl, r.final_kl());
    Ok(())
}

fn flat_options(ctx: &RunContext, level: u8, silhouette: bool) -> FlatOptions {
    FlatOptions {
        k: ctx.cfg.stratify.k,
        tsne: ctx.cfg.stratify.use_tsne.then(|| ctx.cfg.tsne.clone()),
        kmeans: ctx.cfg.kmeans.clone(),
        silhouette,
        seed: ctx.cfg.kmeans_seed("flat", level),
    }
}

fn cluster(ctx: &RunContext, m: Method, level: u8) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let k = match ctx.cfg.stratify.k {
        Some(k) => k,
        None => load_labels(ctx, &emb)?.present(level)?,
    };
    let space = ClusterSpace::build(&emb, ctx.cfg.stratify.use_tsne.then_some(&ctx.cfg.tsne))?;
    let fit = kmeans_fit(&space.data, emb.len(), space.dim, k, ctx.cfg.kmeans_seed("cluster", level), &ctx.cfg.kmeans)?;
    let mut out = String::from("stay_id,cluster_id\n");
    for (id, c) in emb.stay_ids.iter().zip(&fit.assignments) {
        let _ = writeln!(out, "{id},{c}");
    }
    ctx.write_text(&format!("clusters_{}.csv", m.as_str()), &out)?;
    eprintln!("k={k} inertia {:.6} after {} iterations", fit.inertia, fit.iterations_run);
    Ok(())
}

fn evaluate(ctx: &RunContext, m: Method, level: u8) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let labels = load_labels(ctx, &emb)?;
    let (path, text) = ctx.read(&format!("clusters_{}.csv", m.as_str()), "missing clusters", "cluster")?;
    let mut by_id = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.starts_with('#')).skip(1) {
        let parsed = line.split_once(',').and_then(|(id, c)| Some((id.to_string(), c.trim().parse::<usize>().ok()?)));
        let (id, c) = parsed.ok_or_else(|| CliError::malformed(&path, format!("line {}: expected `stay_id,cluster_id`", i + 1)))?;
        by_id.insert(id, c);
    }
    let assignments = emb
        .stay_ids
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| CliError::malformed(&path, format!("no cluster for stay `{id}`"))))
        .collect::<Result<Vec<_>>>()?;
    let truth = labels.at(level)?;
    let vm = metrics::v_measure(truth, &assignments)?;
    let mut rec = record("evaluate", m);
    rec.level = Some(level);
    rec.k = Some(assignments.iter().copied().collect::<std::collections::BTreeSet<_>>().len());
    rec.metrics = ReportMetrics {
        v_measure: Some(vm.v),
        homogeneity: Some(vm.homogeneity),
        completeness: Some(vm.completeness),
        ami: Some(metrics::ami(truth, &assignments)?),
        accuracy_top1: None,
        silhouette: metrics::silhouette(&emb.data, emb.len(), emb.dim, &assignments).ok(),
    };
    eprintln!("L{level}: v-measure {:.4}", vm.v);
    ctx.write_json(&results_file(&format!("evaluate_{}_L{level}", m.as_str())), &vec![rec], true)
}

fn stratify(ctx: &RunContext, m: Method) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let labels = load_labels(ctx, &emb)?;
    let mut records = Vec::new();
    for &level in &ctx.cfg.stratify.levels {
        let out = stratify_flat(&emb, &labels, level, &flat_options(ctx, level, true))?;
        eprintln!("L{level}: k={} v-measure {:.4} ami {:.4}", out.k, out.metrics.v_measure, out.metrics.ami);
        let mut rec = record("flat", m);
        rec.level = Some(level);
        rec.k = Some(out.k);
        rec.used_tsne = out.space.used_tsne;
        rec.metrics = out.metrics.into();
        records.push(rec);
    }
    ctx.write_json(&results_file(&format!("flat_{}", m.as_str())), &records, true)
}

fn rediscover_cmd(ctx: &RunContext, m: Method) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let labels = load_labels(ctx, &emb)?;
    let opts = RediscoverOptions {
        min_cluster_size: ctx.cfg.stratify.min_cluster_size,
        kmeans: ctx.cfg.kmeans.clone(),
        seed: ctx.cfg.kmeans_seed("rediscover", 1),
    };
    let r = rediscover(&emb, &labels, &opts)?;
    let mut records = Vec::new();
    for t in &r.transitions {
        let acc = t.mean_accuracy.map_or("-".into(), |a| format!("{a:.4}"));
        eprintln!("{}: accuracy {acc} ({} evaluated, {} skipped)", t.name(), t.n_evaluated_clusters, t.n_skipped_clusters);
        let mut rec = record("rediscover", m);
        rec.transition = Some(t.name());
        rec.metrics.accuracy_top1 = t.mean_accuracy;
        rec.n_evaluated_clusters = Some(t.n_evaluated_clusters);
        rec.n_skipped_clusters = Some(t.n_skipped_clusters);
        records.push(rec);
    }
    let mut tree = String::from("level,cluster_id,parent,size,evaluated,label\n");
    for lvl in &r.levels {
        for c in &lvl.clusters {
            let parent = c.parent.map(|p| p.to_string()).unwrap_or_default();
            let label = c.label.as_deref().unwrap_or("");
            let _ = writeln!(tree, "{},{},{},{},{},{}", lvl.level, c.id, parent, c.members.len(), c.evaluated, label);
        }
    }
    ctx.write_text(&format!("rediscover_{}.csv", m.as_str()), &tree)?;
    ctx.write_json(&results_file(&format!("rediscover_{}", m.as_str())), &records, true)
}

fn assign_labels(ctx: &RunContext, m: Method) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let labels = load_labels(ctx, &emb)?;
    let split = load_split(ctx)?;
    let mut records = Vec::new();
    let mut table = String::from("level,strategy,cluster_id,size,label,fallback\n");
    for &level in &ctx.cfg.stratify.levels {
        let flat = stratify_flat(&emb, &labels, level, &flat_options(ctx, level, false))?;
        for &strategy in &ctx.cfg.stratify.strategies {
            let labeled = assign_cluster_labels(&flat.result, &flat.space, &labels, &split, strategy)?;
            let acc = evaluate_assignment(&labeled, &labels, &split, Split::Test)?;
            eprintln!("L{level} {}: test top-1 {}", strategy.as_str(), acc.map_or("-".into(), |a| format!("{a:.4}")));
            for c in &labeled.clusters {
                let _ = writeln!(
                    table,
                    "{level},{},{},{},{},{}",
                    strategy.as_str(),
                    c.id,
                    c.members.len(),
                    c.label.as_deref().unwrap_or(""),
                    c.fallback
                );
            }
            let mut rec = record("assign", m);
            rec.level = Some(level);
            rec.strategy = Some(strategy.as_str().into());
            rec.k = Some(flat.k);
            rec.used_tsne = flat.space.used_tsne;
            rec.metrics.accuracy_top1 = acc;
            rec.n_evaluated_clusters = Some(labeled.clusters.iter().filter(|c| !c.fallback).count());
            rec.n_skipped_clusters = Some(labeled.clusters.iter().filter(|c| c.fallback).count());
            records.push(rec);
        }
    }
    ctx.write_text(&format!("cluster_labels_{}.csv", m.as_str()), &table)?;
    ctx.write_json(&results_file(&format!("assign_{}", m.as_str())), &records, true)
}

fn hpo(ctx: &RunContext, m: Method) -> Result<()> {
    let emb = load_embeddings(ctx, m)?;
    let labels = load_labels(ctx, &emb)?;
    let split = load_split(ctx)?;
    let level = ctx.cfg.hpo.level;
    let seed = stream_seed(ctx.cfg.seed, "hpo", level as u64);
    let out = hpo_run(&emb, &labels, level, &split, &ctx.cfg.hpo.hpo_config(), &ctx.cfg.kmeans, seed)?;
    ctx.write_text(&format!("trials_{}.csv", m.as_str()), &trials_csv(&out.trials))?;
    let failed = out.trials.iter().filter(|t| !t.is_ok()).count();
    let mut rec = record("hpo", m);
    rec.level = Some(level);
    if let Some(b) = &out.best {
        eprintln!(
            "best of {} trials ({failed} failed): trial {} k={} tsne={} perplexity={:.2} out_dims={} val v-measure {:.4}",
            out.trials.len(),
            b.trial,
            b.k,
            b.use_tsne,
            b.perplexity,
            b.out_dims,
            b.objective.unwrap_or(f64::NAN)
        );
        rec.k = Some(b.k);
        rec.used_tsne = b.use_tsne;
        rec.metrics.v_measure = b.objective;
        rec.hpo = Some(format!(
            "trial={};k={};tsne={};perplexity={};out_dims={}",
            b.trial, b.k, b.use_tsne, b.perplexity, b.out_dims
        ));
    } else {
        eprintln!("all {} trials failed", out.trials.len());
    }
    ctx.write_json(&results_file(&format!("hpo_{}", m.as_str())), &vec![rec], true)
}

fn report(ctx: &RunContext) -> Result<()> {
    let dir = ctx.path(RESULTS_DIR);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut records = Vec::new();
    let mut sources = BTreeMap::new();
    for path in &files {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let stamped: Stamped<Vec<TaskRecord>> =
            serde_json::from_str(&text).map_err(|e| CliError::malformed(path, e))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        sources.insert(name, stamped.provenance);
        records.extend(stamped.data);
    }
    let mut provenance = ctx.provenance();
    provenance["config"] = serde_json::to_value(portable(&ctx.cfg)).expect("config serializes");
    provenance["sources"] = json!(sources);
    let report = aggregate(records, provenance)?;
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(&ctx.path("report.json"), &bytes)?;
    ctx.write_text("report.csv", &plot_csv(&report))?;
    print!("{}", summary_table(&report));
    Ok(())
}
