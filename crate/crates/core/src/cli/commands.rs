use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ProviderKind, RunConfig};
use super::report::{RunReport, StageReport, Timer};
use super::CliError;
use crate::corpus::load_corpus;
use crate::embed::{EmbeddingProvider, HashEmbedder, RemoteEmbedder};
use crate::evaluate::{align, classification_report, LabelMatrix, ReportOptions, RowLabel};
use crate::goals::{all_goals, GoalSet};
use crate::hybrid::{consensus_stats, cooccurrence_graph, to_connections};
use crate::ingest::{read_publications, type_distribution, Publication, RecordFormat};
use crate::llmtag::{
    build_prompt, ChatClient, ChatMessage, ChatRequest, LlmError, LlmTagRecord, LlmTagResult,
    LlmTagStatus,
};
use crate::simtag::{
    apply_threshold_with, goal_distribution, score_histogram, score_publications, GoalVectors,
    SimTagRecord, TagResult,
};

pub const GOAL_VECTORS_FILE: &str = "goal_vectors.json";
pub const SIM_TAGS_FILE: &str = "sim_tags.jsonl";
pub const HISTOGRAM_FILE: &str = "score_histogram.csv";
pub const DISTRIBUTION_FILE: &str = "goal_distribution.csv";
pub const LLM_TAGS_FILE: &str = "llm_tags.jsonl";
pub const CONSENSUS_FILE: &str = "consensus.json";
pub const GRAPH_FILE: &str = "cooccurrence.json";
pub const EVAL_REPORT_FILE: &str = "classification_report.csv";
pub const TYPE_DISTRIBUTION_FILE: &str = "type_distribution.csv";

pub fn make_provider(cfg: &RunConfig) -> Result<Box<dyn EmbeddingProvider>, CliError> {
    let p = &cfg.provider;
    Ok(match p.kind {
        ProviderKind::Hash => Box::new(HashEmbedder::new(p.dim)?),
        ProviderKind::Remote => {
            let endpoint = p.endpoint.as_deref().ok_or_else(|| {
                CliError::Config("remote provider requires embed_endpoint".into())
            })?;
            Box::new(RemoteEmbedder::with_options(
                endpoint,
                p.dim,
                p.max_in_flight,
                RemoteEmbedder::DEFAULT_BATCH_SIZE,
                Duration::from_secs_f64(cfg.llm.request_timeout_secs),
            )?)
        }
    })
}

fn load_publications(cfg: &RunConfig) -> Result<Vec<Publication>, CliError> {
    let path = cfg
        .publications_path
        .as_deref()
        .ok_or_else(|| CliError::Config("no publications file configured".into()))?;
    Ok(read_publications(path, RecordFormat::from_path(path)?)?)
}

fn config_echo(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).unwrap_or(Value::Null)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn jsonl<T: Serialize>(records: impl IntoIterator<Item = T>) -> Result<String, CliError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r).map_err(|e| CliError::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Embeds the 17 goal documents and writes the goal-vector cache.
pub fn cmd_vectorize(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let timer = Timer::start();
    cfg.prepare_output_dir()?;
    let corpus_path = cfg
        .corpus_path
        .as_deref()
        .ok_or_else(|| CliError::Config("no corpus file configured".into()))?;
    let corpus = load_corpus(corpus_path)?;
    let provider = make_provider(cfg)?;
    let vectors = GoalVectors::build(&corpus, provider.as_ref())?;
    let path = cfg.output(GOAL_VECTORS_FILE);
    vectors.save(&path)?;
    info!(
        "wrote {} ({} goals, dim {})",
        path.display(),
        17,
        vectors.dim()
    );
    let mut stage = StageReport::new(17, 17).detail("provider", vectors.provider());
    stage.seconds = timer.seconds();
    stage.config = config_echo(cfg);
    RunReport::record(&cfg.output_dir, "vectorize", stage)?;
    Ok(path)
}

/// Uses the cached goal vectors when they match the configured provider,
/// otherwise re-embeds the corpus and refreshes the cache.
fn goal_vectors_for(
    cfg: &RunConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<GoalVectors, CliError> {
    let path = cfg.output(GOAL_VECTORS_FILE);
    if path.exists() {
        match GoalVectors::load(&path) {
            Ok(gv) if gv.provider() == provider.identity() && gv.dim() == provider.dim() => {
                return Ok(gv)
            }
            Ok(gv) => info!("cached vectors were built by {}; rebuilding", gv.provider()),
            Err(e) => warn!("ignoring unreadable vector cache: {e}"),
        }
    }
    cmd_vectorize(cfg)?;
    Ok(GoalVectors::load(&path)?)
}

pub fn cmd_tag_sim(cfg: &RunConfig) -> Result<(), CliError> {
    let timer = Timer::start();
    cfg.prepare_output_dir()?;
    let pubs = load_publications(cfg)?;
    let provider = make_provider(cfg)?;
    let goal_vectors = goal_vectors_for(cfg, provider.as_ref())?;
    let scores = score_publications(provider.as_ref(), &goal_vectors, &pubs, cfg.parallelism)?;
    let threshold = cfg.threshold();
    let results: Vec<TagResult> = scores
        .iter()
        .map(|s| apply_threshold_with(s, threshold))
        .collect();

    write_text(
        &cfg.output(SIM_TAGS_FILE),
        &jsonl(results.iter().map(SimTagRecord::from))?,
    )?;

    let all_scores: Vec<f64> = scores
        .iter()
        .flat_map(|s| s.iter().map(|(_, v)| v.value()))
        .collect();
    let mut hist = String::from("bin,count\n");
    for (edge, count) in score_histogram(&all_scores, cfg.histogram_bin_width) {
        hist.push_str(&format!("{edge},{count}\n"));
    }
    write_text(&cfg.output(HISTOGRAM_FILE), &hist)?;

    let dist = goal_distribution(&results, &pubs)?;
    let mut csv = String::from("goal,type,count\n");
    for (goal, by_type) in &dist {
        for (pub_type, count) in by_type {
            csv.push_str(&format!("{goal},{},{count}\n", csv_field(pub_type)));
        }
    }
    write_text(&cfg.output(DISTRIBUTION_FILE), &csv)?;

    let relevant = results.iter().filter(|r| r.is_relevant()).count();
    let connections: usize = results.iter().map(|r| r.tags.len()).sum();
    let max_tags = results.iter().map(|r| r.tags.len()).max().unwrap_or(0);
    let relevant_pct = if pubs.is_empty() {
        0.0
    } else {
        100.0 * relevant as f64 / pubs.len() as f64
    };
    println!(
        "tagged {connections} goal connections for {relevant} of {} publications ({relevant_pct:.2}%)",
        pubs.len()
    );
    let mut stage = StageReport::new(pubs.len(), relevant)
        .discard("below_threshold", pubs.len() - relevant)
        .detail("connections", connections)
        .detail("max_tags_per_publication", max_tags)
        .detail("relevant_percent", relevant_pct)
        .detail("threshold", threshold.value)
        .detail("threshold_inclusive", threshold.inclusive)
        .detail("provider", goal_vectors.provider());
    stage.seconds = timer.seconds();
    stage.config = config_echo(cfg);
    RunReport::record(&cfg.output_dir, "tag-sim", stage)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Loads answered results from a previous run and rewrites the file without
/// failed or truncated lines, so appending never duplicates an id.
fn resume_llm_output(path: &Path) -> Result<Vec<LlmTagRecord>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(e.to_string()))?;
    let mut kept = Vec::new();
    let mut seen = HashSet::new();
    for line in text.lines() {
        match serde_json::from_str::<LlmTagRecord>(line) {
            Ok(rec) if rec.status != LlmTagStatus::Failed && seen.insert(rec.id.clone()) => {
                kept.push(rec)
            }
            Ok(_) => {}
            Err(_) if line.trim().is_empty() => {}
            Err(e) => warn!("dropping unreadable line in {}: {e}", path.display()),
        }
    }
    let tmp = path.with_extension("jsonl.tmp");
    write_text(&tmp, &jsonl(&kept)?)?;
    fs::rename(&tmp, path).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(kept)
}

pub fn cmd_tag_llm(cfg: &RunConfig) -> Result<(), CliError> {
    let timer = Timer::start();
    cfg.prepare_output_dir()?;
    let pubs = load_publications(cfg)?;
    let endpoint = cfg.llm.endpoint.as_deref().ok_or_else(|| {
        CliError::Config("no LLM endpoint configured (SDGMAP_LLM_ENDPOINT)".into())
    })?;
    let key = cfg
        .llm
        .key
        .as_deref()
        .ok_or_else(|| CliError::Config("no LLM key configured (SDGMAP_LLM_KEY)".into()))?;
    let client = ChatClient::new(
        endpoint,
        key,
        Duration::from_secs_f64(cfg.llm.request_timeout_secs),
    )?;
    let policy = cfg.llm.retry_policy();

    let path = cfg.output(LLM_TAGS_FILE);
    let previous = resume_llm_output(&path)?;
    let answered: HashSet<&str> = previous.iter().map(|r| r.id.as_str()).collect();
    let pending: Vec<&Publication> = pubs
        .iter()
        .filter(|p| !answered.contains(p.id.as_str()))
        .collect();
    info!(
        "{} publications: {} already answered, {} to request",
        pubs.len(),
        pubs.len() - pending.len(),
        pending.len()
    );

    let mut out = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?,
    );
    let mut fatal: Option<LlmError> = None;
    let mut requested = 0usize;
    for batch in pending.chunks(cfg.llm.concurrency) {
        let outcomes: Vec<Result<String, LlmError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|p| {
                    let request = ChatRequest {
                        model: cfg.llm.model.clone(),
                        messages: vec![ChatMessage {
                            role: "user".into(),
                            content: build_prompt(p),
                        }],
                        max_tokens: cfg.llm.max_tokens,
                    };
                    let client = &client;
                    let policy = &policy;
                    scope.spawn(move || client.complete_with_retry(&request, policy))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(LlmError::Transport("worker panicked".into())))
                })
                .collect()
        });
        for (p, outcome) in batch.iter().zip(outcomes) {
            requested += 1;
            let result = match outcome {
                Ok(raw) => LlmTagResult::from_response(&p.id, raw, cfg.confidence_min),
                Err(e @ LlmError::Auth { .. }) => {
                    fatal = Some(e);
                    break;
                }
                Err(e) => {
                    warn!("publication {}: {e}", p.id);
                    LlmTagResult::failed(&p.id, &e)
                }
            };
            let line = serde_json::to_string(&LlmTagRecord::from(&result))
                .map_err(|e| CliError::Data(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| CliError::Data(e.to_string()))?;
        }
        out.flush().map_err(|e| CliError::Data(e.to_string()))?;
        if fatal.is_some() {
            break;
        }
    }
    drop(out);

    let ids: HashSet<&str> = pubs.iter().map(|p| p.id.as_str()).collect();
    let mut statuses: BTreeMap<LlmTagStatus, usize> = BTreeMap::new();
    let mut retained = 0usize;
    for rec in read_jsonl::<LlmTagRecord>(&path)? {
        if ids.contains(rec.id.as_str()) {
            *statuses.entry(rec.status).or_default() += 1;
            retained += rec.assignments.len();
        }
    }
    let count = |s: LlmTagStatus| statuses.get(&s).copied().unwrap_or(0);
    let recorded: usize = statuses.values().sum();
    let mut stage = StageReport::new(pubs.len(), count(LlmTagStatus::Ok))
        .discard("no_answer", count(LlmTagStatus::NoAnswer))
        .discard("unscored", count(LlmTagStatus::Unscored))
        .discard("failed", count(LlmTagStatus::Failed))
        .discard("not_requested", pubs.len() - recorded)
        .detail("requests_this_run", requested)
        .detail("resumed", pubs.len() - pending.len())
        .detail("retained_assignments", retained)
        .detail("confidence_min", cfg.confidence_min);
    stage.seconds = timer.seconds();
    stage.config = config_echo(cfg);
    RunReport::record(&cfg.output_dir, "tag-llm", stage)?;
    println!(
        "llm: {} ok, {} no answer, {} unscored, {} failed ({retained} goal assignments kept)",
        count(LlmTagStatus::Ok),
        count(LlmTagStatus::NoAnswer),
        count(LlmTagStatus::Unscored),
        count(LlmTagStatus::Failed)
    );
    match fatal {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn load_sim_results(path: &Path) -> Result<Vec<TagResult>, CliError> {
    read_jsonl::<SimTagRecord>(path)?
        .into_iter()
        .map(|r| TagResult::try_from(r).map_err(CliError::from))
        .collect()
}

fn load_llm_results(path: &Path) -> Result<Vec<LlmTagResult>, CliError> {
    read_jsonl::<LlmTagRecord>(path)?
        .into_iter()
        .map(|r| LlmTagResult::try_from(r).map_err(|e| CliError::Data(e.to_string())))
        .collect()
}

#[derive(Serialize)]
struct GoalCount {
    goal: u8,
    count: usize,
}

pub fn cmd_hybrid(
    cfg: &RunConfig,
    sim_path: &Path,
    llm_path: &Path,
    total_publications: Option<usize>,
) -> Result<(), CliError> {
    let timer = Timer::start();
    cfg.prepare_output_dir()?;
    let sim = load_sim_results(sim_path)?;
    let llm = load_llm_results(llm_path)?;
    let sim_ids: HashSet<&str> = sim.iter().map(|r| r.publication_id.as_str()).collect();
    if !llm
        .iter()
        .any(|r| sim_ids.contains(r.publication_id.as_str()))
    {
        return Err(crate::evaluate::EvalError::EmptyOverlap.into());
    }
    let a = to_connections(&sim);
    let b = to_connections(llm.iter().filter(|r| r.status == LlmTagStatus::Ok));
    let preselected = sim.iter().filter(|r| r.is_relevant()).count();
    let stats = consensus_stats(&a, &b, total_publications.unwrap_or(preselected));
    let both = a.intersect(&b);
    let per_goal = both.goal_counts();
    let all_publications = sim.len();
    let share_of_all = if all_publications == 0 {
        0.0
    } else {
        stats.consensus_publications as f64 / all_publications as f64
    };
    let consensus = json!({
        "size_a": stats.size_a,
        "size_b": stats.size_b,
        "size_intersection": stats.size_intersection,
        "size_union": stats.size_union,
        "share_of_union": stats.share_of_union,
        "consensus_publications": stats.consensus_publications,
        "consensus_publication_share": stats.consensus_publication_share,
        "total_publications": stats.total_publications,
        "all_publications": all_publications,
        "consensus_share_of_all_publications": share_of_all,
        "per_goal": all_goals()
            .map(|g| GoalCount { goal: g, count: per_goal.get(&g).copied().unwrap_or(0) })
            .collect::<Vec<_>>(),
    });
    write_json(&cfg.output(CONSENSUS_FILE), &consensus)?;
    write_json(&cfg.output(GRAPH_FILE), &cooccurrence_graph(&both))?;
    println!(
        "consensus: {} of {} distinct connections ({:.2}%); {} publications agree on at least one goal \
         ({:.2}% of {} pre-selected, {:.2}% of {} total)",
        stats.size_intersection,
        stats.size_union,
        100.0 * stats.share_of_union,
        stats.consensus_publications,
        100.0 * stats.consensus_publication_share,
        stats.total_publications,
        100.0 * share_of_all,
        all_publications
    );
    let mut stage = StageReport::new(stats.size_union, stats.size_intersection)
        .discard("only_similarity", stats.size_a - stats.size_intersection)
        .discard("only_llm", stats.size_b - stats.size_intersection)
        .detail("consensus_publications", stats.consensus_publications);
    stage.seconds = timer.seconds();
    stage.config = config_echo(cfg);
    RunReport::record(&cfg.output_dir, "hybrid", stage)
}

/// Reads a tag file of either method into a label matrix. LLM rows count
/// only when the model answered with at least one scored goal.
pub fn load_label_matrix(path: &Path) -> Result<LabelMatrix, CliError> {
    let rows = read_jsonl::<Value>(path)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        match row.get("method").and_then(Value::as_str) {
            Some("similarity") => {
                let r = TagResult::try_from(
                    serde_json::from_value::<SimTagRecord>(row)
                        .map_err(|e| CliError::Data(e.to_string()))?,
                )?;
                out.push((
                    r.publication_id,
                    r.tags.iter().map(|t| t.0).collect::<GoalSet>(),
                ));
            }
            Some("llm") => {
                let r = serde_json::from_value::<LlmTagRecord>(row)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                if r.status == LlmTagStatus::Ok {
                    out.push((
                        r.id,
                        r.assignments.iter().map(|a| a.goal).collect::<GoalSet>(),
                    ));
                }
            }
            other => {
                return Err(CliError::Data(format!(
                    "{}: unknown tag method {other:?}",
                    path.display()
                )))
            }
        }
    }
    Ok(LabelMatrix::new(out)?)
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    predicted_path: &Path,
    reference_path: &Path,
    options: ReportOptions,
) -> Result<(), CliError> {
    let timer = Timer::start();
    cfg.prepare_output_dir()?;
    let predicted = load_label_matrix(predicted_path)?;
    let reference = load_label_matrix(reference_path)?;
    let aligned = align(&predicted, &reference)?;
    if aligned.dropped_predicted > 0 || aligned.dropped_actual > 0 {
        warn!(
            "evaluating {} common publications; dropped {} predicted-only and {} reference-only ids",
            aligned.predicted.len(),
            aligned.dropped_predicted,
            aligned.dropped_actual
        );
    }
    let report = classification_report(&aligned.predicted, &aligned.actual, options)?;
    let mut buf = Vec::new();
    report
        .write_csv(&mut buf)
        .map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(cfg.output(EVAL_REPORT_FILE), &buf).map_err(|e| CliError::Data(e.to_string()))?;
    for label in [
        RowLabel::Micro,
        RowLabel::Macro,
        RowLabel::Weighted,
        RowLabel::Samples,
    ] {
        if let Some(r) = report.row(label) {
            println!(
                "{:<13} precision {:.6}  recall {:.6}  f1 {:.6}  support {}",
                r.label.to_string(),
                r.precision,
                r.recall,
                r.f1,
                r.support
            );
        }
    }
    let mut stage = StageReport::new(predicted.len(), aligned.predicted.len())
        .discard("not_in_reference", aligned.dropped_predicted)
        .detail("reference_only", aligned.dropped_actual)
        .detail("skip_empty_predictions", options.skip_empty_predictions)
        .detail(
            "zero_support_convention",
            "metrics of zero-support goals count as 0 in macro averages",
        );
    stage.seconds = timer.seconds();
    stage.config = config_echo(cfg);
    RunReport::record(&cfg.output_dir, "evaluate", stage)
}

/// Prints the run report and, when publications are configured, their type breakdown.
pub fn cmd_report(cfg: &RunConfig) -> Result<(), CliError> {
    let run = RunReport::load(&cfg.output_dir);
    if run.stages.is_empty() {
        println!("no stages recorded in {}", cfg.output_dir.display());
    }
    for (name, stage) in &run.stages {
        let discards: Vec<String> = stage
            .discarded
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        println!(
            "{name:<10} in {:>7}  out {:>7}  discarded [{}]  {:.2}s{}",
            stage.inputs,
            stage.outputs,
            discards.join(", "),
            stage.seconds,
            if stage.reconciles() {
                ""
            } else {
                "  (counts do not reconcile)"
            }
        );
    }
    if cfg.publications_path.is_some() {
        cfg.prepare_output_dir()?;
        let pubs = load_publications(cfg)?;
        let dist = type_distribution(&pubs);
        let mut csv = String::from("type,count,share\n");
        for (t, c) in &dist.counts {
            csv.push_str(&format!("{},{c},{}\n", csv_field(t), dist.shares[t]));
            println!("{t:<24} {c:>7}  {:.2}%", 100.0 * dist.shares[t]);
        }
        write_text(&cfg.output(TYPE_DISTRIBUTION_FILE), &csv)?;
    }
    Ok(())
}

/// Ids present in both tag files, for diagnostics.
pub fn common_ids(a: &LabelMatrix, b: &LabelMatrix) -> usize {
    let ids: HashMap<&str, ()> = a.ids().iter().map(|i| (i.as_str(), ())).collect();
    b.ids()
        .iter()
        .filter(|i| ids.contains_key(i.as_str()))
        .count()
}
