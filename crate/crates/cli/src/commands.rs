use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use xdnr::analysis;
use xdnr::corpus::{
    self, build_train_pairs, doc_text, load_corpus, load_debunks, load_qrels, load_queries, split, DebunkCorpus,
    JudgmentSet, PairConfig, QueryClaim, QuerySet, Split, SplitSpec, Translations,
};
use xdnr::dense::{apply_projection, hash_embed_all, DenseIndex, EmbeddingMatrix};
use xdnr::lexical::{build_index, Bm25Params, InvertedIndex};
use xdnr::metrics::{self, GainMap, Qrels};
use xdnr::pipeline::{
    rerank, ExternalScorer, ExternalScorerConfig, FirstStage, LexicalStage, Pipeline, QueryEncoder, RerankConfig,
    Reranker, RetrieveError,
};
use xdnr::ranking::{read_run, write_run};
use xdnr::trainer::{self, ProjectionHead, TrainConfig, ValidationSet};
use xdnr::RankedList;

use crate::*;

/// Counts of the released MMTweets files.
const MMTWEETS: MmtweetsCounts = MmtweetsCounts {
    queries: 1600,
    debunks: 30452,
    exact: 2716,
    partial: 1542,
    irrelevant: 1936,
    test: 400,
    train: 776,
    pairs: 10120,
};

struct MmtweetsCounts {
    queries: usize,
    debunks: usize,
    exact: usize,
    partial: usize,
    irrelevant: usize,
    test: usize,
    train: usize,
    pairs: usize,
}

pub(crate) fn run(cli: &Cli) -> CmdResult {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| data(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    echo_config(cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::IndexLexical(a) => index_lexical(a, out),
        Command::IndexDense(a) => index_dense(a, out),
        Command::EmbedHash(a) => embed_hash(a, out),
        Command::Train(a) => train(a, out),
        Command::Search(a) => search(a, out, cli.threads),
        Command::Rerank(a) => rerank_cmd(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Candidates(a) => candidates(a, out),
        Command::Overlap(a) => overlap(a),
        Command::Kappa(a) => kappa(a),
        Command::Timegap(a) => timegap(a, out),
        Command::Bench(a) => bench(a, out),
        Command::ValidateData(a) => validate_data(a),
    }
}

fn echo_config(cli: &Cli) -> CmdResult {
    let cfg = json!({
        "out_dir": cli.out_dir,
        "threads": cli.threads,
        "xdnr_seed": std::env::var("XDNR_SEED").ok(),
        "invocation": cli.command,
    });
    write_json(&cli.out_dir.join("config.json"), &cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> CmdResult {
    analysis::write_json(path, v).map_err(Failure::from)
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn index_lexical(a: &IndexLexicalArgs, out: &Path) -> CmdResult {
    require_files([a.debunks.as_path()].into_iter().chain(a.translations.as_deref()))?;
    let corpus = load_debunks(&a.debunks)?;
    let tr = a.translations.as_deref().map(Translations::load).transpose()?;
    let index = build_index(&corpus, tr.as_ref())?;
    let path = out.join("index.bin");
    index.write(&path)?;
    log::info!(
        "indexed {} debunks, {} terms -> {}",
        index.doc_count(),
        index.term_count(),
        path.display()
    );
    Ok(())
}

fn load_head(path: &Path) -> CmdResult<ProjectionHead> {
    let (head, header) = ProjectionHead::load(path)?;
    log::info!("loaded head {}x{} (checksum {})", header.dim_out, header.dim_in, header.checksum);
    Ok(head)
}

fn index_dense(a: &IndexDenseArgs, out: &Path) -> CmdResult {
    require_files([a.embeddings.as_path()].into_iter().chain(a.head.as_deref()))?;
    let mut m = EmbeddingMatrix::load(&a.embeddings)?;
    if let Some(h) = &a.head {
        m = apply_projection(&m, &load_head(h)?)?;
    }
    let index = DenseIndex::new(m);
    let path = out.join("debunks.emb");
    index.matrix().write(&path)?;
    log::info!(
        "{} rows of dim {} ({} zero-norm) -> {}",
        index.matrix().len(),
        index.matrix().dim(),
        index.zero_norm_rows(),
        path.display()
    );
    Ok(())
}

fn embed_hash(a: &EmbedHashArgs, out: &Path) -> CmdResult {
    require_files(a.debunks.iter().chain(&a.queries).map(|p| p.as_path()))?;
    let seed = effective_seed(a.seed)?;
    let mut outputs = Vec::new();
    if let Some(p) = &a.debunks {
        let c = load_debunks(p)?;
        let texts: Vec<(String, String)> = c.iter().map(|d| (d.id.clone(), doc_text(d))).collect();
        outputs.push(("debunks", hash_embed_all(texts.iter().map(|(i, t)| (i.as_str(), t.as_str())), a.dim, seed)?));
    }
    if let Some(p) = &a.queries {
        let q = load_queries(p)?;
        outputs.push((
            "queries",
            hash_embed_all(q.iter().map(|q| (q.id.as_str(), q.text.as_str())), a.dim, seed)?,
        ));
    }
    for (name, m) in outputs {
        m.write(&out.join(format!("{name}.emb")))?;
        if a.jsonl {
            m.write_jsonl(&out.join(format!("{name}.jsonl")))?;
        }
        log::info!("hash-embedded {} {name} (dim {}, seed {seed})", m.len(), a.dim);
    }
    Ok(())
}

fn load_data(d: &DataArgs) -> CmdResult<(DebunkCorpus, QuerySet, JudgmentSet)> {
    require_files([d.debunks.as_path(), d.queries.as_path(), d.qrels.as_path()])?;
    Ok(load_corpus(&d.debunks, &d.queries, &d.qrels)?)
}

fn train(a: &TrainArgs, out: &Path) -> CmdResult {
    require_files(
        [a.splits.as_path(), a.query_emb.as_path(), a.debunk_emb.as_path()]
            .into_iter()
            .chain(a.config.as_deref()),
    )?;
    let (debunks, queries, judgments) = load_data(&a.data)?;
    let mut config: TrainConfig = match &a.config {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&s).map_err(|e| data(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.seed = effective_seed(config.seed)?;
    write_json(&out.join("train_config.json"), &config)?;

    let spec = SplitSpec::load(&a.splits)?;
    let sp = split(&queries, &judgments, &spec)?;
    let pair_cfg = PairConfig {
        negatives_per_query: a.negatives,
        label_map: config.label_map,
        seed: config.seed,
        irrelevant_as_negatives: a.irrelevant_negatives,
    };
    let pairs = build_train_pairs(&sp.train, &judgments, &debunks, &pair_cfg)?;
    let val_pairs = build_train_pairs(&sp.validation_set(), &judgments, &debunks, &pair_cfg)?;
    let qrels = Qrels::from_judgments(&judgments, GainMap::default());
    let validation = ValidationSet {
        qrels: qrels.subset(sp.validation.iter().map(String::as_str)),
        query_ids: sp.validation.clone(),
        pairs: val_pairs,
    };
    log::info!(
        "{} train / {} validation / {} test queries; {} training pairs",
        sp.train.query_ids.len(),
        sp.validation.len(),
        sp.test.len(),
        pairs.len()
    );
    let qe = EmbeddingMatrix::load(&a.query_emb)?;
    let de = EmbeddingMatrix::load(&a.debunk_emb)?;
    let (head, reports) = trainer::train(&qe, &de, &pairs, &config, &validation)?;
    for r in &reports {
        log::info!(
            "epoch {}: train loss {:.6}, validation loss {:.6}, validation MRR {:.4}",
            r.epoch,
            r.train_loss,
            r.validation_loss,
            r.validation_mrr
        );
    }
    head.save(&out.join("head.ckpt"), config.seed, Some(&config))?;
    trainer::write_training_log(&out.join("training_log.jsonl"), &reports)?;
    Ok(())
}

fn select_queries(
    queries: QuerySet,
    part: SplitPart,
    splits: Option<&Path>,
    qrels: Option<&Path>,
) -> CmdResult<Vec<QueryClaim>> {
    if part == SplitPart::All {
        return Ok(queries.items().to_vec());
    }
    let (Some(sp), Some(qr)) = (splits, qrels) else {
        return Err(usage("--split other than `all` needs --splits and --qrels"));
    };
    require_files([sp, qr])?;
    let judgments = load_qrels(qr)?;
    let s: Split = split(&queries, &judgments, &SplitSpec::load(sp)?)?;
    let ids = match part {
        SplitPart::Train => s.train.query_ids,
        SplitPart::Validation => s.validation,
        SplitPart::Test => s.test,
        SplitPart::All => unreachable!(),
    };
    Ok(ids.iter().filter_map(|id| queries.get(id).cloned()).collect())
}

fn build_stage(a: &StageArgs) -> CmdResult<Box<dyn FirstStage>> {
    let params = Bm25Params { k1: a.k1, b: a.b };
    params.validate()?;
    match a.stage {
        StageKind::Bm25 => {
            let index = match (&a.index, &a.debunks) {
                (Some(p), _) => {
                    require_files([p.as_path()])?;
                    InvertedIndex::read(p)?
                }
                (None, Some(d)) => {
                    require_files([d.as_path()])?;
                    build_index(&load_debunks(d)?, None)?
                }
                (None, None) => return Err(usage("bm25 needs --index or --debunks")),
            };
            let mut stage = LexicalStage::new(index, params);
            stage.translated_queries = a.translated;
            if let Some(t) = &a.translations {
                require_files([t.as_path()])?;
                stage.query_translations = Some(Translations::load(t)?);
            }
            Ok(Box::new(stage))
        }
        StageKind::Dense => {
            let Some(de) = &a.debunk_emb else {
                return Err(usage("dense search needs --debunk-emb"));
            };
            require_files([de.as_path()].into_iter().chain(a.query_emb.as_deref()).chain(a.head.as_deref()))?;
            let encoder = match &a.query_emb {
                Some(p) => QueryEncoder::Table(EmbeddingMatrix::load(p)?),
                None => QueryEncoder::Hash {
                    dim: a.hash_dim,
                    seed: effective_seed(a.hash_seed)?,
                },
            };
            let head = a.head.as_deref().map(load_head).transpose()?;
            Ok(Box::new(xdnr::pipeline::DenseStage {
                index: DenseIndex::new(EmbeddingMatrix::load(de)?),
                encoder,
                head,
            }))
        }
    }
}

fn search(a: &SearchArgs, out: &Path, threads: usize) -> CmdResult {
    require_files([a.queries.as_path()])?;
    let queries = select_queries(load_queries(&a.queries)?, a.split, a.splits.as_deref(), a.qrels.as_deref())?;
    let stage = build_stage(&a.stage)?;
    let runs = run_stage(stage.as_ref(), &queries, a.top_k, threads)?;
    let path = out.join("run.jsonl");
    write_run(&path, &runs)?;
    log::info!("{} queries searched with {} -> {}", runs.len(), stage.tag(), path.display());
    Ok(())
}

/// First-stage search over all queries; order of the output follows the
/// query order whatever the thread count.
fn run_stage(stage: &dyn FirstStage, queries: &[QueryClaim], top_k: usize, threads: usize) -> CmdResult<Vec<RankedList>> {
    let threads = threads.max(1);
    if threads == 1 || queries.len() < 2 {
        return Ok(queries
            .iter()
            .map(|q| stage.search(q, top_k))
            .collect::<xdnr::Result<Vec<_>>>()?);
    }
    let chunk = queries.len().div_ceil(threads);
    let parts: Vec<xdnr::Result<Vec<RankedList>>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|q| stage.search(q, top_k)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("search worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(queries.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn build_reranker(a: &ScorerArgs, qrels: Option<&Path>) -> CmdResult<Reranker> {
    let external = |a: &ScorerArgs| -> CmdResult<ExternalScorer> {
        let Some(cmd) = &a.scorer_cmd else {
            return Err(usage("external scorers need --scorer-cmd"));
        };
        if !(a.timeout > 0.0 && a.timeout.is_finite()) {
            return Err(usage("--timeout must be positive"));
        }
        let cfg = ExternalScorerConfig {
            program: cmd.clone(),
            args: a.scorer_args.clone(),
            timeout: Duration::from_secs_f64(a.timeout),
            max_candidates: a.max_candidates,
        };
        Ok(ExternalScorer::spawn(&cfg)?)
    };
    Ok(match a.scorer {
        ScorerArg::PassThrough => Reranker::PassThrough,
        ScorerArg::OracleQrels => {
            let Some(q) = qrels else {
                return Err(usage("the oracle scorer needs --qrels"));
            };
            require_files([q])?;
            Reranker::Oracle(Arc::new(Qrels::from_judgments(&load_qrels(q)?, GainMap::default())))
        }
        ScorerArg::ExternalPair => Reranker::Pair(Box::new(external(a)?)),
        ScorerArg::ExternalListwise => Reranker::Listwise(Box::new(external(a)?)),
    })
}

fn rerank_cmd(a: &RerankArgs, out: &Path) -> CmdResult {
    require_files([a.run.as_path(), a.queries.as_path(), a.debunks.as_path()])?;
    if a.scorer.depth == 0 {
        return Err(usage("--depth must be at least 1"));
    }
    let runs = read_run(&a.run)?;
    let queries = load_queries(&a.queries)?;
    let debunks = load_debunks(&a.debunks)?;
    let mut reranker = build_reranker(&a.scorer, a.qrels.as_deref())?;
    let mut outputs = Vec::with_capacity(runs.len());
    let (mut repaired, mut fell_back) = (0usize, 0usize);
    for list in runs {
        let q = queries.get(&list.query_id).ok_or_else(|| data(format!("run names unknown query {:?}", list.query_id)))?;
        match rerank(q, list, &mut reranker, a.scorer.depth, &debunks) {
            Ok(o) => {
                repaired += usize::from(o.repaired);
                outputs.push(o.list);
            }
            Err(RetrieveError::Scorer { stage1, source }) if a.fallback => {
                log::warn!("query {:?}: {source}; keeping first-stage order", stage1.query_id);
                fell_back += 1;
                outputs.push(stage1);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let path = out.join("reranked.jsonl");
    write_run(&path, &outputs)?;
    log::info!(
        "re-ranked {} lists ({repaired} repaired, {fell_back} fell back) -> {}",
        outputs.len(),
        path.display()
    );
    Ok(())
}

fn evaluate(a: &EvaluateArgs, out: &Path) -> CmdResult {
    require_files([a.run.as_path(), a.qrels.as_path()].into_iter().chain(a.queries.as_deref()))?;
    let runs = read_run(&a.run)?;
    let qrels = Qrels::from_judgments(&load_qrels(&a.qrels)?, GainMap::default());
    let langs: HashMap<String, String> = match &a.queries {
        Some(p) => analysis::query_languages(&load_queries(p)?),
        None => HashMap::new(),
    };
    let report = metrics::evaluate(&runs, &qrels, &langs)?;
    write_json(&out.join("eval.json"), &report)?;
    eprint!("{}", report.to_table());
    print_json(&json!({
        "mrr": report.overall.mrr,
        "ndcg@1": report.overall.ndcg1,
        "ndcg@5": report.overall.ndcg5,
    }));
    Ok(())
}

fn candidates(a: &CandidatesArgs, out: &Path) -> CmdResult {
    require_files([a.embeddings.as_path()])?;
    let m = EmbeddingMatrix::load(&a.embeddings)?;
    let pairs = analysis::candidate_pairs(&m, a.depth, a.threshold)?;
    analysis::write_candidates(&out.join("candidates.jsonl"), &pairs)?;
    print_json(&json!({ "pairs": pairs.len() }));
    Ok(())
}

/// One document per line; JSON lines contribute their "text" field, or
/// "claim" and "title" joined.
fn read_texts(path: &Path) -> CmdResult<Vec<String>> {
    let s = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !line.starts_with('{') {
            out.push(line.to_string());
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(line).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let field = |k: &str| v.get(k).and_then(|x| x.as_str()).unwrap_or("").to_string();
        let text = match v.get("text").and_then(|x| x.as_str()) {
            Some(t) => t.to_string(),
            None => [field("claim"), field("title")]
                .into_iter()
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(" "),
        };
        out.push(text);
    }
    Ok(out)
}

fn overlap(a: &OverlapArgs) -> CmdResult {
    require_files([a.test.as_path(), a.train.as_path()])?;
    let test = read_texts(&a.test)?;
    let train = read_texts(&a.train)?;
    let v = analysis::domain_overlap(test.iter().map(String::as_str), train.iter().map(String::as_str))?;
    print_json(&json!({ "overlap": v }));
    Ok(())
}

fn kappa(a: &KappaArgs) -> CmdResult {
    require_files([a.csv.as_path()])?;
    let (table, raters) = analysis::read_kappa_csv(&a.csv)?;
    let k = analysis::fleiss_kappa(&table, raters).map_err(|e| Failure::Data(e.into()))?;
    print_json(&json!({ "kappa": k, "items": table.len(), "raters": raters }));
    Ok(())
}

fn timegap(a: &TimegapArgs, out: &Path) -> CmdResult {
    let (debunks, queries, judgments) = load_data(&a.data)?;
    let s = analysis::time_gap_stats(&judgments, &queries, &debunks).map_err(|e| Failure::Data(e.into()))?;
    write_json(&out.join("timegap.json"), &s)?;
    print_json(&json!({
        "median_days": s.median_days,
        "fraction_debunk_first": s.fraction_debunk_first,
    }));
    Ok(())
}

fn bench(a: &BenchArgs, out: &Path) -> CmdResult {
    require_files([a.queries.as_path()].into_iter().chain(a.qrels.as_deref()))?;
    let mut queries = load_queries(&a.queries)?.items().to_vec();
    if let Some(n) = a.limit {
        queries.truncate(n);
    }
    let debunks = match &a.stage.debunks {
        Some(p) => load_debunks(p)?,
        None => corpus::Collection::new(Vec::new())?,
    };
    let stage = build_stage(&a.stage)?;
    let (reranker, depth) = match a.rerank {
        None => (Reranker::PassThrough, 1),
        Some(kind) => {
            let args = ScorerArgs {
                scorer: kind,
                depth: a.depth,
                scorer_cmd: None,
                scorer_args: Vec::new(),
                timeout: 30.0,
                max_candidates: None,
            };
            (build_reranker(&args, a.qrels.as_deref())?, a.depth)
        }
    };
    if !matches!(reranker, Reranker::PassThrough | Reranker::Oracle(_)) {
        return Err(usage("bench supports the pass-through and oracle-qrels re-rankers"));
    }
    let config = RerankConfig {
        top_k_stage1: a.top_k,
        depth: depth.min(a.top_k),
    };
    let mut pipeline = Pipeline::new(stage, reranker, config, Arc::new(debunks))?;
    let qrels = a
        .qrels
        .as_deref()
        .map(|p| load_qrels(p).map(|j| Qrels::from_judgments(&j, GainMap::default())))
        .transpose()?;
    let report = analysis::latency_bench(&mut pipeline, &queries, a.warmup, a.repeats, qrels.as_ref())?;
    write_json(&out.join("latency.json"), &report)?;
    print_json(&json!({
        "model_tag": report.model_tag,
        "p50": report.p50,
        "p90": report.p90,
        "mean": report.mean,
        "mrr": report.mrr,
    }));
    Ok(())
}

fn validate_data(a: &ValidateDataArgs) -> CmdResult {
    let (debunks, queries, judgments) = load_data(&a.data)?;
    let s = corpus::summarize(&debunks, &queries, &judgments);
    let mut report = serde_json::to_value(s).map_err(|e| data(e.to_string()))?;
    let mut mismatches = Vec::new();
    let mut check = |name: &str, got: usize, want: usize| {
        if got != want {
            mismatches.push(format!("{name}: got {got}, expected {want}"));
        }
    };
    check("queries", s.queries, MMTWEETS.queries);
    check("debunks", s.debunks, MMTWEETS.debunks);
    check("exact", s.exact, MMTWEETS.exact);
    check("partial", s.partial, MMTWEETS.partial);
    check("irrelevant", s.irrelevant, MMTWEETS.irrelevant);
    if let Some(p) = &a.splits {
        require_files([p.as_path()])?;
        let sp = split(&queries, &judgments, &SplitSpec::load(p)?)?;
        let pool = sp.train_with_validation();
        let pairs = build_train_pairs(&pool, &judgments, &debunks, &PairConfig::default())?;
        report["test_queries"] = json!(sp.test.len());
        report["train_queries"] = json!(pool.query_ids.len());
        report["validation_queries"] = json!(sp.validation.len());
        report["train_pairs"] = json!(pairs.len());
        check("test queries", sp.test.len(), MMTWEETS.test);
        check("train queries", pool.query_ids.len(), MMTWEETS.train);
        check("train pairs", pairs.len(), MMTWEETS.pairs);
    }
    print_json(&report);
    if a.expect_mmtweets && !mismatches.is_empty() {
        return Err(data(format!("dataset does not match MMTweets: {}", mismatches.join("; "))));
    }
    Ok(())
}
