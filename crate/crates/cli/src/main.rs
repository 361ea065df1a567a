//! `numcolbert` command-line pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use numcolbert::config::Config;
use numcolbert::datagen::io::{read_qrels, read_queries, read_sentences};
use numcolbert::datagen::{Dataset, QueryRecord, Sentence};
use numcolbert::embedder::encode_query;
use numcolbert::eval::{
    bench_search, conditions_of, encode_corpus, encode_queries, evaluate, export_csv, export_embeddings, export_pooled,
    export_silhouette, retrieve, Run,
};
use numcolbert::index::{build_index, builtin_retrievers, CompressedIndex, IndexConfig};
use numcolbert::model::ModelParams;
use numcolbert::trainer::{build_triples, save_log, train};

#[derive(Parser)]
#[command(name = "numcolbert", version, about = "Late-interaction retrieval with gated numeric query tokens")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// `key = value` config file applied before `--set` overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Seed for every random stream (data, init, shuffling, k-means).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; affects speed only. Defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, queries, qrels and triplets.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Encode a corpus and build a compressed index.
    Index {
        /// corpus.jsonl
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint; a fresh seeded model when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search an index with one query or a queries file.
    Search {
        #[arg(long)]
        index: PathBuf,
        /// corpus.jsonl the index was built from, for document ids.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Query text.
        #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
        query: Option<String>,
        /// queries.jsonl
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Defaults to `index.nprobe`.
        #[arg(long)]
        nprobe: Option<usize>,
        #[arg(long, default_value = "plaid")]
        retriever: String,
        /// Write a TREC run file.
        #[arg(long)]
        run_out: Option<PathBuf>,
    },
    /// Score a run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// queries.jsonl, for the per-operator breakdown.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Latency, size and nDCG@10 over an nbits by nprobe grid.
    Bench {
        /// Dataset directory with corpus, queries and qrels.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "8,4,2,1")]
        nbits: Vec<u8>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        nprobe: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        top_k: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the effective configuration, or every accepted key.
    Config {
        #[arg(long)]
        keys: bool,
    },
    /// Write numeric query-token embeddings with EQ/GT/LT labels as CSV.
    ExportEmbeddings {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// One mean-pooled quantity embedding per query instead of one row per token.
        #[arg(long)]
        pooled: bool,
    },
}

enum Failure {
    Usage(String),
    Data(String),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

impl From<numcolbert::Error> for Failure {
    fn from(e: numcolbert::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn usage(e: numcolbert::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn load_config(g: &Global) -> Outcome<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).map_err(usage)?,
        None => Config::default(),
    };
    for kv in &g.overrides {
        cfg.apply_override(kv).map_err(usage)?;
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn require_file(p: &Path) -> Outcome {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{} does not exist or is not a file", p.display())))
    }
}

fn require_dir(p: &Path) -> Outcome {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Failure::Data(format!("{} does not exist or is not a directory", p.display())))
    }
}

fn model_or_init(path: Option<&Path>, cfg: &Config) -> Outcome<ModelParams> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(ModelParams::load(p)?)
        }
        None => Ok(ModelParams::init(cfg.model.clone())),
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("writing {}: {e}", path.display())))
}

fn doc_ids(corpus: &[Sentence]) -> Vec<String> {
    corpus.iter().map(|s| s.id.clone()).collect()
}

fn cmd_gen_data(cfg: &Config, out: &Path) -> Outcome {
    let ds = Dataset::generate(&cfg.datagen)?;
    ds.save(out)?;
    println!(
        "{} sentences, {} augmented, {} eval queries, {} train queries, {} triplets -> {}",
        ds.corpus.len(),
        ds.augmented.len(),
        ds.queries.len(),
        ds.train_queries.len(),
        ds.triplets.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &Config, data: &Path, out: &Path, log: Option<&Path>, init: Option<&Path>) -> Outcome {
    require_dir(data)?;
    let ds = Dataset::load(data)?;
    let params = model_or_init(init, cfg)?;
    let triples = build_triples(&ds.triplets, &ds.lookup(), &params)?;
    let outcome = train(&triples, params, &cfg.train, &cfg.loss)?;
    outcome.params.save(out)?;
    if let Some(log) = log {
        save_log(&outcome.log, log)?;
    }
    for (e, m) in outcome.epoch_means.iter().enumerate() {
        println!("epoch {:>3}  mean loss {m:.6}", e + 1);
    }
    println!("{} steps -> {}", outcome.log.len(), out.display());
    Ok(())
}

fn cmd_index(cfg: &Config, corpus: &Path, model: Option<&Path>, out: &Path) -> Outcome {
    require_file(corpus)?;
    let sentences = read_sentences(corpus)?;
    let params = model_or_init(model, cfg)?;
    let docs = encode_corpus(&sentences, &params);
    let index = build_index(&docs, &cfg.index)?;
    index.save(out)?;
    println!(
        "{} documents, {} tokens, k={}, nbits={}, {} bytes -> {}",
        index.n_docs(),
        index.n_tokens(),
        index.k(),
        index.nbits,
        index.byte_len(),
        out.display()
    );
    Ok(())
}

struct SearchArgs<'a> {
    index: &'a Path,
    corpus: &'a Path,
    model: Option<&'a Path>,
    query: Option<&'a str>,
    queries: Option<&'a Path>,
    top_k: usize,
    nprobe: Option<usize>,
    retriever: &'a str,
    run_out: Option<&'a Path>,
}

fn cmd_search(cfg: &Config, a: SearchArgs<'_>) -> Outcome {
    if a.top_k == 0 {
        return Err(Failure::Usage("--top-k must be positive".into()));
    }
    let retriever = builtin_retrievers().get(a.retriever).map_err(usage)?;
    require_file(a.index)?;
    require_file(a.corpus)?;
    let index = CompressedIndex::load(a.index)?;
    let sentences = read_sentences(a.corpus)?;
    let params = model_or_init(a.model, cfg)?;
    let mut sp = cfg.index.search_params(a.top_k);
    if let Some(n) = a.nprobe {
        if n == 0 {
            return Err(Failure::Usage("--nprobe must be positive".into()));
        }
        sp.nprobe = n;
    }
    let ids = doc_ids(&sentences);
    let queries: Vec<QueryRecord> = match (a.query, a.queries) {
        (Some(text), _) => {
            // validate up front so an empty query is a usage error
            encode_query(text, &params, &cfg.gate).map_err(usage)?;
            vec![QueryRecord {
                qid: "q1".into(),
                text: text.to_string(),
                value: f64::NAN,
                cmp: numcolbert::quantity::Cmp::Eq,
                unit: None,
                concept: String::new(),
            }]
        }
        (None, Some(p)) => {
            require_file(p)?;
            read_queries(p)?
        }
        (None, None) => return Err(Failure::Usage("give --query or --queries".into())),
    };
    let encoded = encode_queries(&queries, &params, &cfg.gate)?;
    let run = retrieve(&index, &ids, &queries, &encoded, retriever.as_ref(), &sp)?;
    let text: HashMap<&str, &str> = sentences.iter().map(|s| (s.id.as_str(), s.text.as_str())).collect();
    for q in &queries {
        println!("{}\t{}", q.qid, q.text);
        for (rank, (doc, score)) in run.queries[&q.qid].iter().enumerate().take(a.top_k) {
            println!("  {:>3}  {score:>10.4}  {doc}  {}", rank + 1, text.get(doc.as_str()).unwrap_or(&""));
        }
    }
    if let Some(p) = a.run_out {
        run.save(p, "numcolbert")?;
    }
    Ok(())
}

fn cmd_eval(run: &Path, qrels: &Path, queries: Option<&Path>, csv: Option<&Path>) -> Outcome {
    require_file(run)?;
    require_file(qrels)?;
    let run = Run::load(run)?;
    let qrels = read_qrels(qrels)?;
    let conditions = match queries {
        Some(p) => {
            require_file(p)?;
            conditions_of(&read_queries(p)?)
        }
        None => HashMap::new(),
    };
    let report = evaluate(&run, &qrels, &conditions);
    print!("{}", report.to_table());
    if report.excluded > 0 {
        println!("({} queries without relevant documents excluded)", report.excluded);
    }
    if let Some(p) = csv {
        write_text(p, &report.to_csv())?;
    }
    Ok(())
}

struct BenchArgs<'a> {
    data: &'a Path,
    model: Option<&'a Path>,
    nbits: &'a [u8],
    nprobe: &'a [usize],
    top_k: usize,
    warmup: usize,
    csv: Option<&'a Path>,
}

fn cmd_bench(cfg: &Config, a: BenchArgs<'_>) -> Outcome {
    if a.top_k == 0 || a.nprobe.contains(&0) {
        return Err(Failure::Usage("--top-k and --nprobe values must be positive".into()));
    }
    for &b in a.nbits {
        numcolbert::index::check_nbits(b).map_err(usage)?;
    }
    require_dir(a.data)?;
    let ds = Dataset::load(a.data)?;
    let params = model_or_init(a.model, cfg)?;
    let docs = encode_corpus(&ds.corpus, &params);
    let encoded = encode_queries(&ds.queries, &params, &cfg.gate)?;
    let ids = doc_ids(&ds.corpus);
    let conditions = conditions_of(&ds.queries);
    let plaid = builtin_retrievers().get("plaid").map_err(usage)?;
    let mut csv = String::from("nbits,nprobe,mean_ms,median_ms,brute_mean_ms,speedup,index_bytes,code_bytes,mean_candidates,ndcg10\n");
    println!(
        "{:>5} {:>6} {:>9} {:>9} {:>9} {:>8} {:>12} {:>12} {:>8}",
        "nbits", "nprobe", "mean_ms", "median_ms", "brute_ms", "speedup", "index_bytes", "code_bytes", "nDCG@10"
    );
    for &nbits in a.nbits {
        let index = build_index(&docs, &IndexConfig { nbits, ..cfg.index.clone() })?;
        for &nprobe in a.nprobe {
            let mut sp = cfg.index.search_params(a.top_k);
            sp.nprobe = nprobe.min(index.k());
            let b = bench_search(&index, &docs, &encoded, &sp, a.warmup)?;
            let run = retrieve(&index, &ids, &ds.queries, &encoded, plaid.as_ref(), &sp)?;
            let ndcg = evaluate(&run, &ds.qrels, &conditions).overall.ndcg10;
            println!(
                "{nbits:>5} {nprobe:>6} {:>9.3} {:>9.3} {:>9.3} {:>8.2} {:>12} {:>12} {ndcg:>8.4}",
                b.mean_ms, b.median_ms, b.brute_mean_ms, b.speedup, b.index_bytes, b.code_bytes
            );
            csv.push_str(&format!(
                "{nbits},{nprobe},{:.6},{:.6},{:.6},{:.4},{},{},{:.2},{ndcg:.6}\n",
                b.mean_ms, b.median_ms, b.brute_mean_ms, b.speedup, b.index_bytes, b.code_bytes, b.mean_candidates
            ));
        }
    }
    if let Some(p) = a.csv {
        write_text(p, &csv)?;
    }
    Ok(())
}

fn cmd_export(cfg: &Config, model: Option<&Path>, queries: &Path, out: &Path, pooled: bool) -> Outcome {
    require_file(queries)?;
    let queries = read_queries(queries)?;
    let params = model_or_init(model, cfg)?;
    let rows = if pooled {
        export_pooled(&queries, &params, &cfg.gate)?
    } else {
        export_embeddings(&queries, &params, &cfg.gate)?
    };
    write_text(out, &export_csv(&rows))?;
    println!("{} rows, silhouette {:.4} -> {}", rows.len(), export_silhouette(&rows), out.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli.global)?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Config { keys } => {
            if *keys {
                numcolbert::config::KEYS.iter().for_each(|k| println!("{k}"));
            } else {
                print!("{}", cfg.to_text());
            }
            Ok(())
        }
        Command::GenData { out } => cmd_gen_data(&cfg, out),
        Command::Train { data, out, log, init } => cmd_train(&cfg, data, out, log.as_deref(), init.as_deref()),
        Command::Index { corpus, model, out } => cmd_index(&cfg, corpus, model.as_deref(), out),
        Command::Search {
            index,
            corpus,
            model,
            query,
            queries,
            top_k,
            nprobe,
            retriever,
            run_out,
        } => cmd_search(
            &cfg,
            SearchArgs {
                index,
                corpus,
                model: model.as_deref(),
                query: query.as_deref(),
                queries: queries.as_deref(),
                top_k: *top_k,
                nprobe: *nprobe,
                retriever,
                run_out: run_out.as_deref(),
            },
        ),
        Command::Eval { run, qrels, queries, csv } => cmd_eval(run, qrels, queries.as_deref(), csv.as_deref()),
        Command::Bench {
            data,
            model,
            nbits,
            nprobe,
            top_k,
            warmup,
            csv,
        } => cmd_bench(
            &cfg,
            BenchArgs {
                data,
                model: model.as_deref(),
                nbits,
                nprobe,
                top_k: *top_k,
                warmup: *warmup,
                csv: csv.as_deref(),
            },
        ),
        Command::ExportEmbeddings {
            model,
            queries,
            out,
            pooled,
        } => cmd_export(&cfg, model.as_deref(), queries, out, *pooled),
    }
}

fn main() -> ExitCode {
    // let a closed stdout (e.g. `| head`) end the process quietly
    std::panic::set_hook(Box::new(|info| {
        let msg = info.to_string();
        if msg.contains("Broken pipe") {
            std::process::exit(0);
        }
        eprintln!("{msg}");
    }));
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            match f {
                Failure::Usage(_) => ExitCode::from(1),
                Failure::Data(_) => ExitCode::from(2),
            }
        }
    }
}
