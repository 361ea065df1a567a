use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const SMALL: &[&str] = &[
    "--set",
    "datagen.n_concepts=5",
    "--set",
    "datagen.values_per_pair=8",
    "--set",
    "datagen.triplet_cap=4",
    "--set",
    "train.epochs=2",
    "--set",
    "index.nprobe=4",
    "--seed",
    "7",
];

fn numcolbert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_numcolbert")).args(args).output().expect("spawn numcolbert")
}

fn ok(args: &[&str]) -> String {
    let mut all = args.to_vec();
    all.extend_from_slice(SMALL);
    let out = numcolbert(&all);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn smoke_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.ncbm");
    let index = dir.path().join("index.ncbi");
    let run = dir.path().join("run.txt");
    let report = dir.path().join("report.csv");
    let start = Instant::now();

    let gen = ok(&["gen-data", "--out", p(&data)]);
    assert!(gen.starts_with("512 sentences"), "{gen}");
    ok(&["train", "--data", p(&data), "--out", p(&model), "--log", p(&dir.path().join("log.csv"))]);
    ok(&["index", "--corpus", p(&data.join("corpus.jsonl")), "--model", p(&model), "--out", p(&index)]);
    let hits = ok(&[
        "search",
        "--index",
        p(&index),
        "--corpus",
        p(&data.join("corpus.jsonl")),
        "--model",
        p(&model),
        "--queries",
        p(&data.join("queries.jsonl")),
        "--top-k",
        "100",
        "--run-out",
        p(&run),
    ]);
    assert!(hits.lines().count() > 24);
    let table = ok(&[
        "eval",
        "--run",
        p(&run),
        "--qrels",
        p(&data.join("qrels.txt")),
        "--queries",
        p(&data.join("queries.jsonl")),
        "--csv",
        p(&report),
    ]);
    assert!(table.contains("nDCG@10"), "{table}");
    let csv = std::fs::read_to_string(&report).unwrap();
    let all = csv.lines().find(|l| l.starts_with("all,")).expect("overall row");
    let ndcg: f64 = all.split(',').nth(2).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&ndcg));
    assert!(start.elapsed().as_secs() < 60, "took {:?}", start.elapsed());
}

#[test]
fn oracle_run_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", p(&data)]);
    // relevant documents first, in any order
    let qrels = std::fs::read_to_string(data.join("qrels.txt")).unwrap();
    let mut run = String::new();
    let mut rank = std::collections::HashMap::new();
    for line in qrels.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f[3] != "0" {
            let r = rank.entry(f[0].to_string()).or_insert(0usize);
            *r += 1;
            run.push_str(&format!("{} Q0 {} {} {} oracle\n", f[0], f[2], *r, 1000 - *r));
        }
    }
    std::fs::write(dir.path().join("oracle.txt"), run).unwrap();
    let csv = dir.path().join("r.csv");
    ok(&[
        "eval",
        "--run",
        p(&dir.path().join("oracle.txt")),
        "--qrels",
        p(&data.join("qrels.txt")),
        "--csv",
        p(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let all = text.lines().find(|l| l.starts_with("all,")).unwrap();
    assert_eq!(all.split(',').nth(2).unwrap().parse::<f64>().unwrap(), 1.0);
}

#[test]
fn bench_code_size_shrinks_with_nbits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let csv = dir.path().join("bench.csv");
    ok(&["gen-data", "--out", p(&data)]);
    ok(&["bench", "--data", p(&data), "--nprobe", "2", "--warmup", "1", "--csv", p(&csv)]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let sizes: Vec<(u8, usize)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[7].parse().unwrap())
        })
        .collect();
    assert_eq!(sizes.iter().map(|s| s.0).collect::<Vec<_>>(), [8, 4, 2, 1]);
    assert!(sizes.windows(2).all(|w| w[1].1 <= w[0].1), "{sizes:?}");
}

#[test]
fn identical_invocations_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", p(&data)]);
    let mut models = Vec::new();
    for name in ["a.ncbm", "b.ncbm"] {
        let m = dir.path().join(name);
        ok(&["train", "--data", p(&data), "--out", p(&m), "--threads", "1"]);
        models.push(std::fs::read(&m).unwrap());
    }
    assert_eq!(models[0], models[1]);
    let mut indexes = Vec::new();
    for name in ["a.ncbi", "b.ncbi"] {
        let i = dir.path().join(name);
        ok(&["index", "--corpus", p(&data.join("corpus.jsonl")), "--out", p(&i)]);
        indexes.push(std::fs::read(&i).unwrap());
    }
    assert_eq!(indexes[0], indexes[1]);
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| numcolbert(args).status.code();
    assert_eq!(code(&["config"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(1));
    assert_eq!(code(&["gen-data"]), Some(1));
    assert_eq!(code(&["config", "--set", "no.such.key=1"]), Some(1));
    assert_eq!(code(&["config", "--set", "index.nbits=3"]), Some(1));
    assert_eq!(code(&["train", "--data", "/definitely/missing", "--out", "m"]), Some(2));
    let garbage = dir.path().join("garbage.ncbi");
    std::fs::write(&garbage, b"not an index").unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, "").unwrap();
    assert_eq!(
        code(&["search", "--index", p(&garbage), "--corpus", p(&corpus), "--query", "over 5 gb"]),
        Some(2)
    );
    let run = dir.path().join("run.txt");
    std::fs::write(&run, "q1 Q0 d1 1 1.0 t\nq1 Q0 d2 2 5.0 t\n").unwrap();
    assert_eq!(code(&["eval", "--run", p(&run), "--qrels", p(&run)]), Some(2));
}
