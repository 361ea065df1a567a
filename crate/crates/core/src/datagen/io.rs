//! On-disk formats: JSONL corpus and queries, TREC qrels, TSV triplets.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, QueryRecord, Qrels, Sentence, Triplet};
use crate::error::{Error, Result};
use crate::quantity::{parse_condition, Cmp, UnitId, UnitTable};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const AUGMENTED_FILE: &str = "augmented.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const TRAIN_QUERIES_FILE: &str = "train_queries.jsonl";
pub const QRELS_FILE: &str = "qrels.txt";
pub const TRIPLETS_FILE: &str = "triplets.tsv";

#[derive(Serialize, Deserialize)]
struct SentenceRow {
    id: String,
    text: String,
    concept: String,
    value: f64,
    unit: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct QueryRow {
    qid: String,
    text: String,
    value: f64,
    cmp: String,
    unit: Option<String>,
}

fn unit_name(u: Option<UnitId>) -> Option<String> {
    u.map(|u| UnitTable::builtin().get(u).name.clone())
}

fn parse_unit(name: Option<&str>, file: &str, line: usize) -> Result<Option<UnitId>> {
    match name {
        None => Ok(None),
        Some(n) => UnitTable::builtin().by_name(n).map(Some).ok_or_else(|| Error::Parse {
            file: file.into(),
            line,
            detail: format!("unknown unit {n:?}"),
        }),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, l) in BufReader::new(f).lines().enumerate() {
        let l = l.map_err(|e| Error::io(path, e))?;
        if !l.trim().is_empty() {
            out.push((i + 1, l));
        }
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        let line = serde_json::to_string(&r).expect("rows serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    lines(path)?
        .into_iter()
        .map(|(n, l)| {
            serde_json::from_str(&l).map(|r| (n, r)).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: n,
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_sentences(path: &Path, sentences: &[Sentence]) -> Result<()> {
    write_jsonl(
        path,
        sentences.iter().map(|s| SentenceRow {
            id: s.id.clone(),
            text: s.text.clone(),
            concept: s.concept.clone(),
            value: s.value,
            unit: unit_name(s.unit),
        }),
    )
}

pub fn read_sentences(path: &Path) -> Result<Vec<Sentence>> {
    let file = path.display().to_string();
    read_jsonl::<SentenceRow>(path)?
        .into_iter()
        .map(|(n, r)| {
            Ok(Sentence {
                unit: parse_unit(r.unit.as_deref(), &file, n)?,
                id: r.id,
                text: r.text,
                concept: r.concept,
                value: r.value,
            })
        })
        .collect()
}

pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<()> {
    write_jsonl(
        path,
        queries.iter().map(|q| QueryRow {
            qid: q.qid.clone(),
            text: q.text.clone(),
            value: q.value,
            cmp: q.cmp.as_str().to_string(),
            unit: unit_name(q.unit),
        }),
    )
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let file = path.display().to_string();
    read_jsonl::<QueryRow>(path)?
        .into_iter()
        .map(|(n, r)| {
            let cmp = Cmp::parse(&r.cmp).ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: n,
                detail: format!("unknown comparison {:?}", r.cmp),
            })?;
            Ok(QueryRecord {
                unit: parse_unit(r.unit.as_deref(), &file, n)?,
                qid: r.qid,
                text: r.text,
                value: r.value,
                cmp,
                concept: String::new(),
            })
        })
        .collect()
}

pub fn write_qrels(path: &Path, qrels: &Qrels) -> Result<()> {
    let mut w = create(path)?;
    for (qid, docs) in qrels {
        for (doc, grade) in docs {
            writeln!(w, "{qid} 0 {doc} {grade}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let mut out = Qrels::new();
    for (n, l) in lines(path)? {
        let f: Vec<&str> = l.split_whitespace().collect();
        let grade = (f.len() == 4).then(|| f[3].parse::<u8>().ok()).flatten();
        let Some(grade) = grade else {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: n,
                detail: "expected `qid 0 docid grade`".into(),
            });
        };
        out.entry(f[0].to_string()).or_default().push((f[2].to_string(), grade));
    }
    Ok(out)
}

pub fn write_triplets(path: &Path, triplets: &[Triplet]) -> Result<()> {
    let mut w = create(path)?;
    for t in triplets {
        writeln!(w, "{}\t{}\t{}\t{}", t.query, t.positive, t.negative, t.provenance).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_triplets(path: &Path) -> Result<Vec<Triplet>> {
    let file = path.display().to_string();
    let bad = |line: usize, detail: String| Error::Parse {
        file: file.clone(),
        line,
        detail,
    };
    lines(path)?
        .into_iter()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(n, format!("expected 4 tab-separated fields, found {}", f.len())));
            }
            let provenance = Provenance::parse(f[3]).ok_or_else(|| bad(n, format!("unknown provenance {:?}", f[3])))?;
            let condition = parse_condition(f[0]).ok_or_else(|| bad(n, format!("query {:?} has no condition", f[0])))?;
            Ok(Triplet {
                query: f[0].to_string(),
                condition,
                positive: f[1].to_string(),
                negative: f[2].to_string(),
                provenance,
            })
        })
        .collect()
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_sentences(&dir.join(CORPUS_FILE), &self.corpus)?;
        write_sentences(&dir.join(AUGMENTED_FILE), &self.augmented)?;
        write_queries(&dir.join(QUERIES_FILE), &self.queries)?;
        write_queries(&dir.join(TRAIN_QUERIES_FILE), &self.train_queries)?;
        write_qrels(&dir.join(QRELS_FILE), &self.qrels)?;
        write_triplets(&dir.join(TRIPLETS_FILE), &self.triplets)
    }

    /// Loads a saved dataset; missing optional files read as empty.
    pub fn load(dir: &Path) -> Result<Self> {
        let optional = |name: &str| dir.join(name).exists();
        Ok(Self {
            corpus: read_sentences(&dir.join(CORPUS_FILE))?,
            augmented: if optional(AUGMENTED_FILE) {
                read_sentences(&dir.join(AUGMENTED_FILE))?
            } else {
                Vec::new()
            },
            queries: read_queries(&dir.join(QUERIES_FILE))?,
            train_queries: if optional(TRAIN_QUERIES_FILE) {
                read_queries(&dir.join(TRAIN_QUERIES_FILE))?
            } else {
                Vec::new()
            },
            qrels: read_qrels(&dir.join(QRELS_FILE))?,
            triplets: if optional(TRIPLETS_FILE) {
                read_triplets(&dir.join(TRIPLETS_FILE))?
            } else {
                Vec::new()
            },
        })
    }
}
