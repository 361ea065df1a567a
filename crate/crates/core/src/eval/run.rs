//! TREC run files: `qid Q0 docid rank score tag`.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Ranked `(doc_id, score)` lists by query id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Run {
    pub queries: BTreeMap<String, Vec<(String, f64)>>,
}

impl Run {
    pub fn insert(&mut self, qid: impl Into<String>, ranking: Vec<(String, f64)>) {
        self.queries.insert(qid.into(), ranking);
    }

    /// Scores must be non-increasing and documents unique within a query.
    pub fn validate(&self) -> Result<()> {
        for (qid, ranking) in &self.queries {
            let mut seen = HashSet::new();
            for (i, (doc, score)) in ranking.iter().enumerate() {
                if !seen.insert(doc.as_str()) {
                    return Err(Error::DuplicateRunEntry {
                        qid: qid.clone(),
                        doc: doc.clone(),
                    });
                }
                if i > 0 && !(ranking[i - 1].1 >= *score) {
                    return Err(Error::UnsortedRun { qid: qid.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for (qid, ranking) in &self.queries {
            for (i, (doc, score)) in ranking.iter().enumerate() {
                out.push_str(&format!("{qid} Q0 {doc} {} {score} {tag}\n", i + 1));
            }
        }
        out
    }

    pub fn save(&self, path: &Path, tag: &str) -> Result<()> {
        self.validate()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_trec(tag).as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses and validates; entries are ordered by their rank column.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut rows: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |detail: &str| Error::Parse {
                file: source.to_string(),
                line: n + 1,
                detail: detail.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(bad("expected `qid Q0 docid rank score tag`"));
            }
            let rank: usize = f[3].parse().map_err(|_| bad("rank is not an integer"))?;
            let score: f64 = f[4].parse().map_err(|_| bad("score is not a number"))?;
            rows.entry(f[0].to_string()).or_default().push((rank, f[2].to_string(), score));
        }
        let mut run = Run::default();
        for (qid, mut r) in rows {
            r.sort_by_key(|e| e.0);
            run.insert(qid, r.into_iter().map(|(_, d, s)| (d, s)).collect());
        }
        run.validate()?;
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run() -> Run {
        let mut r = Run::default();
        r.insert("q1", vec![("d2".into(), 3.5), ("d1".into(), 3.5), ("d9".into(), -1.25)]);
        r.insert("q2", vec![("d4".into(), 0.1)]);
        r
    }

    #[test]
    fn trec_roundtrip() {
        let r = run();
        let text = r.to_trec("numcolbert");
        assert!(text.starts_with("q1 Q0 d2 1 3.5 numcolbert\n"));
        assert_eq!(Run::parse(&text, "mem").unwrap(), r);
    }

    #[test]
    fn ordering_and_duplicates_are_rejected() {
        let mut r = run();
        r.insert("q3", vec![("a".into(), 1.0), ("b".into(), 2.0)]);
        assert!(matches!(r.validate(), Err(Error::UnsortedRun { .. })));
        let mut r = run();
        r.insert("q3", vec![("a".into(), 2.0), ("a".into(), 1.0)]);
        assert!(matches!(r.validate(), Err(Error::DuplicateRunEntry { .. })));
        assert!(matches!(Run::parse("q1 Q0 d1 x 1.0 t\n", "mem"), Err(Error::Parse { line: 1, .. })));
        assert!(Run::parse("q1 Q0 d1 1 1.0 t\nq1 Q0 d2 2 2.0 t\n", "mem").is_err());
    }
}
