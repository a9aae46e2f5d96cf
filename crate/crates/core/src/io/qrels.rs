//! TREC qrels: one `qid 0 docid grade` judgment per line.

use std::path::Path;

use super::write_atomic;
use crate::error::{Error, Result};
use crate::store::QrelSet;

/// Parses qrels text. Duplicate `(qid, docid)` pairs keep the larger grade;
/// each duplicate produces a warning string.
pub fn parse_qrels(text: &str) -> Result<(QrelSet, Vec<String>)> {
    let mut qrels = QrelSet::new();
    let mut warnings = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 4 fields `qid 0 docid grade`, found {}", fields.len()),
            });
        }
        let grade: i64 = fields[3].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("grade {:?} is not an integer", fields[3]),
        })?;
        if grade < 0 || grade > u32::MAX as i64 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("grade {grade} out of range"),
            });
        }
        if qrels.insert(fields[0], fields[2], grade as u32) {
            warnings.push(format!(
                "line {lineno}: duplicate judgment for ({}, {}); keeping the larger grade",
                fields[0], fields[2]
            ));
        }
    }
    Ok((qrels, warnings))
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<QrelSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (qrels, warnings) = parse_qrels(&text)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(qrels)
}

pub fn format_qrels(qrels: &QrelSet) -> String {
    let mut out = String::new();
    for (q, d, g) in qrels.iter() {
        out.push_str(&format!("{q} 0 {d} {g}\n"));
    }
    out
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &QrelSet) -> Result<()> {
    write_atomic(path.as_ref(), format_qrels(qrels).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let (q, w) = parse_qrels("q1 0 d1 1\n").unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(1));
        assert!(w.is_empty());

        let (q, _) = parse_qrels("").unwrap();
        assert!(q.is_empty());

        let (q, w) = parse_qrels("q1 0 d1 1\nq1 0 d1 2\n").unwrap();
        assert_eq!(q.grade("q1", "d1"), Some(2));
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        assert!(matches!(parse_qrels("q1 0 d1 1\nq2 0 d2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_qrels("q1 0 d1 x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_qrels("\nq1 0 d1 -1\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip() {
        let (q, _) = parse_qrels("q2 0 d9 0\nq1 0 d1 3\nq1 0 d0 1\n").unwrap();
        let (back, _) = parse_qrels(&format_qrels(&q)).unwrap();
        assert_eq!(back, q);
    }
}
