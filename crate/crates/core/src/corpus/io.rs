use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{normalize, ClozeInstance, CorpusError, Dataset, EntitySpan, GAP_TOKEN};

/// Parses canonical JSON Lines. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_canonical(text: &str) -> Result<Dataset, CorpusError> {
    let mut instances = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ClozeInstance = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        inst.validate().map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !ids.insert(inst.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: inst.id,
            });
        }
        instances.push(inst);
    }
    Dataset::new(instances)
}

pub fn read_canonical(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    parse_canonical(&fs::read_to_string(path)?)
}

pub fn write_canonical(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for inst in dataset {
        let line = serde_json::to_string(inst).map_err(std::io::Error::from)?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Result of a CBT import. Instances whose answer never occurs in the
/// 20-sentence context cannot be windowed and are listed in `dropped`.
#[derive(Debug, Clone)]
pub struct CbtImport {
    pub dataset: Dataset,
    pub dropped: Vec<String>,
}

const CBT_GAP: &str = "XXXXX";

fn cbt_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

/// Parses the Children's Book Test block format: 20 numbered context lines
/// and a 21st line `21 query<TAB>answer<TAB><TAB>cand1|cand2|...`, blocks
/// separated by blank lines.
pub fn parse_cbt(text: &str, id_prefix: &str) -> Result<CbtImport, CorpusError> {
    let mut blocks: Vec<Vec<&str>> = vec![Vec::new()];
    for line in text.lines() {
        if line.trim().is_empty() {
            if !blocks.last().is_some_and(Vec::is_empty) {
                blocks.push(Vec::new());
            }
        } else {
            blocks.last_mut().expect("non-empty").push(line);
        }
    }
    blocks.retain(|b| !b.is_empty());

    let mut instances = Vec::new();
    let mut dropped = Vec::new();
    for (bi, block) in blocks.iter().enumerate() {
        let block_no = bi + 1;
        let err = |message: String| CorpusError::Cbt {
            block: block_no,
            message,
        };
        if block.len() != 21 {
            return Err(err(format!("expected 21 lines, found {}", block.len())));
        }
        let strip_number = |line: &str, expected: usize| -> Result<String, CorpusError> {
            let (num, rest) = line
                .trim_start()
                .split_once(' ')
                .unwrap_or((line.trim(), ""));
            if num.parse::<usize>().ok() != Some(expected) {
                return Err(err(format!("line {expected} is not numbered {expected}")));
            }
            Ok(rest.to_string())
        };

        let mut passage = Vec::new();
        for (li, line) in block[..20].iter().enumerate() {
            passage.extend(cbt_tokens(&strip_number(line, li + 1)?));
        }
        let last = strip_number(block[20], 21)?;
        let fields: Vec<&str> = last.split('\t').filter(|f| !f.trim().is_empty()).collect();
        if fields.len() != 3 {
            return Err(err(format!(
                "query line needs query, answer and candidates, found {} fields",
                fields.len()
            )));
        }
        let query: Vec<String> = fields[0]
            .split_whitespace()
            .map(|t| {
                if t == CBT_GAP {
                    GAP_TOKEN.to_string()
                } else {
                    t.to_lowercase()
                }
            })
            .collect();
        let answer = normalize(fields[1]);
        let candidates: Vec<String> = fields[2]
            .split('|')
            .map(normalize)
            .filter(|c| !c.is_empty())
            .collect();

        let entities = mark_occurrences(&passage, &candidates);
        let id = format!("{id_prefix}{block_no}");
        let inst = ClozeInstance {
            id: id.clone(),
            passage,
            entities,
            query,
            answer,
            candidates: Some(candidates),
        };
        if inst.gap_position().is_none() {
            return Err(err("query has no XXXXX gap".into()));
        }
        if inst.validate().is_err() {
            dropped.push(id);
            continue;
        }
        instances.push(inst);
    }
    Ok(CbtImport {
        dataset: Dataset::new(instances)?,
        dropped,
    })
}

pub fn read_cbt(path: impl AsRef<Path>) -> Result<CbtImport, CorpusError> {
    let path = path.as_ref();
    let prefix = path
        .file_stem()
        .map(|s| format!("{}-", s.to_string_lossy()))
        .unwrap_or_default();
    parse_cbt(&fs::read_to_string(path)?, &prefix)
}

/// Greedy left-to-right, longest-first matching of candidate token
/// sequences in the passage; matches never overlap.
fn mark_occurrences(passage: &[String], candidates: &[String]) -> Vec<EntitySpan> {
    let mut cands: Vec<Vec<&str>> = candidates.iter().map(|c| c.split(' ').collect()).collect();
    cands.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let mut spans = Vec::new();
    let mut i = 0;
    while i < passage.len() {
        let hit = cands.iter().find(|c| {
            i + c.len() <= passage.len()
                && c.iter().zip(&passage[i..]).all(|(a, b)| *a == b.as_str())
        });
        match hit {
            Some(c) => {
                spans.push(EntitySpan::new(i, i + c.len() - 1, c.join(" ")));
                i += c.len();
            }
            None => i += 1,
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::super::instance::fixtures::clinical;
    use super::*;

    fn cbt_block(answer_in_passage: bool) -> String {
        let mut s = String::new();
        for i in 1..=20 {
            let extra = if i == 3 { " Mary saw the Fox ." } else { "" };
            let extra2 = if i == 7 && answer_in_passage {
                " Tom ran home ."
            } else {
                ""
            };
            s.push_str(&format!("{i} line {i} text .{extra}{extra2}\n"));
        }
        s.push_str(
            "21 and then XXXXX laughed .\tTom\t\tTom|Mary|fox|dog|cat|bird|sun|moon|king|queen\n",
        );
        s
    }

    #[test]
    fn canonical_round_trip() {
        let d = Dataset::new(vec![clinical()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_canonical(&d, &p).unwrap();
        assert_eq!(read_canonical(&p).unwrap(), d);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"entities\":[[3,3,\"aspirin\"]"));
    }

    #[test]
    fn canonical_missing_gap_reports_line() {
        let mut i = clinical();
        let ok = serde_json::to_string(&i).unwrap();
        i.id = "c2".into();
        i.query = vec!["nothing".into()];
        let bad = serde_json::to_string(&i).unwrap();
        let err = parse_canonical(&format!("{ok}\n{bad}\n")).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn canonical_duplicate_id_rejected() {
        let ok = serde_json::to_string(&clinical()).unwrap();
        let err = parse_canonical(&format!("{ok}\n{ok}\n")).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn canonical_schema_violation() {
        let err = parse_canonical("{\"id\": 3}\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
        let err = parse_canonical("not json\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn cbt_block_parses_with_ten_candidates() {
        let text = format!("{}\n{}", cbt_block(true), cbt_block(true));
        let imp = parse_cbt(&text, "t-").unwrap();
        assert_eq!(imp.dataset.len(), 2);
        let inst = &imp.dataset[0];
        assert_eq!(inst.candidates.as_ref().unwrap().len(), 10);
        assert_eq!(inst.answer, "tom");
        assert_eq!(inst.query[2], GAP_TOKEN);
        // only tom, mary and fox occur in the context
        let mut keys: Vec<String> = inst
            .distinct_entities()
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        keys.sort();
        assert_eq!(keys, vec!["fox", "mary", "tom"]);
        assert_eq!(imp.dataset[1].id, "t-2");
    }

    #[test]
    fn cbt_answer_absent_from_context_is_dropped() {
        let imp = parse_cbt(&cbt_block(false), "").unwrap();
        assert!(imp.dataset.is_empty());
        assert_eq!(imp.dropped, vec!["1".to_string()]);
    }

    #[test]
    fn cbt_short_block_is_error() {
        let text: String = cbt_block(true)
            .lines()
            .skip(1)
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            parse_cbt(&text, ""),
            Err(CorpusError::Cbt { block: 1, .. })
        ));
    }
}
