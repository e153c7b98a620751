//! Text formats read and written by the command-line tool.
//!
//! * counts: CSV with header `id,count[,baseline]`; baseline defaults to 1
//! * adjacency: CSV edge list `id,id`, optional `id,id`-style header
//! * windows: JSON lines, each an array of ids (strings or integers)
//! * ordering: one id per line
//! * group assignment: one 1-based group number per line, one line per window
//!
//! Blank lines and lines starting with `#` are ignored in the line-oriented
//! formats. Every error carries the 1-based line it was found on.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::graph::EliminationOrdering;
use crate::windows::{AdjacencyList, WindowFamily};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

/// Vertex ids in file order, with reverse lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new(ids: Vec<String>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(format!("duplicate id {id:?}"));
            }
        }
        Ok(Self { ids, index })
    }

    /// Ids `1..=n`.
    pub fn numbered(n: usize) -> Self {
        Self::new((1..=n).map(|i| i.to_string()).collect()).expect("distinct")
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn resolve(&self, id: &str, line: usize) -> Result<usize, ParseError> {
        self.get(id).ok_or_else(|| ParseError::new(line, format!("unknown id {id:?}")))
    }
}

/// Parsed counts file.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsTable {
    pub ids: IdMap,
    pub counts: Vec<u32>,
    pub baselines: Vec<f64>,
}

fn csv_line(err: &csv::Error) -> usize {
    err.position().map_or(0, |p| p.line() as usize)
}

/// Reads a counts CSV.
pub fn parse_counts(text: &str) -> Result<CountsTable, ParseError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| ParseError::new(csv_line(&e).max(1), e.to_string()))?.clone();
    let names: Vec<String> = headers.iter().map(str::to_ascii_lowercase).collect();
    let column = |name: &str| names.iter().position(|h| h == name);
    let (id_col, count_col) = match (column("id"), column("count")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(ParseError::new(1, "header must name `id` and `count` columns")),
    };
    let baseline_col = column("baseline");
    let mut ids = Vec::new();
    let mut counts = Vec::new();
    let mut baselines = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| ParseError::new(csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(id_col);
        if id.is_empty() {
            return Err(ParseError::new(line, "empty id"));
        }
        let count: u32 = field(count_col)
            .parse()
            .map_err(|_| ParseError::new(line, format!("count {:?} is not a nonnegative integer", field(count_col))))?;
        let baseline = match baseline_col.map(field) {
            None | Some("") => 1.0,
            Some(b) => {
                let v: f64 = b.parse().map_err(|_| ParseError::new(line, format!("baseline {b:?} is not a number")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(ParseError::new(line, format!("baseline {b:?} must be finite and positive")));
                }
                v
            }
        };
        if !seen.insert(id.to_string()) {
            return Err(ParseError::new(line, format!("duplicate id {id:?}")));
        }
        ids.push(id.to_string());
        counts.push(count);
        baselines.push(baseline);
    }
    if ids.is_empty() {
        return Err(ParseError::new(1, "no rows"));
    }
    let total = counts.iter().try_fold(0u32, |a, &c| a.checked_add(c));
    if total.is_none() {
        return Err(ParseError::new(1, "total count overflows"));
    }
    let ids = IdMap::new(ids).map_err(|m| ParseError::new(1, m))?;
    Ok(CountsTable { ids, counts, baselines })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads an adjacency edge list.
pub fn parse_adjacency(text: &str, ids: &IdMap) -> Result<AdjacencyList, ParseError> {
    let mut adjacency = AdjacencyList::new(ids.len());
    for (k, (line, content)) in content_lines(text).enumerate() {
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(ParseError::new(line, "expected two comma-separated ids"));
        }
        if k == 0 && ids.get(fields[0]).is_none() && fields.iter().all(|f| f.eq_ignore_ascii_case("id")) {
            continue;
        }
        let a = ids.resolve(fields[0], line)?;
        let b = ids.resolve(fields[1], line)?;
        adjacency.add(a, b).map_err(|e| ParseError::new(line, e.to_string()))?;
    }
    Ok(adjacency)
}

fn json_id(value: &serde_json::Value) -> Option<String> {
    match value {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Reads a JSON-lines window family.
pub fn parse_windows(text: &str, ids: &IdMap) -> Result<WindowFamily, ParseError> {
    let mut windows = Vec::new();
    let mut lines = Vec::new();
    for (line, content) in content_lines(text) {
        let value: serde_json::Value =
            serde_json::from_str(content).map_err(|e| ParseError::new(line, format!("invalid JSON: {e}")))?;
        let items = value.as_array().ok_or_else(|| ParseError::new(line, "expected a JSON array of ids"))?;
        let mut window = Vec::with_capacity(items.len());
        for item in items {
            let id = json_id(item).ok_or_else(|| ParseError::new(line, "ids must be strings or numbers"))?;
            window.push(ids.resolve(&id, line)?);
        }
        windows.push(window);
        lines.push(line);
    }
    if windows.is_empty() {
        return Err(ParseError::new(1, "no windows"));
    }
    for (j, w) in windows.iter().enumerate() {
        let message = match WindowFamily::new(vec![w.clone()]) {
            Err(crate::windows::WindowError::RepeatedVertex { vertex, .. }) => {
                format!("id {:?} appears twice", ids.id(vertex))
            }
            Err(crate::windows::WindowError::EmptyWindow { .. }) => "empty window".to_string(),
            Err(e) => e.to_string(),
            Ok(_) => continue,
        };
        return Err(ParseError::new(lines[j], message));
    }
    WindowFamily::new(windows).map_err(|e| {
        let line = match &e {
            crate::windows::WindowError::DuplicateWindow { index, .. } => lines[*index],
            _ => 1,
        };
        ParseError::new(line, e.to_string())
    })
}

/// Writes a family as JSON lines using the given ids.
pub fn write_windows(family: &WindowFamily, ids: &IdMap) -> String {
    let mut out = String::new();
    for w in family.iter() {
        let names: Vec<&str> = w.iter().map(|&v| ids.id(v)).collect();
        out.push_str(&serde_json::to_string(&names).expect("strings serialize"));
        out.push('\n');
    }
    out
}

/// Reads an elimination ordering; it must list every id exactly once.
pub fn parse_ordering(text: &str, ids: &IdMap) -> Result<EliminationOrdering, ParseError> {
    let mut order = Vec::with_capacity(ids.len());
    let mut seen = vec![false; ids.len()];
    let mut last_line = 1;
    for (line, content) in content_lines(text) {
        let v = ids.resolve(content, line)?;
        if std::mem::replace(&mut seen[v], true) {
            return Err(ParseError::new(line, format!("id {content:?} listed twice")));
        }
        order.push(v);
        last_line = line;
    }
    if order.len() != ids.len() {
        return Err(ParseError::new(last_line, format!("ordering lists {} of {} ids", order.len(), ids.len())));
    }
    EliminationOrdering::new(order).map_err(|e| ParseError::new(last_line, e.to_string()))
}

/// Reads a window-to-group assignment, returning 0-based groups.
pub fn parse_assignment(text: &str) -> Result<Vec<usize>, ParseError> {
    content_lines(text)
        .map(|(line, content)| match content.parse::<usize>() {
            Ok(g) if g >= 1 => Ok(g - 1),
            _ => Err(ParseError::new(line, format!("group {content:?} is not a positive integer"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_with_and_without_baseline() {
        let t = parse_counts("id,count\na,3\nb,4\n").unwrap();
        assert_eq!(t.counts, vec![3, 4]);
        assert_eq!(t.baselines, vec![1.0, 1.0]);
        let t = parse_counts("id,count,baseline\n1,2,0.5\n2,0,\n").unwrap();
        assert_eq!(t.baselines, vec![0.5, 1.0]);
        assert_eq!(t.ids.get("2"), Some(1));
        let t = parse_counts("count,id\n5,x\n").unwrap();
        assert_eq!((t.counts[0], t.ids.id(0)), (5, "x"));
    }

    #[test]
    fn counts_errors_have_lines() {
        assert_eq!(parse_counts("id,count\na,1\nb,-2\n").unwrap_err().line, 3);
        assert_eq!(parse_counts("id,count,baseline\na,1,0\n").unwrap_err().line, 2);
        assert_eq!(parse_counts("id,count\na,1\na,2\n").unwrap_err().line, 3);
        assert_eq!(parse_counts("x,y\n1,2\n").unwrap_err().line, 1);
        assert_eq!(parse_counts("id,count\n").unwrap_err().message, "no rows");
        assert!(parse_counts("id,count\na,4294967295\nb,1\n").is_err());
    }

    #[test]
    fn adjacency() {
        let ids = IdMap::numbered(3);
        let a = parse_adjacency("id,id\n1,2\n\n2,3\n", &ids).unwrap();
        assert_eq!(a.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(parse_adjacency("1,2\n2,2\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_adjacency("1,2\n1,4\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_adjacency("1\n", &ids).unwrap_err().line, 1);
    }

    #[test]
    fn windows_round_trip() {
        let ids = IdMap::numbered(4);
        let fam = parse_windows("[1]\n[\"2\", 3]\n# note\n[4,1]\n", &ids).unwrap();
        assert_eq!(fam.as_slice(), &[vec![0], vec![1, 2], vec![0, 3]]);
        let text = write_windows(&fam, &ids);
        assert_eq!(parse_windows(&text, &ids).unwrap(), fam);
    }

    #[test]
    fn windows_errors() {
        let ids = IdMap::numbered(3);
        assert_eq!(parse_windows("[1]\n[1,1]\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_windows("[1]\n[]\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_windows("[1]\n\n[1]\n", &ids).unwrap_err().line, 3);
        assert_eq!(parse_windows("[1]\n{}\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_windows("[9]\n", &ids).unwrap_err().line, 1);
        assert_eq!(parse_windows("[true]\n", &ids).unwrap_err().line, 1);
        assert!(parse_windows("", &ids).is_err());
    }

    #[test]
    fn ordering() {
        let ids = IdMap::numbered(3);
        assert_eq!(parse_ordering("3\n1\n2\n", &ids).unwrap().as_slice(), &[2, 0, 1]);
        assert_eq!(parse_ordering("3\n3\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_ordering("3\n1\n", &ids).unwrap_err().line, 2);
        assert_eq!(parse_ordering("3\nz\n", &ids).unwrap_err().line, 2);
    }

    #[test]
    fn assignment() {
        assert_eq!(parse_assignment("1\n2\n\n1\n").unwrap(), vec![0, 1, 0]);
        assert_eq!(parse_assignment("1\n0\n").unwrap_err().line, 2);
        assert_eq!(parse_assignment("x\n").unwrap_err().line, 1);
    }
}
