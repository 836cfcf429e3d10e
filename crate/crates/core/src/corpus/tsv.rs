//! Dataset TSV: `id<TAB>text<TAB>label<TAB>event_id`, UTF-8, LF line endings.
//!
//! Inside `text`, a tab is written `\t` and a line feed `\n`. A backslash
//! followed by `t`, `n`, a backslash, a tab or a line feed is written `\\`;
//! other backslashes are literal.

use std::path::Path;

use super::{CorpusError, CrisisRecord, EventRegistry, Result};

pub const TSV_HEADER: &str = "id\ttext\tlabel\tevent_id";

pub fn unescape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.peek() {
                Some('t') => {
                    out.push('\t');
                    chars.next();
                }
                Some('n') => {
                    out.push('\n');
                    chars.next();
                }
                Some('\\') => {
                    out.push('\\');
                    chars.next();
                }
                _ => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn escape_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\\' => match chars.peek() {
                Some('t' | 'n' | '\\' | '\t' | '\n') => out.push_str("\\\\"),
                _ => out.push('\\'),
            },
            c => out.push(c),
        }
    }
    out
}

/// Parses TSV content. `origin` is only used in error messages.
pub fn parse_dataset(content: &str, origin: &Path, registry: &EventRegistry) -> Result<Vec<CrisisRecord>> {
    let schema = |line: usize, message: String| CorpusError::Schema {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = content.split('\n');
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    if header != TSV_HEADER {
        return Err(schema(1, format!("expected header {TSV_HEADER:?}, found {header:?}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(schema(line_no, format!("expected 4 columns, found {}", fields.len())));
        }
        let event_id = fields[3].trim_end();
        if !registry.contains(event_id) {
            return Err(CorpusError::UnknownEvent(event_id.to_string()));
        }
        records.push(CrisisRecord {
            id: fields[0].to_string(),
            text: unescape_text(fields[1]),
            raw_label: fields[2].to_string(),
            unified_label: None,
            event_id: event_id.to_string(),
        });
    }
    Ok(records)
}

/// Reads one dataset file; rows keep file order and raw labels.
pub fn load_dataset(path: &Path, registry: &EventRegistry) -> Result<Vec<CrisisRecord>> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let content = String::from_utf8(bytes).map_err(|e| {
        let valid = e.utf8_error().valid_up_to();
        let line = e.as_bytes()[..valid].iter().filter(|&&b| b == b'\n').count() + 1;
        CorpusError::Decode {
            path: path.to_path_buf(),
            line,
        }
    })?;
    parse_dataset(&content, path, registry)
}

/// Serializes records in the dataset TSV format (header plus one row each).
pub fn write_dataset(records: &[CrisisRecord]) -> String {
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.id);
        out.push('\t');
        out.push_str(&escape_text(&r.text));
        out.push('\t');
        out.push_str(&r.raw_label);
        out.push('\t');
        out.push_str(&r.event_id);
        out.push('\n');
    }
    out
}
