//! Sender, subject and body extraction from an OCR word table.
//!
//! Input is the 12-column tab-separated word table emitted by common OCR
//! engines (`level page_num block_num par_num line_num word_num left top
//! width height conf text`). Extraction runs six steps: confidence filter,
//! line grouping, header detection, body detection, subject extraction and
//! sender extraction.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const COLUMNS: [&str; 12] = [
    "level", "page_num", "block_num", "par_num", "line_num", "word_num", "left", "top", "width",
    "height", "conf", "text",
];

/// Engine level code for word rows.
const WORD_LEVEL: u32 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcrError {
    #[error("word table is empty (missing header row)")]
    MissingHeader,
    #[error("header row does not name the 12 word-table columns")]
    BadHeader,
    #[error("row {row}: expected 12 tab-separated fields, found {found}")]
    FieldCount { row: usize, found: usize },
    #[error("row {row}: field `{field}` is not numeric: {value:?}")]
    NotNumeric {
        row: usize,
        field: &'static str,
        value: String,
    },
    #[error("no confident text in the word table")]
    NoConfidentText,
    #[error("invalid OCR config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineKey {
    pub block: u32,
    pub paragraph: u32,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrWord {
    pub text: String,
    pub confidence: f64,
    pub line_key: LineKey,
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrConfig {
    pub t_ocr: f64,
    pub t_header: usize,
    pub k_subject: f64,
    pub k_logo: f64,
    pub header_terms: Vec<String>,
    pub greeting_terms: Vec<String>,
    pub email_regex: String,
}

impl Default for OcrConfig {
    fn default() -> Self {
        OcrConfig {
            t_ocr: 80.0,
            t_header: 7,
            k_subject: 1.25,
            k_logo: 1.5,
            header_terms: ["from", "to", "subject", "sender"].map(String::from).to_vec(),
            greeting_terms: ["hi", "hello", "dear"].map(String::from).to_vec(),
            email_regex: r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}".to_string(),
        }
    }
}

impl OcrConfig {
    pub fn validate(&self) -> Result<(), OcrError> {
        if !(0.0..=100.0).contains(&self.t_ocr) {
            return Err(OcrError::Config(format!("t_ocr {} not in [0, 100]", self.t_ocr)));
        }
        if self.t_header == 0 {
            return Err(OcrError::Config("t_header must be at least 1".into()));
        }
        if !(self.k_subject > 0.0 && self.k_logo >= self.k_subject) {
            return Err(OcrError::Config(format!(
                "need k_logo ({}) >= k_subject ({}) > 0",
                self.k_logo, self.k_subject
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedEmail {
    pub sender: Option<String>,
    pub subject: Option<String>,
    pub body: String,
    pub header_until: usize,
    pub body_from: usize,
}

/// Parses a word table, keeping word rows with text and a real confidence.
pub fn parse_word_table(raw: &str) -> Result<Vec<OcrWord>, OcrError> {
    let mut rows = raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = rows.next().ok_or(OcrError::MissingHeader)?;
    let names: Vec<&str> = header.trim_end_matches('\r').split('\t').map(str::trim).collect();
    if names.len() != COLUMNS.len()
        || names.iter().zip(COLUMNS).any(|(n, c)| !n.eq_ignore_ascii_case(c))
    {
        return Err(OcrError::BadHeader);
    }

    let mut words = Vec::new();
    for (idx, line) in rows {
        let row = idx + 1;
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != COLUMNS.len() {
            return Err(OcrError::FieldCount {
                row,
                found: fields.len(),
            });
        }
        let int = |i: usize| -> Result<u32, OcrError> {
            fields[i].trim().parse().map_err(|_| OcrError::NotNumeric {
                row,
                field: COLUMNS[i],
                value: fields[i].to_string(),
            })
        };
        let level = int(0)?;
        let (block, paragraph, line_no) = (int(2)?, int(3)?, int(4)?);
        let (left, top, width, height) = (int(6)?, int(7)?, int(8)?, int(9)?);
        let confidence: f64 = fields[10].trim().parse().map_err(|_| OcrError::NotNumeric {
            row,
            field: "conf",
            value: fields[10].to_string(),
        })?;
        let text = fields[11].trim();
        if level != WORD_LEVEL || confidence < 0.0 || text.is_empty() {
            continue;
        }
        words.push(OcrWord {
            text: text.to_string(),
            confidence: confidence.min(100.0),
            line_key: LineKey {
                block,
                paragraph,
                line: line_no,
            },
            left,
            top,
            width,
            height,
        });
    }
    Ok(words)
}

#[derive(Debug, Clone)]
struct Line {
    text: String,
    mean_height: f64,
}

/// Groups words into reading-order lines.
fn group_lines(words: &[&OcrWord]) -> Vec<Line> {
    let mut groups: BTreeMap<LineKey, Vec<&OcrWord>> = BTreeMap::new();
    for w in words {
        groups.entry(w.line_key).or_default().push(w);
    }
    let mut lines: Vec<(u32, LineKey, Line)> = groups
        .into_iter()
        .map(|(key, mut ws)| {
            ws.sort_by_key(|w| w.left);
            let top = ws[0].top;
            let text = ws.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
            let mean_height = ws.iter().map(|w| f64::from(w.height)).sum::<f64>() / ws.len() as f64;
            (top, key, Line { text, mean_height })
        })
        .collect();
    lines.sort_by_key(|(top, key, _)| (*top, *key));
    lines.into_iter().map(|(_, _, l)| l).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Case-insensitive whole-word alternation over `terms`.
fn term_regex(terms: &[String]) -> Option<Regex> {
    if terms.is_empty() {
        return None;
    }
    let alternation = terms.iter().map(|t| regex::escape(t)).collect::<Vec<_>>().join("|");
    Some(Regex::new(&format!(r"(?i)\b(?:{alternation})\b")).expect("escaped terms form a valid regex"))
}

pub fn extract_email(words: &[OcrWord], config: &OcrConfig) -> Result<ExtractedEmail, OcrError> {
    config.validate()?;
    let email_re = Regex::new(&config.email_regex)
        .map_err(|e| OcrError::Config(format!("email_regex: {e}")))?;

    // 1. confidence filter
    let kept: Vec<&OcrWord> = words
        .iter()
        .filter(|w| w.confidence >= config.t_ocr && w.height > 0)
        .collect();
    if kept.is_empty() {
        return Err(OcrError::NoConfidentText);
    }

    // 2. lines and their heights
    let lines = group_lines(&kept);
    let mut heights: Vec<f64> = lines.iter().map(|l| l.mean_height).collect();
    let median_height = median(&mut heights);

    // 3. header: up to the last header term, capped at t_header
    let header_re = term_regex(&config.header_terms);
    let header_until = header_re
        .as_ref()
        .and_then(|re| lines.iter().rposition(|l| re.is_match(&l.text)))
        .map_or(0, |last| (last + 1).min(config.t_header));

    // 4. body: first greeting at or after the header, else everything
    let greeting_re = term_regex(&config.greeting_terms);
    let body_from = greeting_re
        .as_ref()
        .and_then(|re| {
            lines
                .iter()
                .enumerate()
                .skip(header_until)
                .find(|(_, l)| re.is_match(&l.text))
                .map(|(i, _)| i)
        })
        .unwrap_or(0);
    let body = lines[body_from..]
        .iter()
        .map(|l| l.text.as_str())
        .collect::<Vec<_>>()
        .join("\n");

    // 5. subject: explicit "subject:" line, else lines taller than the body text but below logo size
    let subject_re = Regex::new(r"(?i)\bsubject\s*:").expect("static regex");
    let explicit = lines.iter().find_map(|l| {
        subject_re
            .find(&l.text)
            .map(|m| l.text[m.end()..].trim().to_string())
            .filter(|s| !s.is_empty())
    });
    let subject = explicit.or_else(|| {
        let lower = median_height * config.k_subject;
        let upper = median_height * config.k_logo;
        let picked: Vec<&str> = lines
            .iter()
            .filter(|l| l.mean_height > lower && l.mean_height <= upper)
            .map(|l| l.text.as_str())
            .collect();
        (!picked.is_empty()).then(|| picked.join(" "))
    });

    // 6. sender: first address in the header, else anywhere
    let find_address = |ls: &[Line]| {
        ls.iter()
            .find_map(|l| email_re.find(&l.text).map(|m| m.as_str().to_string()))
    };
    let sender = find_address(&lines[..header_until]).or_else(|| find_address(&lines));

    Ok(ExtractedEmail {
        sender,
        subject,
        body,
        header_until,
        body_from,
    })
}

/// Parses and extracts in one step.
pub fn extract_from_table(raw: &str, config: &OcrConfig) -> Result<ExtractedEmail, OcrError> {
    extract_email(&parse_word_table(raw)?, config)
}
