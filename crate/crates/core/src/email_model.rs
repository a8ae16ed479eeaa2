//! Email types, the email-to-text converter and token estimation.
//!
//! The converter renders an email as
//!
//! ```text
//! This is a phishing email:
//! From: {sender}
//! To: {subject}
//! {body}
//! ```
//!
//! where the label line reads `benign`, `phishing` or nothing (`This is a
//! email:`) and the `From:`/`To:` lines only appear when the field is
//! present. Truncation strategies then fit the output under a token limit.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default token-per-character ratio for the character estimator.
pub const DEFAULT_TOKENS_PER_CHAR: f64 = 0.2815;

/// Smallest accepted token limit.
pub const MIN_TOKEN_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmailError {
    #[error("email body is empty")]
    EmptyBody,
    #[error("token limit {0} is below the minimum of {MIN_TOKEN_LIMIT}")]
    TokenLimitTooSmall(usize),
    #[error("tokens per character must be positive and finite, got {0}")]
    InvalidTokensPerChar(f64),
    #[error("converted text needs {needed} tokens but the limit is {limit}")]
    DoesNotFit { needed: usize, limit: usize },
}

/// Binary email label. Serialized as `1` (phishing) or `0` (benign).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Benign,
    Phishing,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Benign => 0.0,
            Label::Phishing => 1.0,
        }
    }

    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(Label::Benign),
            1 => Some(Label::Phishing),
            _ => None,
        }
    }

    fn word(self) -> &'static str {
        match self {
            Label::Benign => "benign",
            Label::Phishing => "phishing",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u8(match self {
            Label::Benign => 0,
            Label::Phishing => 1,
        })
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = u8::deserialize(deserializer)?;
        Label::from_u8(raw)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {raw}")))
    }
}

/// A structured email. An absent sender or subject is distinct from an empty one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmailContent {
    pub sender: Option<String>,
    pub subject: Option<String>,
    pub body: String,
}

impl EmailContent {
    pub fn new(
        sender: Option<String>,
        subject: Option<String>,
        body: impl Into<String>,
    ) -> Result<Self, EmailError> {
        let email = EmailContent {
            sender,
            subject,
            body: body.into(),
        };
        email.validate()?;
        Ok(email)
    }

    pub fn body_only(body: impl Into<String>) -> Result<Self, EmailError> {
        Self::new(None, None, body)
    }

    pub fn validate(&self) -> Result<(), EmailError> {
        if self.body.trim().is_empty() {
            return Err(EmailError::EmptyBody);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledEmail {
    pub content: EmailContent,
    pub label: Option<Label>,
}

impl LabeledEmail {
    pub fn new(content: EmailContent, label: Option<Label>) -> Self {
        LabeledEmail { content, label }
    }

    pub fn unlabeled(content: EmailContent) -> Self {
        LabeledEmail {
            content,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationStrategy {
    /// Return the full text regardless of length.
    #[default]
    NoTruncation,
    /// Cut characters from the end of the assembled text.
    End,
    /// Drop subject, sender and label (in that order) until the text fits.
    Content,
    /// Drop subject and sender, then cut from the end.
    ContentEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConverterConfig {
    pub strategy: TruncationStrategy,
    pub token_limit: usize,
    pub tokens_per_char: f64,
}

impl Default for ConverterConfig {
    fn default() -> Self {
        ConverterConfig {
            strategy: TruncationStrategy::NoTruncation,
            token_limit: 8192,
            tokens_per_char: DEFAULT_TOKENS_PER_CHAR,
        }
    }
}

impl ConverterConfig {
    pub fn new(strategy: TruncationStrategy, token_limit: usize) -> Result<Self, EmailError> {
        let config = ConverterConfig {
            strategy,
            token_limit,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), EmailError> {
        if self.token_limit < MIN_TOKEN_LIMIT {
            return Err(EmailError::TokenLimitTooSmall(self.token_limit));
        }
        if !(self.tokens_per_char.is_finite() && self.tokens_per_char > 0.0) {
            return Err(EmailError::InvalidTokensPerChar(self.tokens_per_char));
        }
        Ok(())
    }

    pub fn estimator(&self) -> CharEstimate {
        CharEstimate {
            tokens_per_char: self.tokens_per_char,
        }
    }
}

/// Maps text to a token count. Must return 0 for the empty string and be
/// monotone in text length.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

impl<F> TokenCounter for F
where
    F: Fn(&str) -> usize,
{
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

/// Linear per-character token estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharEstimate {
    pub tokens_per_char: f64,
}

impl Default for CharEstimate {
    fn default() -> Self {
        CharEstimate {
            tokens_per_char: DEFAULT_TOKENS_PER_CHAR,
        }
    }
}

impl TokenCounter for CharEstimate {
    fn count(&self, text: &str) -> usize {
        estimate_tokens(text, self.tokens_per_char)
    }
}

/// `ceil(chars × tokens_per_char)` over Unicode scalar values.
pub fn estimate_tokens(text: &str, tokens_per_char: f64) -> usize {
    tokens_for_chars(text.chars().count(), tokens_per_char)
}

fn tokens_for_chars(chars: usize, tokens_per_char: f64) -> usize {
    if chars == 0 {
        return 0;
    }
    let exact = chars as f64 * tokens_per_char;
    // Snap products like 2000 × 0.2815 that land a few ulps above an integer.
    let snapped = exact.round();
    if (exact - snapped).abs() <= 1e-9 * exact.max(1.0) {
        snapped as usize
    } else {
        exact.ceil() as usize
    }
}

/// Which parts of the email ended up in the converted text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeptParts {
    pub label_line: bool,
    pub sender: bool,
    pub subject: bool,
    /// The body is present in full.
    pub body_complete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversion {
    pub text: String,
    pub kept: KeptParts,
    pub tokens: usize,
}

struct Parts<'a> {
    label_line: String,
    sender: Option<&'a str>,
    subject: Option<&'a str>,
    body: &'a str,
}

impl Parts<'_> {
    fn assemble(&self, kept: KeptParts) -> String {
        let mut lines: Vec<String> = Vec::with_capacity(4);
        if kept.label_line {
            lines.push(self.label_line.clone());
        }
        if kept.sender {
            if let Some(sender) = self.sender {
                lines.push(format!("From: {sender}"));
            }
        }
        if kept.subject {
            if let Some(subject) = self.subject {
                lines.push(format!("To: {subject}"));
            }
        }
        lines.push(self.body.to_string());
        lines.join("\n")
    }
}

fn label_line(label: Option<Label>) -> String {
    match label {
        Some(label) => format!("This is a {label} email:"),
        None => "This is a email:".to_string(),
    }
}

/// Renders `email` as text and applies the configured truncation strategy.
pub fn email_to_text(
    email: &LabeledEmail,
    config: &ConverterConfig,
    counter: &dyn TokenCounter,
) -> Result<String, EmailError> {
    convert(email, config, counter).map(|c| c.text)
}

/// Like [`email_to_text`] but also reports which parts survived truncation.
pub fn convert(
    email: &LabeledEmail,
    config: &ConverterConfig,
    counter: &dyn TokenCounter,
) -> Result<Conversion, EmailError> {
    email.content.validate()?;
    config.validate()?;

    let parts = Parts {
        label_line: label_line(email.label),
        sender: email.content.sender.as_deref(),
        subject: email.content.subject.as_deref(),
        body: &email.content.body,
    };
    let all = KeptParts {
        label_line: true,
        sender: parts.sender.is_some(),
        subject: parts.subject.is_some(),
        body_complete: true,
    };
    let limit = config.token_limit;

    let finish = |text: String, kept: KeptParts| {
        let tokens = counter.count(&text);
        Conversion { text, kept, tokens }
    };

    match config.strategy {
        TruncationStrategy::NoTruncation => Ok(finish(parts.assemble(all), all)),
        TruncationStrategy::End => {
            let full = parts.assemble(all);
            if counter.count(&full) <= limit {
                return Ok(finish(full, all));
            }
            let cut = end_truncate(&full, limit, counter)?;
            let kept = kept_after_cut(&parts, all, &cut);
            Ok(finish(cut, kept))
        }
        TruncationStrategy::Content => {
            for kept in drop_sequence(all, true) {
                let text = parts.assemble(kept);
                let tokens = counter.count(&text);
                if tokens <= limit {
                    return Ok(Conversion { text, kept, tokens });
                }
            }
            Err(EmailError::DoesNotFit {
                needed: counter.count(parts.body),
                limit,
            })
        }
        TruncationStrategy::ContentEnd => {
            let mut last = all;
            for kept in drop_sequence(all, false) {
                let text = parts.assemble(kept);
                let tokens = counter.count(&text);
                if tokens <= limit {
                    return Ok(Conversion { text, kept, tokens });
                }
                last = kept;
            }
            // Only label line and body remain; cutting from the end eats the body first.
            let text = parts.assemble(last);
            let cut = end_truncate(&text, limit, counter)?;
            let kept = kept_after_cut(&parts, last, &cut);
            Ok(finish(cut, kept))
        }
    }
}

/// Successive part selections: everything, then without subject, without
/// sender and (optionally) without the label line.
fn drop_sequence(all: KeptParts, drop_label: bool) -> Vec<KeptParts> {
    let mut steps = vec![all];
    let no_subject = KeptParts {
        subject: false,
        ..all
    };
    let no_sender = KeptParts {
        sender: false,
        ..no_subject
    };
    steps.push(no_subject);
    steps.push(no_sender);
    if drop_label {
        steps.push(KeptParts {
            label_line: false,
            ..no_sender
        });
    }
    steps.dedup();
    steps
}

/// Longest character prefix of `text` whose token count fits `limit`.
fn end_truncate(text: &str, limit: usize, counter: &dyn TokenCounter) -> Result<String, EmailError> {
    let boundaries: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let fits = |chars: usize| counter.count(&text[..boundaries[chars]]) <= limit;
    if !fits(0) {
        return Err(EmailError::DoesNotFit {
            needed: counter.count(""),
            limit,
        });
    }
    // Binary search for the largest fitting prefix; the counter is monotone.
    let (mut lo, mut hi) = (0usize, boundaries.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(text[..boundaries[lo]].to_string())
}

/// Recomputes which parts survive after `cut` was end-truncated from the
/// assembly of `before`. A header line counts as kept only when it is present
/// in full.
fn kept_after_cut(parts: &Parts<'_>, before: KeptParts, cut: &str) -> KeptParts {
    let mut kept = KeptParts::default();
    let mut offset = 0usize;
    let mut line_present = |line: &str| -> bool {
        let end = offset + line.len();
        let present = cut.get(offset..end) == Some(line);
        offset = end + 1;
        present
    };
    if before.label_line {
        kept.label_line = line_present(&parts.label_line);
    }
    if let (true, Some(sender)) = (before.sender, parts.sender) {
        kept.sender = line_present(&format!("From: {sender}"));
    }
    if let (true, Some(subject)) = (before.subject, parts.subject) {
        kept.subject = line_present(&format!("To: {subject}"));
    }
    kept.body_complete = cut == parts.assemble(before);
    kept
}
