//! Confusion counts, corpus loading and scripted bowl/verdict/ensemble
//! experiments.
//!
//! Experiments run hermetically: records are embedded with the supplied
//! embedder, verdicts come from the supplied chat client, and no
//! anonymization is applied (corpora are assumed to be public or already
//! masked).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::ChatClient;
use crate::email_model::{convert, ConverterConfig, EmailContent, EmailError, Label, LabeledEmail};
use crate::ensemble::{self, EnsembleConfig, EnsembleError};
use crate::gpt_analyzer::{self, VerdictError};
use crate::vector_bowl::{BowlConfig, BowlError, EmbeddingClient, PhishBowl, Source};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("need {needed} {what} emails, corpus has {available}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Email(#[from] EmailError),
    #[error(transparent)]
    Bowl(#[from] BowlError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted_phishing: bool, actual: Label) {
        match (predicted_phishing, actual) {
            (true, Label::Phishing) => self.tp += 1,
            (true, Label::Benign) => self.fp += 1,
            (false, Label::Benign) => self.tn += 1,
            (false, Label::Phishing) => self.fn_ += 1,
        }
    }
}

/// Accuracy, precision and recall as fractions; `None` where the
/// denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
    }
}

/// Two-decimal percentage such as `98.41%`, or `undefined`.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "undefined".to_string(),
    }
}

/// One corpus line: `{label, sender?, subject?, body}` with label 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub body: String,
}

impl CorpusEntry {
    pub fn content(&self) -> EmailContent {
        EmailContent {
            sender: self.sender.clone(),
            subject: self.subject.clone(),
            body: self.body.clone(),
        }
    }
}

pub fn parse_corpus(reader: impl BufRead) -> Result<Vec<CorpusEntry>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| EvalError::Io {
            path: "<reader>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let corpus_err = |message: String| EvalError::Corpus { line: n + 1, message };
        let entry: CorpusEntry = serde_json::from_str(&line).map_err(|e| corpus_err(e.to_string()))?;
        entry.content().validate().map_err(|e| corpus_err(e.to_string()))?;
        out.push(entry);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusEntry>, EvalError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(BufReader::new(file))
}

/// Parameters of the synthetic two-class corpus.
///
/// Each email draws its words from its class vocabulary, or with
/// probability `overlap` from a vocabulary shared by both classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub vocabulary: usize,
    pub overlap: f64,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            vocabulary: 150,
            overlap: 0.6,
            min_words: 12,
            max_words: 24,
        }
    }
}

impl SyntheticCorpus {
    /// `n` emails with alternating labels, starting with phishing.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<CorpusEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Phishing } else { Label::Benign };
                let own = match label {
                    Label::Phishing => "ph",
                    Label::Benign => "bn",
                };
                let len = rng.random_range(self.min_words..=self.max_words);
                let words: Vec<String> = (0..len)
                    .map(|_| {
                        let prefix = if rng.random::<f64>() < self.overlap { "sh" } else { own };
                        format!("{prefix}{}", rng.random_range(0..self.vocabulary))
                    })
                    .collect();
                CorpusEntry {
                    label,
                    sender: None,
                    subject: None,
                    body: words.join(" "),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    /// Equal numbers of each class.
    Balanced,
    /// Phishing records only.
    PhishOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerKind {
    /// `l_raw × l_conf ≥ 0.5`.
    Bowl,
    Gpt,
    Ensemble,
}

impl fmt::Display for AnalyzerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnalyzerKind::Bowl => "bowl",
            AnalyzerKind::Gpt => "gpt",
            AnalyzerKind::Ensemble => "ensemble",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub train_size: usize,
    /// Always split evenly between the classes.
    pub test_size: usize,
    pub balance: Balance,
    /// Confidence decay rate; `None` disables decay.
    pub lambda: Option<f64>,
    pub analyzer: AnalyzerKind,
    pub seed: u64,
}

/// Collaborators and module settings shared by experiment runs.
pub struct ExperimentContext<'a> {
    pub embedder: &'a dyn EmbeddingClient,
    pub analyst: &'a dyn ChatClient,
    pub converter: ConverterConfig,
    pub bowl: BowlConfig,
    pub ensemble: EnsembleConfig,
    pub verdict_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

pub const TSV_HEADER: &str =
    "analyzer\ttraining_samples\tconfidence_decay\tTP\tFP\tTN\tFN\tAccuracy\tPrecision\tRecall";

impl ExperimentResult {
    pub fn tsv_row(&self) -> String {
        let c = &self.counts;
        let decay = self.spec.lambda.map_or("-".to_string(), |l| l.to_string());
        let train = match self.spec.balance {
            Balance::Balanced => self.spec.train_size.to_string(),
            Balance::PhishOnly => format!("{}*", self.spec.train_size),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.spec.analyzer,
            train,
            decay,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            format_percent(self.metrics.accuracy),
            format_percent(self.metrics.precision),
            format_percent(self.metrics.recall),
        )
    }
}

fn epoch() -> DateTime<Utc> {
    Utc.timestamp_opt(0, 0).unwrap()
}

impl ExperimentContext<'_> {
    fn bowl_config(&self, lambda: Option<f64>) -> BowlConfig {
        match lambda {
            Some(l) => self.bowl.with_lambda(l),
            None => self.bowl.without_decay(),
        }
    }

    fn render(&self, entry: &CorpusEntry) -> Result<String, EvalError> {
        let email = LabeledEmail::unlabeled(entry.content());
        let counter = self.converter.estimator();
        Ok(convert(&email, &self.converter, &counter)?.text)
    }

    /// Builds an in-memory bowl holding `train`.
    pub fn build_bowl(&self, train: &[CorpusEntry]) -> Result<PhishBowl, EvalError> {
        let bowl = PhishBowl::in_memory(self.embedder.dimension());
        for entry in train {
            let text = self.render(entry)?;
            let vector = self.embedder.embed(&text).map_err(BowlError::from)?;
            bowl.insert(text, entry.label, Source::Preloaded, vector, epoch())?;
        }
        Ok(bowl)
    }

    /// Classifies `test` against `bowl` and tallies the outcome.
    pub fn evaluate(
        &self,
        bowl: &PhishBowl,
        test: &[CorpusEntry],
        analyzer: AnalyzerKind,
        lambda: Option<f64>,
    ) -> Result<ConfusionCounts, EvalError> {
        let bowl_cfg = self.bowl_config(lambda);
        let threshold = self.ensemble.decision_threshold;
        let mut counts = ConfusionCounts::default();
        for entry in test {
            let text = self.render(entry)?;
            let score = if analyzer == AnalyzerKind::Gpt {
                None
            } else {
                match bowl.score(&text, self.embedder, &bowl_cfg) {
                    Ok(s) => Some(s),
                    Err(BowlError::ColdBowl) => None,
                    Err(e) => return Err(e.into()),
                }
            };
            let predicted = match analyzer {
                AnalyzerKind::Bowl => score.is_some_and(|s| s.l_raw * s.l_conf >= threshold),
                AnalyzerKind::Gpt | AnalyzerKind::Ensemble => {
                    let verdict = gpt_analyzer::classify(&text, self.analyst, self.verdict_attempts)?;
                    let l_gpt = gpt_analyzer::verdict_to_label(&verdict).l_gpt;
                    let c = match &score {
                        Some(s) => ensemble::combine(s.l_raw, s.l_conf, l_gpt, &self.ensemble)?,
                        None => ensemble::combine_cold(l_gpt, &self.ensemble)?,
                    };
                    c.is_phishing
                }
            };
            counts.record(predicted, entry.label);
        }
        Ok(counts)
    }

    pub fn run(&self, spec: &ExperimentSpec, corpus: &[CorpusEntry]) -> Result<ExperimentResult, EvalError> {
        let (train, test) = split(corpus, spec)?;
        let bowl = self.build_bowl(&train)?;
        let counts = self.evaluate(&bowl, &test, spec.analyzer, spec.lambda)?;
        Ok(ExperimentResult {
            spec: *spec,
            counts,
            metrics: metrics(&counts),
        })
    }
}

/// Seeded disjoint train/test split.
///
/// The test set is balanced; the training set follows `spec.balance`.
pub fn split(
    corpus: &[CorpusEntry],
    spec: &ExperimentSpec,
) -> Result<(Vec<CorpusEntry>, Vec<CorpusEntry>), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut phish: Vec<&CorpusEntry> = corpus.iter().filter(|e| e.label == Label::Phishing).collect();
    let mut benign: Vec<&CorpusEntry> = corpus.iter().filter(|e| e.label == Label::Benign).collect();
    phish.shuffle(&mut rng);
    benign.shuffle(&mut rng);

    let test_phish = spec.test_size / 2;
    let test_benign = spec.test_size - test_phish;
    let (train_phish, train_benign) = match spec.balance {
        Balance::Balanced => (spec.train_size / 2, spec.train_size - spec.train_size / 2),
        Balance::PhishOnly => (spec.train_size, 0),
    };
    let need = |what, needed: usize, available: usize| {
        if needed > available {
            Err(EvalError::InsufficientData {
                what,
                needed,
                available,
            })
        } else {
            Ok(())
        }
    };
    need("phishing", test_phish + train_phish, phish.len())?;
    need("benign", test_benign + train_benign, benign.len())?;

    let mut test: Vec<CorpusEntry> = phish[..test_phish]
        .iter()
        .chain(&benign[..test_benign])
        .map(|e| (*e).clone())
        .collect();
    let mut train: Vec<CorpusEntry> = phish[test_phish..test_phish + train_phish]
        .iter()
        .chain(&benign[test_benign..test_benign + train_benign])
        .map(|e| (*e).clone())
        .collect();
    test.shuffle(&mut rng);
    train.shuffle(&mut rng);
    Ok((train, test))
}
