//! The end-to-end detection pipeline behind the service and CLI.
//!
//! Classify: OCR (optional) → anonymize → render unlabeled → embed → bowl
//! score (or cold fallback) → verdict → combine → trend observation.
//! Classification never writes to the bowl. Submit anonymizes, stores the
//! email as a phishing record and feeds the trend analyzer with label 1.

use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::anonymizer::{self, AnonymizedEmail, DEFAULT_MAX_ATTEMPTS};
use crate::client::ChatClient;
use crate::email_model::{convert, ConverterConfig, EmailContent, Label, LabeledEmail};
use crate::ensemble::{self, Classification, EnsembleConfig};
use crate::gpt_analyzer::{self, GptVerdict};
use crate::ocr_extract::{extract_from_table, OcrConfig};
use crate::trend_alerts::{Alert, GroupId, GroupSummary, Observation, TrendConfig, TrendTracker};
use crate::vector_bowl::{BowlConfig, BowlError, BowlRecord, EmbeddingClient, PhishBowl, RecordId, Source};

pub const MAX_SEARCH_RESULTS: usize = 100;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Settable clock for tests and simulations.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock() = at;
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validation,
    Ocr,
    Anonymize,
    Convert,
    Embed,
    Bowl,
    Verdict,
    Ensemble,
    Trend,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Validation => "validation",
            Stage::Ocr => "ocr",
            Stage::Anonymize => "anonymize",
            Stage::Convert => "convert",
            Stage::Embed => "embed",
            Stage::Bowl => "bowl",
            Stage::Verdict => "verdict",
            Stage::Ensemble => "ensemble",
            Stage::Trend => "trend",
        };
        f.write_str(name)
    }
}

/// A failure tagged with the pipeline stage that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            message: message.to_string(),
        }
    }
}

fn at_stage<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub converter: ConverterConfig,
    pub bowl: BowlConfig,
    pub ensemble: EnsembleConfig,
    pub trend: TrendConfig,
    pub anonymize_attempts: usize,
    pub verdict_attempts: usize,
    /// Embed the labeled rendering of stored records instead of the unlabeled one.
    pub label_in_embedding: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            converter: ConverterConfig::default(),
            bowl: BowlConfig::default(),
            ensemble: EnsembleConfig::default(),
            trend: TrendConfig::default(),
            anonymize_attempts: DEFAULT_MAX_ATTEMPTS,
            verdict_attempts: DEFAULT_MAX_ATTEMPTS,
            label_in_embedding: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifyInput {
    Text(EmailContent),
    OcrTable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEvidence {
    pub id: RecordId,
    pub text: String,
    pub label: Label,
    pub squared_distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOutcome {
    pub classification: Classification,
    pub anonymized: AnonymizedEmail,
    /// Unlabeled rendering that was embedded and shown to the verdict analyzer.
    pub text: String,
    /// Squared distance to the nearest stored record; absent on a cold bowl.
    pub d0: Option<f64>,
    pub neighbors: Vec<NeighborEvidence>,
    pub verdict: GptVerdict,
    pub group_id: GroupId,
    pub alert: Option<Alert>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub id: RecordId,
    pub text: String,
    pub group_id: GroupId,
    pub alert: Option<Alert>,
}

/// A stored record without its vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmailView {
    pub id: RecordId,
    pub text: String,
    pub label: Label,
    pub source: Source,
    pub created_at: DateTime<Utc>,
}

impl From<BowlRecord> for EmailView {
    fn from(r: BowlRecord) -> Self {
        EmailView {
            id: r.id,
            text: r.text,
            label: r.label,
            source: r.source,
            created_at: r.created_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    #[serde(flatten)]
    pub email: EmailView,
    pub squared_distance: f64,
}

/// External collaborators of the pipeline.
#[derive(Clone)]
pub struct Clients {
    pub anonymizer: Arc<dyn ChatClient>,
    pub analyst: Arc<dyn ChatClient>,
    pub embedder: Arc<dyn EmbeddingClient>,
    pub clock: Arc<dyn Clock>,
}

pub struct Platform {
    settings: PipelineSettings,
    ocr: OcrConfig,
    bowl: PhishBowl,
    trends: Mutex<TrendTracker>,
    clients: Clients,
}

impl fmt::Debug for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Platform")
            .field("settings", &self.settings)
            .field("bowl", &self.bowl)
            .finish_non_exhaustive()
    }
}

impl Platform {
    pub fn new(
        settings: PipelineSettings,
        ocr: OcrConfig,
        bowl: PhishBowl,
        trends: TrendTracker,
        clients: Clients,
    ) -> Result<Self, PipelineError> {
        settings.converter.validate().map_err(at_stage(Stage::Validation))?;
        settings.bowl.validate().map_err(at_stage(Stage::Validation))?;
        settings.ensemble.validate().map_err(at_stage(Stage::Validation))?;
        settings.trend.validate().map_err(at_stage(Stage::Validation))?;
        ocr.validate().map_err(at_stage(Stage::Validation))?;
        if clients.embedder.dimension() != bowl.dimension() {
            return Err(PipelineError::new(Stage::Validation, format!(
                "embedder dimension {} does not match bowl dimension {}",
                clients.embedder.dimension(),
                bowl.dimension()
            )));
        }
        Ok(Platform {
            settings,
            ocr,
            bowl,
            trends: Mutex::new(trends),
            clients,
        })
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn bowl(&self) -> &PhishBowl {
        &self.bowl
    }

    fn render(&self, content: &EmailContent, label: Option<Label>) -> Result<String, PipelineError> {
        let email = LabeledEmail::new(content.clone(), label);
        let counter = self.settings.converter.estimator();
        convert(&email, &self.settings.converter, &counter)
            .map(|c| c.text)
            .map_err(at_stage(Stage::Convert))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, PipelineError> {
        self.clients.embedder.embed(text).map_err(at_stage(Stage::Embed))
    }

    fn anonymize(&self, content: &EmailContent) -> Result<AnonymizedEmail, PipelineError> {
        content.validate().map_err(at_stage(Stage::Validation))?;
        let masked = anonymizer::anonymize(
            content,
            self.clients.anonymizer.as_ref(),
            self.settings.anonymize_attempts,
        )
        .map_err(at_stage(Stage::Anonymize))?;
        if masked.body.trim().is_empty() {
            return Err(PipelineError::new(Stage::Anonymize, "anonymizer returned an empty body"));
        }
        Ok(masked)
    }

    /// Records an observation, stamping it with the clock under the tracker lock
    /// so that concurrent callers reach the tracker in timestamp order.
    fn observe(
        &self,
        vector: &[f64],
        label: f64,
        record_id: Option<RecordId>,
        text: &str,
    ) -> Result<(GroupId, Option<Alert>), PipelineError> {
        let mut trends = self.trends.lock();
        let at = self.clients.clock.now();
        let outcome = trends
            .add_observation(Observation {
                vector,
                label,
                at,
                record_id,
                text: Some(text),
            })
            .map_err(at_stage(Stage::Trend))?;
        Ok((outcome.group_id, outcome.alert))
    }

    pub fn classify(&self, input: ClassifyInput) -> Result<ClassifyOutcome, PipelineError> {
        let content = match input {
            ClassifyInput::Text(content) => content,
            ClassifyInput::OcrTable(raw) => {
                let e = extract_from_table(&raw, &self.ocr).map_err(at_stage(Stage::Ocr))?;
                EmailContent {
                    sender: e.sender,
                    subject: e.subject,
                    body: e.body,
                }
            }
        };
        let anonymized = self.anonymize(&content)?;
        let text = self.render(&anonymized.clone().into(), None)?;
        let vector = self.embed(&text)?;

        let score = match self.bowl.score_vector(&vector, &self.settings.bowl) {
            Ok(score) => Some(score),
            Err(BowlError::ColdBowl) => None,
            Err(e) => return Err(PipelineError::new(Stage::Bowl, e)),
        };

        let verdict = gpt_analyzer::classify(
            &text,
            self.clients.analyst.as_ref(),
            self.settings.verdict_attempts,
        )
        .map_err(at_stage(Stage::Verdict))?;
        let l_gpt = gpt_analyzer::verdict_to_label(&verdict).l_gpt;

        let ensemble_cfg = &self.settings.ensemble;
        let classification = match &score {
            Some(s) => ensemble::combine(s.l_raw, s.l_conf, l_gpt, ensemble_cfg),
            None => ensemble::combine_cold(l_gpt, ensemble_cfg),
        }
        .map_err(at_stage(Stage::Ensemble))?;

        let neighbors = score
            .as_ref()
            .map(|s| {
                s.neighbors
                    .iter()
                    .map(|n| NeighborEvidence {
                        id: n.id,
                        text: self.bowl.get(n.id).map(|r| r.text).unwrap_or_default(),
                        label: n.label,
                        squared_distance: n.squared_distance,
                        weight: n.weight,
                    })
                    .collect()
            })
            .unwrap_or_default();

        let (group_id, alert) = self.observe(&vector, classification.l_ensemble, None, &text)?;
        Ok(ClassifyOutcome {
            classification,
            anonymized,
            text,
            d0: score.map(|s| s.d0),
            neighbors,
            verdict,
            group_id,
            alert,
        })
    }

    /// Stores a known phishing email and counts it towards its trend group.
    pub fn submit(&self, content: &EmailContent) -> Result<SubmitOutcome, PipelineError> {
        let anonymized: EmailContent = self.anonymize(content)?.into();
        let (text, vector) = self.record_text_and_vector(&anonymized, Label::Phishing)?;
        let id = self
            .bowl
            .insert(
                text.clone(),
                Label::Phishing,
                Source::Submitted,
                vector.clone(),
                self.clients.clock.now(),
            )
            .map_err(at_stage(Stage::Bowl))?;
        let (group_id, alert) = self.observe(&vector, 1.0, Some(id), &text)?;
        Ok(SubmitOutcome {
            id,
            text,
            group_id,
            alert,
        })
    }

    fn record_text_and_vector(
        &self,
        content: &EmailContent,
        label: Label,
    ) -> Result<(String, Vec<f64>), PipelineError> {
        let text = self.render(content, None)?;
        let vector = if self.settings.label_in_embedding {
            self.embed(&self.render(content, Some(label))?)?
        } else {
            self.embed(&text)?
        };
        Ok((text, vector))
    }

    /// Bulk ingestion of labeled, already anonymized emails. Skips the
    /// anonymizer and the trend analyzer.
    pub fn preload<I>(&self, emails: I) -> Result<Vec<RecordId>, PipelineError>
    where
        I: IntoIterator<Item = (EmailContent, Label)>,
    {
        let mut ids = Vec::new();
        for (n, (content, label)) in emails.into_iter().enumerate() {
            content
                .validate()
                .map_err(|e| PipelineError::new(Stage::Validation, format!("email {}: {e}", n + 1)))?;
            let (text, vector) = self.record_text_and_vector(&content, label)?;
            let id = self
                .bowl
                .insert(text, label, Source::Preloaded, vector, self.clients.clock.now())
                .map_err(at_stage(Stage::Bowl))?;
            ids.push(id);
        }
        Ok(ids)
    }

    pub fn search(&self, query: &str, n: usize) -> Result<Vec<SearchResult>, PipelineError> {
        if !(1..=MAX_SEARCH_RESULTS).contains(&n) {
            return Err(PipelineError::new(
                Stage::Validation,
                format!("n must be in [1, {MAX_SEARCH_RESULTS}], got {n}"),
            ));
        }
        let hits = self
            .bowl
            .search(query, n, self.clients.embedder.as_ref())
            .map_err(|e| match e {
                BowlError::Embedding(e) => PipelineError::new(Stage::Embed, e),
                e => PipelineError::new(Stage::Bowl, e),
            })?;
        Ok(hits
            .into_iter()
            .map(|h| SearchResult {
                email: h.record.into(),
                squared_distance: h.squared_distance,
            })
            .collect())
    }

    pub fn email(&self, id: RecordId) -> Option<EmailView> {
        self.bowl.get(id).map(EmailView::from)
    }

    /// Trend groups with scores decayed to the current time, highest first.
    pub fn trends(&self) -> Vec<GroupSummary> {
        let trends = self.trends.lock();
        trends.summaries(self.clients.clock.now())
    }

    /// Alerts, newest first.
    pub fn alerts(&self) -> Vec<Alert> {
        self.trends.lock().alerts()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anonymizer::MockAnonymizer;
    use crate::ensemble::Mode;
    use crate::gpt_analyzer::{FixedVerdictClient, HeuristicVerdictClient};
    use crate::vector_bowl::HashedEmbedder;
    use chrono::TimeZone;

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2025, 6, 2, 9, 0, 0).unwrap()
    }

    fn platform_with(analyst: Arc<dyn ChatClient>, settings: PipelineSettings) -> Platform {
        let embedder = HashedEmbedder::default();
        Platform::new(
            settings,
            OcrConfig::default(),
            PhishBowl::in_memory(EmbeddingClient::dimension(&embedder)),
            TrendTracker::new(settings.trend).unwrap(),
            Clients {
                anonymizer: Arc::new(MockAnonymizer),
                analyst,
                embedder: Arc::new(embedder),
                clock: Arc::new(ManualClock::new(start())),
            },
        )
        .unwrap()
    }

    fn platform() -> Platform {
        platform_with(Arc::new(HeuristicVerdictClient), PipelineSettings::default())
    }

    fn phish() -> EmailContent {
        EmailContent::new(
            Some("John Carter <john.carter@example.com>".into()),
            Some("Account locked".into()),
            "Dear John Carter, verify your account password immediately.",
        )
        .unwrap()
    }

    #[test]
    fn submit_then_classify_is_immediate() {
        let p = platform();
        let submitted = p.submit(&phish()).unwrap();
        assert!(!submitted.text.contains("John Carter"));
        let out = p.classify(ClassifyInput::Text(phish())).unwrap();
        assert_eq!(out.d0, Some(0.0));
        assert_eq!(out.classification.l_conf, 1.0);
        assert_eq!(out.classification.mode, Mode::Ensemble);
        assert!(out.classification.is_phishing);
        assert!(out.classification.l_ensemble >= 0.8 - 1e-3);
        assert_eq!(out.neighbors[0].id, submitted.id);
        assert_eq!(out.group_id, submitted.group_id);
        assert_eq!(p.bowl().len(), 1, "classify never stores");
    }

    #[test]
    fn cold_bowl_uses_verdict_only() {
        let verdict = GptVerdict {
            is_phishing: false,
            confidence: 10,
            is_impersonating: None,
            reason: "routine".into(),
        };
        let p = platform_with(Arc::new(FixedVerdictClient(verdict)), PipelineSettings::default());
        let out = p
            .classify(ClassifyInput::Text(EmailContent::body_only("Lunch at noon?").unwrap()))
            .unwrap();
        assert_eq!(out.classification.mode, Mode::GptOnly);
        assert!(!out.classification.is_phishing);
        assert_eq!(out.classification.l_ensemble, 0.0);
        assert!(out.d0.is_none() && out.neighbors.is_empty());
    }

    #[test]
    fn errors_name_their_stage() {
        let p = platform();
        let empty = EmailContent {
            sender: None,
            subject: None,
            body: "  ".into(),
        };
        assert_eq!(p.submit(&empty).unwrap_err().stage, Stage::Validation);
        let err = p.classify(ClassifyInput::OcrTable("nonsense".into())).unwrap_err();
        assert_eq!(err.stage, Stage::Ocr);
        assert_eq!(p.search("x", 0).unwrap_err().stage, Stage::Validation);
        assert_eq!(p.search("x", 101).unwrap_err().stage, Stage::Validation);
    }

    #[test]
    fn search_and_lookup() {
        let p = platform();
        assert!(p.search("anything", 5).unwrap().is_empty());
        let a = p.submit(&phish()).unwrap();
        p.submit(&EmailContent::body_only("You have won a prize, claim it now").unwrap())
            .unwrap();
        let hits = p.search(&a.text, 2).unwrap();
        assert_eq!(hits[0].email.id, a.id);
        assert_eq!(hits[0].squared_distance, 0.0);
        assert_eq!(p.email(a.id).unwrap().text, a.text);
        assert!(p.email(RecordId(99)).is_none());
    }

    #[test]
    fn preload_skips_trends() {
        let p = platform();
        let ids = p
            .preload(vec![
                (EmailContent::body_only("hello team").unwrap(), Label::Benign),
                (EmailContent::body_only("reset password now").unwrap(), Label::Phishing),
            ])
            .unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(p.bowl().len(), 2);
        assert!(p.trends().is_empty());
    }

    #[test]
    fn repeated_submissions_raise_an_alert() {
        let settings = PipelineSettings {
            trend: TrendConfig {
                t_alert: 150.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let p = platform_with(Arc::new(HeuristicVerdictClient), settings);
        let first = p.submit(&phish()).unwrap();
        assert!(first.alert.is_none());
        let second = p.submit(&phish()).unwrap();
        assert_eq!(second.group_id, first.group_id);
        let alert = second.alert.expect("second submission crosses 150");
        assert_eq!(alert.representative_record_id, Some(first.id));
        assert_eq!(p.alerts().len(), 1);
        assert_eq!(p.trends()[0].member_count, 2);
    }

    #[test]
    fn label_in_embedding_changes_stored_vectors() {
        let settings = PipelineSettings {
            label_in_embedding: true,
            ..Default::default()
        };
        let p = platform_with(Arc::new(HeuristicVerdictClient), settings);
        p.submit(&phish()).unwrap();
        let out = p.classify(ClassifyInput::Text(phish())).unwrap();
        assert!(out.d0.unwrap() > 0.0);
    }
}
