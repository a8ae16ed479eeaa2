//! Adaptive phish-bowl detection: anonymize, embed, store, classify and
//! trend-track phishing emails.
//!
//! Two analyzers feed the final verdict. The bowl analyzer scores an email
//! against its nearest stored neighbours; the verdict analyzer asks a chat
//! model for a structured judgement. [`ensemble::combine`] blends them by
//! the bowl's confidence.

pub mod anonymizer;
pub mod client;
pub mod email_model;
pub mod ensemble;
pub mod eval_harness;
pub mod gpt_analyzer;
pub mod ocr_extract;
pub mod platform;
pub mod strict_json;
pub mod trend_alerts;
pub mod vector_bowl;
