//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use phishbowl::email_model::{
    convert, estimate_tokens, ConverterConfig, EmailContent, EmailError, KeptParts, Label,
    LabeledEmail, TruncationStrategy,
};
use phishbowl::ensemble::{combine, EnsembleConfig};
use phishbowl::eval_harness::{
    format_percent, metrics, AnalyzerKind, Balance, ConfusionCounts, ExperimentContext,
    ExperimentSpec, SyntheticCorpus,
};
use phishbowl::gpt_analyzer::HeuristicVerdictClient;
use phishbowl::ocr_extract::{extract_from_table, OcrConfig};
use phishbowl::trend_alerts::{calibrate_threshold, Observation, TrendConfig, TrendTracker};
use phishbowl::vector_bowl::{
    confidence, reciprocal_weights, weighted_label, BowlConfig, HashedEmbedder, PhishBowl,
    RecordId, Source,
};

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn metrics_rows() -> Check {
    let started = Instant::now();
    let rows = [
        (ConfusionCounts::new(1991, 8, 2040, 57), ["98.41%", "99.60%", "97.22%"]),
        (ConfusionCounts::new(2048, 2048, 0, 0), ["50.00%", "50.00%", "100.00%"]),
    ];
    for (counts, expected) in rows {
        let m = metrics(&counts);
        let got = [m.accuracy, m.precision, m.recall].map(format_percent);
        ensure(got == expected.map(String::from), || format!("{counts:?}: {got:?}"))?;
    }
    within(started.elapsed(), Duration::from_secs(1))
}

fn random_neighbors(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let k = rng.random_range(1..=12);
    (0..k)
        .map(|_| {
            // zero distances are common in practice, so draw them often
            let d = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..4.0) };
            (d, if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        })
        .collect()
}

fn weighting_properties() -> Check {
    const EPS: f64 = 1e-8;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..10_000 {
        let set = random_neighbors(&mut rng);
        let distances: Vec<f64> = set.iter().map(|p| p.0).collect();
        let w = reciprocal_weights(&distances, EPS);
        let sum: f64 = w.iter().sum();
        ensure((sum - 1.0).abs() <= 1e-9, || format!("set {i}: weights sum to {sum}"))?;
        let l = weighted_label(&set, EPS);
        ensure((0.0..=1.0).contains(&l), || format!("set {i}: l_raw = {l}"))?;

        // a phishing duplicate at zero distance, every other neighbour at least 0.5 away
        let mut dup: Vec<(f64, f64)> = set.iter().map(|&(d, l)| (d + 0.5, l)).take(11).collect();
        dup.insert(0, (0.0, 1.0));
        let w = reciprocal_weights(&dup.iter().map(|p| p.0).collect::<Vec<_>>(), EPS);
        ensure(w[0] >= 1.0 - 1e-6, || format!("set {i}: duplicate weight {}", w[0]))?;
        let l = weighted_label(&dup, EPS);
        ensure(l >= 1.0 - 1e-6, || format!("set {i}: duplicate l_raw {l}"))?;
    }
    within(started.elapsed(), Duration::from_secs(10))
}

fn confidence_decay() -> Check {
    ensure(confidence(0.0, 0.5) == 1.0, || "l_conf(0) != 1".into())?;
    let mut previous = confidence(0.0, 0.5);
    for step in 1..=2000 {
        let d = f64::from(step) * 0.025;
        let c = confidence(d, 0.5);
        ensure(c < previous, || format!("not decreasing at d0 = {d}"))?;
        previous = c;
    }
    let c = confidence(2.0, 0.5);
    ensure((c - (-1.0f64).exp()).abs() <= 1e-12, || format!("l_conf(2) = {c}"))
}

fn ensemble_identities() -> Check {
    let config = EnsembleConfig::default();
    let l = |r, c, g| combine(r, c, g, &config).map(|o| o.l_ensemble).map_err(|e| e.to_string());
    for g in [0.0, 0.3, 0.5, 0.95, 1.0] {
        let out = l(0.7, 0.0, g)?;
        ensure((out - g).abs() <= 1e-12, || format!("c = 0, l_gpt = {g}: {out}"))?;
    }
    let one = l(1.0, 1.0, 1.0)?;
    ensure((one - 1.0).abs() <= 1e-12, || format!("(1,1,1): {one}"))?;
    let eight = l(1.0, 1.0, 0.0)?;
    ensure((eight - 0.8).abs() <= 1e-12, || format!("(1,1,0): {eight}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10_000 {
        let (r, c, g) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let out = l(r, c, g)?;
        ensure((0.0..=1.0).contains(&out), || format!("({r}, {c}, {g}): {out}"))?;
    }
    Ok(())
}

fn knn_oracle() -> Check {
    const DIM: usize = 256;
    const K: usize = 12;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let random_vector = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..DIM).map(|_| rng.random_range(-1.0..1.0)).collect() };
    for store in 0..100 {
        let n = rng.random_range(1..=1000);
        let bowl = PhishBowl::in_memory(DIM);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let v = if i > 0 && rng.random_bool(0.05) {
                vectors[rng.random_range(0..i)].clone()
            } else {
                random_vector(&mut rng)
            };
            let label = if rng.random_bool(0.5) { Label::Phishing } else { Label::Benign };
            bowl.insert(format!("r{i}"), label, Source::Preloaded, v.clone(), Utc::now())
                .map_err(|e| e.to_string())?;
            vectors.push(v);
        }
        let query = if rng.random_bool(0.3) {
            vectors[rng.random_range(0..n)].clone()
        } else {
            random_vector(&mut rng)
        };
        let mut expected: Vec<(RecordId, f64)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (RecordId(i as u64), v.iter().zip(&query).map(|(a, b)| (a - b).powi(2)).sum()))
            .collect();
        expected.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        expected.truncate(K);
        let got: Vec<(RecordId, f64)> = bowl
            .nearest(&query, K)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|nb| (nb.id, nb.squared_distance))
            .collect();
        ensure(got == expected, || format!("store {store} (n = {n}) differs from full scan"))?;
    }
    within(started.elapsed(), Duration::from_secs(30))
}

fn phish_only_degeneracy() -> Check {
    let embedder = HashedEmbedder::default();
    let analyst = HeuristicVerdictClient;
    let ctx = ExperimentContext {
        embedder: &embedder,
        analyst: &analyst,
        converter: ConverterConfig::default(),
        bowl: BowlConfig::default(),
        ensemble: EnsembleConfig::default(),
        verdict_attempts: 1,
    };
    let corpus = SyntheticCorpus::default().generate(1400, 5);
    let spec = ExperimentSpec {
        train_size: 512,
        test_size: 200,
        balance: Balance::PhishOnly,
        lambda: None,
        analyzer: AnalyzerKind::Bowl,
        seed: 3,
    };
    let off = ctx.run(&spec, &corpus).map_err(|e| e.to_string())?;
    ensure(off.counts.total() == 200, || format!("test set has {} emails", off.counts.total()))?;
    ensure(off.counts.tn == 0 && off.counts.fn_ == 0, || format!("decay off: {:?}", off.counts))?;
    let on = ctx
        .run(&ExperimentSpec { lambda: Some(1.0), ..spec }, &corpus)
        .map_err(|e| e.to_string())?;
    ensure(on.counts.tn + on.counts.fn_ > 0, || format!("decay on: {:?}", on.counts))
}

fn trend_calibration() -> Check {
    const DAILY: usize = 100;
    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2025, 1, 1, 12, 0, 0).unwrap();
    for (p, k, t, expected) in [(20.0, 0.5, 3u32, 35.0), (10.0, 0.8, 5, 33.616), (50.0, 0.25, 2, 62.5)] {
        let threshold = calibrate_threshold(p, k, t);
        ensure((threshold - expected).abs() < 1e-9, || format!("({p}, {k}, {t}) calibrates to {threshold}"))?;
        let config = TrendConfig {
            k_alert: k,
            t_alert: threshold,
            ..Default::default()
        };
        let mut tracker = TrendTracker::new(config).map_err(|e| e.to_string())?;
        let (target, background) = ([1.0, 0.0], [0.0, 1.0]);
        let mut observe = |v: &[f64], label: f64, at| {
            tracker
                .add_observation(Observation {
                    vector: v,
                    label,
                    at,
                    record_id: None,
                    text: None,
                })
                .map_err(|e| e.to_string())
        };
        let warmup = config.daily_window_days;
        for d in 0..warmup {
            for _ in 0..DAILY {
                observe(&background, 0.0, start + chrono::Duration::days(i64::from(d)))?;
            }
        }
        let phish = (p / 100.0 * DAILY as f64).round() as usize;
        let (mut alert_days, mut score) = (Vec::new(), 0.0);
        for day in 1..=t {
            let at = start + chrono::Duration::days(i64::from(warmup + day - 1));
            for _ in 0..phish {
                let out = observe(&target, 1.0, at)?;
                score = out.score;
                if out.alert.is_some() {
                    alert_days.push(day);
                }
            }
            for _ in phish..DAILY {
                observe(&background, 0.0, at)?;
            }
        }
        ensure((score - threshold).abs() < 1e-9, || format!("({p}, {k}, {t}) reached {score}, want {threshold}"))?;
        ensure(alert_days == vec![t], || format!("({p}, {k}, {t}) alerted on days {alert_days:?}"))?;
    }
    Ok(())
}

fn lazy_learning() -> Check {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let h = common::harness();
        let email = json!({
            "sender": "Billing <billing@invoices-secure.example>",
            "subject": "Outstanding invoice",
            "body": "Dear customer, your invoice is overdue. Pay now at the secure portal to avoid suspension."
        });
        let (status, _) = h.post("/api/submit", email.clone()).await;
        ensure(status.as_u16() == 201, || format!("submit returned {status}"))?;
        let (status, out) = h.post("/api/classify", email).await;
        ensure(status.is_success(), || format!("classify returned {status}: {out}"))?;
        let d0 = out["d0"].as_f64();
        let l_conf = out["classification"]["l_conf"].as_f64();
        ensure(d0 == Some(0.0) && l_conf == Some(1.0), || format!("d0 = {d0:?}, l_conf = {l_conf:?}"))
    })
}

fn ocr_fixtures() -> Check {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ocr");
    let cases = [
        (
            "header_cutoff.tsv",
            Some("user0@corp.example"),
            None,
            "Dear colleague,\nPlease review the attached schedule.\nRegards",
        ),
        (
            "greeting_body.tsv",
            Some("support@parcel-track.example"),
            Some("Delivery attempt failed"),
            "Hello customer,\nWe could not deliver your parcel today.\nConfirm your address at the link below.",
        ),
        (
            "subject_height.tsv",
            Some("security@paybank-alerts.example"),
            Some("Your account has been suspended"),
            "Dear valued member,\nWe detected unusual sign-in activity.\n\
             Verify your identity within 24 hours.\nsecurity@paybank-alerts.example\nThank you.",
        ),
    ];
    for (name, sender, subject, body) in cases {
        let table = std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let out = extract_from_table(&table, &OcrConfig::default()).map_err(|e| format!("{name}: {e}"))?;
        ensure(
            out.sender.as_deref() == sender && out.subject.as_deref() == subject && out.body == body,
            || format!("{name}: {out:?}"),
        )?;
    }
    Ok(())
}

fn random_text(rng: &mut ChaCha8Rng, max_chars: usize) -> String {
    const ALPHABET: &[char] = &['a', 'o', 'm', 's', ' ', ' ', '.', 'ü', '€', '\n', '語'];
    let n = rng.random_range(1..=max_chars);
    let mut s: String = (0..n).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect();
    if s.trim().is_empty() {
        s.push('x');
    }
    s
}

/// body > label > sender > subject; an absent sender does not block the subject.
fn priority_respected(kept: KeptParts, email: &LabeledEmail) -> bool {
    let sender_ok = !kept.sender || kept.label_line;
    let subject_ok = !kept.subject || (kept.label_line && (kept.sender || email.content.sender.is_none()));
    let body_ok = kept.body_complete || !(kept.sender || kept.subject);
    sender_ok && subject_ok && body_ok
}

fn truncation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..1000 {
        let sender = rng.random_bool(0.7).then(|| random_text(&mut rng, 120).replace('\n', " "));
        let subject = rng.random_bool(0.7).then(|| random_text(&mut rng, 200).replace('\n', " "));
        let body_max = if rng.random_bool(0.2) { 40_000 } else { 3_000 };
        let body = random_text(&mut rng, body_max);
        let content = EmailContent::new(sender, subject, body).map_err(|e| e.to_string())?;
        let label = [None, Some(Label::Benign), Some(Label::Phishing)][rng.random_range(0..3)];
        let email = LabeledEmail::new(content, label);
        let limit = rng.random_range(8..=2048);
        for strategy in [
            TruncationStrategy::NoTruncation,
            TruncationStrategy::End,
            TruncationStrategy::Content,
            TruncationStrategy::ContentEnd,
        ] {
            let config = ConverterConfig::new(strategy, limit).map_err(|e| e.to_string())?;
            match convert(&email, &config, &config.estimator()) {
                Ok(out) => {
                    let tokens = estimate_tokens(&out.text, config.tokens_per_char);
                    ensure(strategy == TruncationStrategy::NoTruncation || tokens <= limit, || {
                        format!("email {i} {strategy:?}: {tokens} tokens > {limit}")
                    })?;
                    if matches!(strategy, TruncationStrategy::Content | TruncationStrategy::ContentEnd) {
                        ensure(priority_respected(out.kept, &email), || {
                            format!("email {i} {strategy:?}: kept {:?}", out.kept)
                        })?;
                    }
                }
                // the body alone exceeds the limit and Content never cuts it
                Err(EmailError::DoesNotFit { .. }) if strategy == TruncationStrategy::Content => {}
                Err(e) => return Err(format!("email {i} {strategy:?}: {e}")),
            }
        }
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("metrics for reference confusion counts", metrics_rows),
        ("reciprocal weighting properties", weighting_properties),
        ("confidence decay", confidence_decay),
        ("ensemble identities and range", ensemble_identities),
        ("k-NN equals brute-force scan", knn_oracle),
        ("phish-only degeneracy", phish_only_degeneracy),
        ("trend threshold calibration", trend_calibration),
        ("submit then classify is immediate", lazy_learning),
        ("OCR extraction fixtures", ocr_fixtures),
        ("truncation limits and priority", truncation),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        match result {
            Ok(()) => println!("PASS  {name} ({:.2}s)", elapsed.as_secs_f64()),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name} ({:.2}s): {reason}", elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
