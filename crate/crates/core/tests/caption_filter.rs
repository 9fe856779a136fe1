use std::path::PathBuf;
use std::sync::Arc;

use grade_core::backends::{BackendProfile, Client, Fixture, Matcher, MockTransport, Role};
use grade_core::caption_filter::{collect_filtered, compare_to_reference, filter_caption, CaptionRecord, Verdict};
use grade_core::model::{AttributeQuestion, Concept, Scope, ValueDistribution};
use grade_core::templates::Templates;
use proptest::prelude::*;
use serde_json::{json, Value};

fn bundled_llm() -> Client {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mock/llm.jsonl");
    Client::from_profile(BackendProfile::mock("llm", Role::Llm, Some(path)), None).unwrap()
}

fn rule(contains: &str, response: Value) -> Fixture {
    Fixture {
        request_hash: None,
        matcher: Some(Matcher {
            role: None,
            contains: vec![contains.into()],
            image_contains: vec![],
        }),
        response,
    }
}

// captions containing "pass" are kept, everything else rejected
fn pass_fail_llm(batch: usize) -> Client {
    let mut profile = BackendProfile::mock("llm", Role::Llm, None);
    profile.batch_size = batch;
    let fixtures = vec![rule("caption: pass", json!("yes")), rule("caption:", json!("no"))];
    Client::with_transport(profile, Arc::new(MockTransport::new(fixtures)), None)
}

fn cookie() -> (Concept, AttributeQuestion) {
    let q = AttributeQuestion {
        id: "cookie_q0".into(),
        concept_id: "cookie".into(),
        attribute_label: "shape".into(),
        question_text: "What is the shape of the cookie?".into(),
    };
    (Concept::from_name("cookie"), q)
}

fn captions(mask: &[bool]) -> Vec<CaptionRecord> {
    mask.iter()
        .enumerate()
        .map(|(i, &keep)| CaptionRecord {
            caption: format!("{} cookie {i:04}", if keep { "pass" } else { "some" }),
            image_uri: format!("img/{i:04}.png"),
        })
        .collect()
}

#[test]
fn three_reference_captions() {
    let client = bundled_llm();
    let t = Templates::default();
    let (c, q) = cookie();
    let verdict = |text: &str| filter_caption(&client, &t, text, &c, &q).unwrap().verdict;
    assert_eq!(verdict("a cookie on a table"), Verdict::Keep);
    assert_eq!(verdict("a classic chocolate chip cookie"), Verdict::Reject);
    assert_eq!(verdict("cookie cutter"), Verdict::Reject);
    assert!(filter_caption(&client, &t, "   ", &c, &q).is_err());
}

#[test]
fn cap_keeps_first_passing_in_order() {
    // 500 candidates, 200 of which pass
    let mask: Vec<bool> = (0..500).map(|i| i % 5 < 2).collect();
    assert_eq!(mask.iter().filter(|&&k| k).count(), 200);
    let records = captions(&mask);
    let client = pass_fail_llm(16);
    let t = Templates::default();
    let (c, q) = cookie();

    let out = collect_filtered(&client, &t, &records, &c, &q, 150).unwrap();
    let expected: Vec<CaptionRecord> = records
        .iter()
        .zip(&mask)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .take(150)
        .collect();
    assert_eq!(out.kept, expected);
    // the 150th passing caption is at index 5 * 74 + 1
    assert_eq!(out.n_seen, 372);
    assert_eq!(out.n_rejected, out.n_seen - 150);
    assert_eq!(out.n_undecided, 0);
}

#[test]
fn nothing_passes() {
    let records = captions(&[false; 500]);
    let client = pass_fail_llm(32);
    let t = Templates::default();
    let (c, q) = cookie();
    let out = collect_filtered(&client, &t, &records, &c, &q, 150).unwrap();
    assert!(out.kept.is_empty());
    assert_eq!(out.n_seen, 500);
    assert_eq!(out.n_rejected, 500);
}

#[test]
fn cap_of_one() {
    let records = captions(&[false, false, true, true]);
    let client = pass_fail_llm(4);
    let t = Templates::default();
    let (c, q) = cookie();
    let out = collect_filtered(&client, &t, &records, &c, &q, 1).unwrap();
    assert_eq!(out.kept, vec![records[2].clone()]);
    assert_eq!(out.n_seen, 3);
}

#[test]
fn backend_failure_is_undecided_and_excluded() {
    let mut profile = BackendProfile::mock("llm", Role::Llm, None);
    profile.retry_backoff_ms = 0;
    let client = Client::with_transport(
        profile,
        Arc::new(MockTransport::new(vec![rule("caption: pass", json!("yes"))])),
        None,
    );
    let records = captions(&[true, false, true]);
    let t = Templates::default();
    let (c, q) = cookie();
    let out = collect_filtered(&client, &t, &records, &c, &q, 10).unwrap();
    assert_eq!(out.kept, vec![records[0].clone(), records[2].clone()]);
    assert_eq!(out.n_undecided, 1);
}

#[test]
fn reruns_are_deterministic() {
    let mask: Vec<bool> = (0..97).map(|i| (i * 37) % 11 < 4).collect();
    let records = captions(&mask);
    let t = Templates::default();
    let (c, q) = cookie();
    let a = collect_filtered(&pass_fail_llm(3), &t, &records, &c, &q, 20).unwrap();
    let b = collect_filtered(&pass_fail_llm(13), &t, &records, &c, &q, 20).unwrap();
    assert_eq!(a, b);
}

fn dist(probs: &[(&str, f64)], support: usize) -> ValueDistribution {
    ValueDistribution {
        question_id: "cookie_q0".into(),
        concept_id: "cookie".into(),
        scope: Scope::MultiPrompt,
        probabilities: probs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        support_size: support,
        n_counted: 100,
        n_discarded: 0,
        n_prompts: 1,
        valid: true,
    }
}

#[test]
fn reference_comparison() {
    let model = dist(&[("round", 0.9), ("square", 0.1), ("oval", 0.0)], 3);
    let data = dist(&[("round", 0.5), ("square", 0.3), ("oval", 0.2)], 3);
    let c = compare_to_reference(&model, &data).unwrap();

    let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.log2()).sum::<f64>() / 3f64.log2();
    assert!((c.entropy_model - h(&[0.9, 0.1])).abs() < 1e-12);
    assert!((c.entropy_dataset - h(&[0.5, 0.3, 0.2])).abs() < 1e-12);
    assert!((c.tvd - 0.4).abs() < 1e-12);

    // aligned order is oval, round, square
    let x = [0.0, 0.9, 0.1];
    let y = [0.2, 0.5, 0.3];
    let mean = |v: &[f64]| v.iter().sum::<f64>() / 3.0;
    let (mx, my) = (mean(&x), mean(&y));
    let cov: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    assert!((c.pcc.unwrap() - cov / (sx * sy)).abs() < 1e-12);

    let flat = dist(&[("round", 0.5), ("square", 0.5)], 2);
    let other = dist(&[("round", 0.9), ("square", 0.1)], 2);
    let c = compare_to_reference(&flat, &other).unwrap();
    assert_eq!(c.pcc, None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kept_is_an_ordered_prefix_of_passing(mask in proptest::collection::vec(any::<bool>(), 0..80), cap in 0usize..30, batch in 1usize..9) {
        let records = captions(&mask);
        let t = Templates::default();
        let (c, q) = cookie();
        let out = collect_filtered(&pass_fail_llm(batch), &t, &records, &c, &q, cap).unwrap();
        let passing: Vec<CaptionRecord> = records.iter().zip(&mask).filter(|(_, &k)| k).map(|(r, _)| r.clone()).collect();
        prop_assert!(out.kept.len() <= cap);
        prop_assert_eq!(out.kept.len(), passing.len().min(cap));
        prop_assert_eq!(&out.kept[..], &passing[..out.kept.len()]);
    }
}
