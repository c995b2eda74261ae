//! Dataset loaders, the seeded split, metrics and report formats.

use std::collections::HashSet;
use std::io::Write;

use leap_core::eval::{
    compute_metrics, load_dataset, parse_machine_report, percent_cell, render_report, sample_split, Confusion,
    DatasetFormat, EvalError, EvalReport, Metrics, PerClaim, ReportFormat,
};
use leap_core::{Claim, Label};
use proptest::prelude::*;
use Label::{Hallucination as H, NotHallucination as N};

fn file(lines: &[&str]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
    f
}

type Case = ((usize, usize, usize, usize), [f64; 4]);

fn pairs(tp: usize, fp: usize, tn: usize, fn_: usize) -> Vec<(Label, Label)> {
    let mut v = Vec::new();
    v.extend(std::iter::repeat_n((H, H), tp));
    v.extend(std::iter::repeat_n((N, H), fp));
    v.extend(std::iter::repeat_n((N, N), tn));
    v.extend(std::iter::repeat_n((H, N), fn_));
    v
}

#[test]
fn native_format() {
    let f = file(&[
        r#"{"id":"a","query":"q1","response":"r1","gold_label":"Hallucination"}"#,
        "",
        r#"{"id":"b","query":"q2","response":"r2"}"#,
    ]);
    let claims = load_dataset(f.path(), DatasetFormat::Native).unwrap();
    assert_eq!(claims.len(), 2);
    assert_eq!(claims[0].gold_label, Some(H));
    assert_eq!(claims[1].gold_label, None);

    let bad = file(&[r#"{"id":"a","query":"q1","response":"r1"}"#, r#"{"id":"b","query":"q2"}"#]);
    match load_dataset(bad.path(), DatasetFormat::Native) {
        Err(EvalError::Format { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn halueval_paired_and_single_rows() {
    let f = file(&[
        r#"{"knowledge":"k","question":"Who wrote it?","right_answer":"Ann","hallucinated_answer":"Bob"}"#,
        r#"{"question":"Where?","answer":"Paris","label":"faithful"}"#,
        r#"{"question":"When?","answer":"1990","label":"hallucinated"}"#,
    ]);
    let claims = load_dataset(f.path(), DatasetFormat::HaluevalQa).unwrap();
    let got: Vec<(&str, &str, Option<Label>)> =
        claims.iter().map(|c| (c.id.as_str(), c.response.as_str(), c.gold_label)).collect();
    assert_eq!(
        got,
        [
            ("1-right", "Ann", Some(N)),
            ("1-hallucinated", "Bob", Some(H)),
            ("2", "Paris", Some(N)),
            ("3", "1990", Some(H)),
        ]
    );
    assert_eq!(claims[0].query, "Who wrote it?");

    let bad = file(&[r#"{"question":"x","answer":"y","label":"maybe"}"#]);
    match load_dataset(bad.path(), DatasetFormat::HaluevalQa) {
        Err(EvalError::Format { line, message, .. }) => {
            assert_eq!(line, 1);
            assert!(message.contains("maybe"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn generic_pairs_with_aliases_and_default_ids() {
    let f = file(&[
        r#"{"query":"q","response":"r","label":"Not Hallucination"}"#,
        r#"{"id":"x","query":"q","response":"r","label":"hallucinated"}"#,
        r#"{"query":"q","response":"r"}"#,
    ]);
    let claims = load_dataset(f.path(), DatasetFormat::GenericPairs).unwrap();
    let ids: Vec<&str> = claims.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["1", "x", "3"]);
    assert_eq!(claims.iter().map(|c| c.gold_label).collect::<Vec<_>>(), [Some(N), Some(H), None]);
    let bad = file(&[r#"{"query":"q","response":"r","extra":1}"#]);
    assert!(matches!(load_dataset(bad.path(), DatasetFormat::GenericPairs), Err(EvalError::Format { line: 1, .. })));
}

#[test]
fn duplicate_ids_are_rejected() {
    let f = file(&[
        r#"{"id":"a","query":"q","response":"r"}"#,
        r#"{"id":"a","query":"q","response":"s"}"#,
    ]);
    assert!(load_dataset(f.path(), DatasetFormat::GenericPairs).is_err());
}

#[test]
fn unknown_format_names() {
    assert!("csv".parse::<DatasetFormat>().is_err());
    assert_eq!("halueval_qa".parse::<DatasetFormat>().unwrap(), DatasetFormat::HaluevalQa);
    assert!("html".parse::<ReportFormat>().is_err());
}

fn corpus(n: usize) -> Vec<Claim> {
    (0..n).map(|i| Claim::new(format!("c{i}"), "q", "r", Some(H)).unwrap()).collect()
}

#[test]
fn split_bounds() {
    let c = corpus(10);
    assert!(matches!(sample_split(&c, 0, 1), Err(EvalError::Split { n: 0, len: 10 })));
    assert!(sample_split(&c, 11, 1).is_err());
    let all = sample_split(&c, 10, 1).unwrap();
    let ids: HashSet<_> = all.iter().map(|c| c.id.clone()).collect();
    assert_eq!(ids.len(), 10);
}

#[test]
fn hand_computed_metrics() {
    let cases: [Case; 4] = [
        ((2, 1, 6, 1), [0.8, 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]),
        ((3, 0, 0, 1), [0.75, 1.0, 0.75, 6.0 / 7.0]),
        ((0, 2, 3, 0), [0.6, 0.0, 0.0, 0.0]),
        ((0, 0, 0, 0), [0.0, 0.0, 0.0, 0.0]),
    ];
    for ((tp, fp, tn, fn_), [acc, p, r, f1]) in cases {
        let m = compute_metrics(&pairs(tp, fp, tn, fn_));
        assert_eq!(m.confusion, Confusion { tp, fp, tn, fn_ });
        for (got, want) in [(m.accuracy, acc), (m.precision, p), (m.recall, r), (m.f1, f1)] {
            assert!((got - want).abs() <= 1e-12, "{tp} {fp} {tn} {fn_}: {got} vs {want}");
        }
    }
}

fn per_claim(tp: usize, fp: usize, tn: usize, fn_: usize) -> Vec<PerClaim> {
    pairs(tp, fp, tn, fn_)
        .into_iter()
        .enumerate()
        .map(|(i, (gold, predicted))| PerClaim {
            id: format!("c{i}"),
            gold,
            predicted,
            n_steps: 2,
            corrected: i % 2 == 0,
        })
        .collect()
}

#[test]
fn text_table_layout() {
    let r = EvalReport::new("halueval", per_claim(2, 1, 6, 1), 3);
    let text = render_report(&r, ReportFormat::TextTable);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# positive class: Hallucination");
    assert_eq!(lines[1].len(), lines[2].len());
    assert!(lines[2].ends_with("80.00 / 66.67"), "{}", lines[2]);
    assert!(lines[2].contains(" 10 "));
    assert_eq!(lines[3], "# tp=2 fp=1 tn=6 fn=1 failed=3");
}

#[test]
fn machine_report_round_trip() {
    let r = EvalReport::new("set", per_claim(4, 2, 3, 1), 1);
    let text = render_report(&r, ReportFormat::Machine);
    assert_eq!(text.lines().count(), 1);
    assert!(text.contains("\"fn\":1"));
    assert_eq!(parse_machine_report(&text).unwrap(), r);
    assert!(parse_machine_report("{}").is_err());
}

#[test]
fn percent_convention() {
    assert_eq!(percent_cell(0.7419, 0.75), "74.19 / 75.00");
    assert_eq!(percent_cell(1.0, 0.0), "100.00 / 0.00");
    assert_eq!(percent_cell(0.5, 2.0 / 3.0), "50.00 / 66.67");
}

proptest! {
    #[test]
    fn split_is_a_deterministic_subset(len in 1usize..200, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let c = corpus(len);
        let n = ((len as f64 * frac) as usize).clamp(1, len);
        let a = sample_split(&c, n, seed).unwrap();
        prop_assert_eq!(a.len(), n);
        let ids: HashSet<_> = a.iter().map(|c| c.id.clone()).collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert!(a.iter().all(|x| c.contains(x)));
        prop_assert_eq!(sample_split(&c, n, seed).unwrap(), a);
    }

    #[test]
    fn metric_identities(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        let m: Metrics = compute_metrics(&pairs(tp, fp, tn, fn_));
        let n = tp + fp + tn + fn_;
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if n > 0 {
            prop_assert!((m.accuracy - (tp + tn) as f64 / n as f64).abs() <= 1e-12);
        }
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
        prop_assert!((m.f1 - f1).abs() <= 1e-12);
        if fp == fn_ {
            prop_assert!((m.precision - m.recall).abs() <= 1e-12);
            prop_assert!((m.f1 - m.precision).abs() <= 1e-12);
        }
    }

    #[test]
    fn swapping_the_positive_class_swaps_the_confusion(tp in 0usize..30, fp in 0usize..30, tn in 0usize..30, fn_ in 0usize..30) {
        let swapped: Vec<(Label, Label)> = pairs(tp, fp, tn, fn_).into_iter().map(|(g, p)| (g.flipped(), p.flipped())).collect();
        let m = compute_metrics(&swapped);
        prop_assert_eq!(m.confusion, Confusion { tp: tn, fp: fn_, tn: tp, fn_: fp });
        let orig = compute_metrics(&pairs(tp, fp, tn, fn_));
        prop_assert!((m.accuracy - orig.accuracy).abs() <= 1e-12);
    }

    #[test]
    fn order_does_not_matter(mut v in prop::collection::vec((any::<bool>(), any::<bool>()), 0..60)) {
        let to = |b: bool| if b { H } else { N };
        let a = compute_metrics(&v.iter().map(|&(g, p)| (to(g), to(p))).collect::<Vec<_>>());
        v.reverse();
        let b = compute_metrics(&v.iter().map(|&(g, p)| (to(g), to(p))).collect::<Vec<_>>());
        prop_assert_eq!(a, b);
    }
}
