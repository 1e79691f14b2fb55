use std::io::Write;
use std::path::PathBuf;

use alignkit_core::records::{
    load_annotations, load_prompt_set, read_jsonl, validate_annotation_file, write_jsonl,
    PromptRecord, RatingRecord, TemplateKind,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn prompt_set_round_trips_in_order() {
    let path = fixture("prompts_2000.jsonl");
    let records = load_prompt_set(&path).unwrap();
    let raw: Vec<serde_json::Value> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for (r, v) in records.iter().zip(&raw) {
        assert_eq!(r.id, v["id"].as_str().unwrap());
        assert_eq!(r.text, v["text"].as_str().unwrap());
    }

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again.jsonl");
    write_jsonl(&out, &records).unwrap();
    assert_eq!(load_prompt_set(&out).unwrap(), records);
}

#[test]
fn unknown_fields_survive_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    std::fs::write(
        &path,
        "{\"id\":\"a\",\"text\":\"x\",\"source\":\"s\",\"skills\":[],\"future\":{\"k\":[1,2]}}\n",
    )
    .unwrap();
    let records = load_prompt_set(&path).unwrap();
    assert_eq!(records[0].extra["future"]["k"][1], 2);
    let out = dir.path().join("q.jsonl");
    write_jsonl(&out, &records).unwrap();
    let back: Vec<PromptRecord> = read_jsonl(&out).unwrap();
    assert_eq!(back, records);
}

#[test]
fn mixed_annotation_fixture_counts() {
    let prompts = vec![PromptRecord::new("p1", "A red colored dog.")];
    let report =
        validate_annotation_file(&fixture("annotations_mixed.jsonl"), Some(&prompts)).unwrap();
    assert!(report.is_clean(), "{:?}", report.violations);
    assert_eq!(report.records, 12);
    for kind in TemplateKind::ALL {
        assert_eq!(report.count(kind), 3, "{kind}");
    }
    let records = load_annotations(&fixture("annotations_mixed.jsonl")).unwrap();
    assert_eq!(records[11].extra["session"], "s-17");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a.jsonl");
    write_jsonl(&out, &records).unwrap();
    let back: Vec<RatingRecord> = read_jsonl(&out).unwrap();
    assert_eq!(back, records);
}

#[test]
fn annotation_violations_are_reported_not_raised() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        f,
        "{{\"prompt_id\":\"p\",\"image_id\":\"i\",\"model_id\":\"m\",\"rater_id\":\"r\",\"template\":\"likert\",\"payload\":{{\"value\":6}}}}"
    )
    .unwrap();
    writeln!(f, "not json").unwrap();
    let report = validate_annotation_file(f.path(), None).unwrap();
    assert_eq!(report.records, 1);
    assert_eq!(report.violations.len(), 2);
    assert!(report.violations[0].message.contains("rating out of range"));
    assert_eq!(report.violations[1].line, 2);

    let empty = tempfile::NamedTempFile::new().unwrap();
    let report = validate_annotation_file(empty.path(), None).unwrap();
    assert_eq!(report.records, 0);
    assert!(report.counts.values().all(|n| *n == 0));
}
