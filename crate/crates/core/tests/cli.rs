use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rbpasta::classes::ClassId;
use rbpasta::eval::EvalReport;
use rbpasta::rules::{RuleKind, RuleMatrix};
use serde_json::Value;
use tempfile::TempDir;

fn rbpasta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbpasta"))
        .args(args)
        .env_remove("RBP_LOG")
        .output()
        .expect("spawn rbpasta")
}

fn ok(args: &[&str]) -> String {
    let out = rbpasta(args);
    assert!(
        out.status.success(),
        "rbpasta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The single JSON error line a failing run prints to stderr.
fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("stderr is empty");
    serde_json::from_str(last).unwrap_or_else(|e| panic!("not a json line ({e}): {last}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, contents: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

const FEED_CAT_CLASSES: &str = "class_id,verb,object,train_count\n7,feed,cat,4\n8,ride,horse,300\n";

/// Three annotators whose mean is the feed-a-cat decimal row.
fn feed_cat_annotations() -> String {
    let labels: [[f64; 3]; 10] = [
        [0.0, 0.0, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.5, 0.0],
        [0.0, 0.0, 0.0],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.5],
        [1.0, 1.0, 1.0],
        [1.0, 1.0, 0.5],
        [1.0, 0.5, 1.0],
        [1.0, 1.0, 1.0],
    ];
    let names = rbpasta::parts::BodyPart::names();
    let mut out = String::from("annotator_id,class_id,part,label\n");
    for a in 0..3 {
        for (part, l) in names.iter().zip(labels) {
            out.push_str(&format!("ann{a},7,{part},{}\n", l[a]));
        }
    }
    out
}

#[test]
fn aggregate_then_booleanize_gives_the_boolean_row() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", FEED_CAT_CLASSES);
    let ann = write(&dir, "ann.csv", &feed_cat_annotations());
    let dec_path = dir.path().join("dec.json");
    ok(&["rules", "aggregate", "--classes", p(&classes), "--annotations", p(&ann), "--out", p(&dec_path)]);
    let dec = RuleMatrix::load(&dec_path).unwrap();
    assert_eq!(dec.kind, RuleKind::Decimal);
    let expected = [0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 0.5, 1.0, 5.0 / 6.0, 5.0 / 6.0, 1.0];
    assert_eq!(dec.row(ClassId(7)).unwrap(), &expected);
    assert_eq!(dec.row(ClassId(8)).unwrap(), &[1.0; 10]);

    let stdout = ok(&["rules", "booleanize", "--rules", p(&dec_path)]);
    let boolean = RuleMatrix::from_json_str(&stdout, "stdout").unwrap();
    assert_eq!(boolean.kind, RuleKind::Boolean);
    assert_eq!(boolean.row(ClassId(7)).unwrap(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]);

    // the written file parses back to the same matrix that stdout would carry
    let again = ok(&["rules", "aggregate", "--classes", p(&classes), "--annotations", p(&ann)]);
    assert_eq!(RuleMatrix::from_json_str(&again, "stdout").unwrap(), dec);
    assert_eq!(again, std::fs::read_to_string(&dec_path).unwrap());
}

#[test]
fn out_of_alphabet_label_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", FEED_CAT_CLASSES);
    let ann = write(&dir, "ann.csv", &feed_cat_annotations().replacen("ann0,7,RFoot,0", "ann0,7,RFoot,0.7", 1));
    let out = rbpasta(&["rules", "aggregate", "--classes", p(&classes), "--annotations", p(&ann)]);
    let err = error_line(&out);
    assert_eq!(err["error"], "domain");
    assert!(err["message"].as_str().unwrap().contains("0.7"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn parse_errors_carry_file_and_line() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", "class_id,verb,object,train_count\n1,feed,cat,4\nx,ride,horse,3\n");
    let err = error_line(&rbpasta(&["rules", "allones", "--classes", p(&classes)]));
    assert_eq!(err["error"], "parse");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("classes.csv:3"), "{msg}");
}

#[test]
fn unknown_flags_are_rejected() {
    let err = error_line(&rbpasta(&["rules", "allones", "--classes", "x.csv", "--frobnicate"]));
    assert_eq!(err["error"], "usage");
    let out = rbpasta(&["--help"]);
    assert!(out.status.success());
}

#[test]
fn validate_flags_non_ones_on_common_rows() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", FEED_CAT_CLASSES);
    let rules = RuleMatrix::new(
        RuleKind::Decimal,
        [(ClassId(7), [0.5; 10]), (ClassId(8), [0.5; 10])].into_iter().collect(),
    );
    let path = write(&dir, "rules.json", &rules.to_json());
    let out = rbpasta(&["rules", "validate", "--rules", p(&path), "--classes", p(&classes)]);
    assert_eq!(error_line(&out)["error"], "domain");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ok"], false);
    assert_eq!(report["violations"][0][0], 8);

    let ones = write(&dir, "ones.json", &ok(&["rules", "allones", "--classes", p(&classes)]));
    ok(&["rules", "validate", "--rules", p(&ones), "--classes", p(&classes)]);
}

#[test]
fn heatmap_is_a_class_by_part_matrix() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", FEED_CAT_CLASSES);
    let ones = write(&dir, "ones.json", &ok(&["rules", "allones", "--classes", p(&classes)]));
    let csv = ok(&["rules", "heatmap", "--rules", p(&ones)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "class_id,RFoot,RThigh,LThigh,LFoot,Hip,Head,RHand,RArm,LArm,LHand");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("7,1"));
}

#[test]
fn perfect_detections_score_one_hundred() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", FEED_CAT_CLASSES);
    let gt = r#"{"image_id":"a","class_id":7,"human_box":[0,0,4,10],"object_box":[5,0,9,10]}
{"image_id":"b","class_id":8,"human_box":[0,0,4,10],"object_box":[5,0,9,10]}
"#;
    let dets = gt.replace("\"class_id\":7,", "\"class_id\":7,\"score\":0.9,").replace("\"class_id\":8,", "\"class_id\":8,\"score\":0.8,");
    let gt_path = write(&dir, "gt.jsonl", gt);
    let det_path = write(&dir, "dets.jsonl", &dets);
    let table = ok(&[
        "eval", "--classes", p(&classes), "--detections", p(&det_path), "--gt", p(&gt_path), "--setting", "both",
        "--format", "table",
    ]);
    let row = table.lines().nth(1).unwrap();
    assert_eq!(row.split_whitespace().skip(1).collect::<Vec<_>>(), vec!["100.00"; 6]);
    let json = ok(&["eval", "--classes", p(&classes), "--detections", p(&det_path), "--gt", p(&gt_path)]);
    let report: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(report.map_full, Some(1.0));
    assert_eq!(report.map_rare, Some(1.0));
}

#[test]
fn pipeline_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str| -> Vec<String> {
        let root = dir.path().join(tag);
        let data = root.join("data");
        let f = |n: &str| data.join(n).to_str().unwrap().to_string();
        ok(&["synth", "--seed", "7", "--n-classes", "8", "--n-rare", "3", "--out", p(&data)]);
        let ckpt = root.join("ckpt.json");
        ok(&[
            "train", "--classes", &f("classes.csv"), "--train", &f("train.jsonl"), "--rules", &f("planted_rules.json"),
            "--iterations", "200", "--seed", "3", "--out", p(&ckpt),
        ]);
        let dets = root.join("dets.jsonl");
        ok(&[
            "score", "--checkpoint", p(&ckpt), "--instances", &f("test.jsonl"), "--rules", &f("planted_rules.json"),
            "--classes", &f("classes.csv"), "--out", p(&dets),
        ]);
        let report = ok(&["eval", "--classes", &f("classes.csv"), "--detections", p(&dets), "--gt", &f("test_gt.jsonl")]);
        let mut files: Vec<String> = ["classes.csv", "train.jsonl", "test.jsonl", "test_gt.jsonl", "planted_rules.json"]
            .iter()
            .map(|n| std::fs::read_to_string(data.join(n)).unwrap())
            .collect();
        files.push(std::fs::read_to_string(&ckpt).unwrap());
        files.push(std::fs::read_to_string(&dets).unwrap());
        files.push(report);
        files
    };
    assert_eq!(run("first"), run("second"));
}

#[test]
fn train_config_file_with_flag_override() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--n-classes", "4", "--n-rare", "1", "--out", p(&data)]);
    let cfg = write(&dir, "cfg.json", r#"{"iterations": 5, "seed": 9, "learning_rate": 0.01}"#);
    let classes = data.join("classes.csv");
    let train = data.join("train.jsonl");
    let stdout = ok(&["train", "--classes", p(&classes), "--train", p(&train), "--config", p(&cfg), "--iterations", "3"]);
    let ckpt: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(ckpt["iterations"], 3);
    assert_eq!(ckpt["seed"], 9);

    let bad = write(&dir, "bad.json", r#"{"iterations": 5, "momentum": 0.9}"#);
    let err = error_line(&rbpasta(&["train", "--classes", p(&classes), "--train", p(&train), "--config", p(&bad)]));
    assert_eq!(err["error"], "parse");
}

#[test]
fn diff_of_a_report_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let classes = write(&dir, "classes.csv", FEED_CAT_CLASSES);
    let gt = write(&dir, "gt.jsonl", r#"{"image_id":"a","class_id":7,"human_box":[0,0,4,10],"object_box":[5,0,9,10]}"#);
    let dets = write(
        &dir,
        "d.jsonl",
        r#"{"image_id":"a","class_id":7,"score":0.4,"human_box":[0,0,4,10],"object_box":[5,0,9,10]}"#,
    );
    let report = dir.path().join("r.json");
    ok(&["eval", "--classes", p(&classes), "--detections", p(&dets), "--gt", p(&gt), "--out", p(&report)]);
    let diff: Value = serde_json::from_str(&ok(&["diff", "--a", p(&report), "--b", p(&report)])).unwrap();
    assert_eq!(diff["per_class_delta"]["7"], 0.0);
    assert_eq!(diff["map_full_delta"], 0.0);
}
