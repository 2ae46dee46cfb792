use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"seed = 4
[data]
num_train = 30
num_test = 16
[train]
hidden = [16, 16]
free_hidden = [16]
pretrain_epochs = 1
free_epochs = 1
[train.em]
max_iterations = 1
"#;

fn gcrn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcrn"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), TINY).unwrap();

    let out = gcrn(dir, &["gen", "--config", "tiny.toml", "--out", "data"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(dir.join("data/dataset.json")).unwrap();
    gcrn(dir, &["gen", "--config", "tiny.toml", "--out", "again"]);
    assert_eq!(first, fs::read(dir.join("again/dataset.json")).unwrap());

    let out = gcrn(dir, &["train", "--config", "tiny.toml", "--dataset", "data/dataset.json", "--out", "models"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["gcrn.json", "repg_only.json", "free.json", "em_history.json"] {
        assert!(dir.join("models").join(f).exists(), "{f}");
    }

    let out = gcrn(
        dir,
        &[
            "eval", "--config", "tiny.toml", "--dataset", "data/dataset.json", "--models", "models", "--mode",
            "pred-labels", "--method", "gcrn", "--method", "softmax", "--kl", "ctx2free", "--out", "eval",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let records = fs::read_to_string(dir.join("eval/records_pred_labels_gcrn.jsonl")).unwrap();
    let first_line: serde_json::Value = serde_json::from_str(records.lines().next().unwrap()).unwrap();
    for key in ["scene_id", "node_index", "score", "truth", "violation"] {
        assert!(first_line.get(key).is_some(), "{key}");
    }
    assert!(dir.join("eval/records_pred_labels_softmax.jsonl").exists());
    assert!(!dir.join("eval/records_oracle_labels_gcrn.jsonl").exists());

    let out = gcrn(dir, &["report", "eval/records_pred_labels_gcrn.jsonl", "--out", "rep"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("rep/roc.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("pred_labels,gcrn,"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("rep/report.json")).unwrap()).unwrap();
    assert!(report["results"][0]["auc"].as_f64().is_some());
}

#[test]
fn ingest_command() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let coco = r#"{"images":[{"id":5,"width":64,"height":48}],
        "annotations":[{"image_id":5,"bbox":[1,2,3,4],"category_id":9},{"image_id":5,"bbox":[0,0,0,4],"category_id":9}],
        "categories":[{"id":9,"name":"cup"}]}"#;
    fs::write(dir.join("coco.json"), coco).unwrap();
    let out = gcrn(dir, &["ingest", "--input", "coco.json", "--out", "x"]);
    assert_eq!(code(&out), 1);
    let out = gcrn(dir, &["ingest", "--input", "coco.json", "--lenient", "--out", "x"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ds: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("x/dataset.json")).unwrap()).unwrap();
    assert_eq!(ds["scenes"][0]["objects"][0]["bbox"], serde_json::json!([1.0, 2.0, 4.0, 6.0]));
    let remap: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("x/remap.json")).unwrap()).unwrap();
    assert_eq!(remap[0]["category_id"], 9);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "bogus = 1\n[train]\nnope = 2\n").unwrap();
    let out = gcrn(dir, &["gen", "--config", "bad.toml"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.nope"));

    assert_eq!(code(&gcrn(dir, &["gen", "--config", "missing.toml"])), 2);
    assert_eq!(code(&gcrn(dir, &["train", "--dataset", "missing.json"])), 2);
    fs::write(dir.join("broken.json"), "{\"scenes\": [").unwrap();
    assert_eq!(code(&gcrn(dir, &["train", "--dataset", "broken.json"])), 1);
    assert_eq!(code(&gcrn(dir, &["eval", "--mode", "sideways"])), 1);
    assert_eq!(code(&gcrn(dir, &["--help"])), 0);
}
