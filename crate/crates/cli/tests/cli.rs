use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gramlearn::{checkpoint, data, render};
use tempfile::TempDir;

const SMALL: &[&str] = &["--set", "n_emb=8", "--set", "epochs=2", "--set", "round_size=8"];

fn gramlearn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gramlearn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gramlearn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sample.pdf")
}

/// A small generated corpus and a checkpoint trained on it for one epoch.
fn trained(dir: &TempDir) -> (PathBuf, PathBuf) {
    let corpus = dir.path().join("sj.jsonl");
    let ckpt = dir.path().join("run.ckpt");
    ok(&["gen", "--dataset", "simple-json", "--count", "40", "--seed", "3", "--out", p(&corpus)]);
    let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&ckpt), "--max-epochs", "1"];
    args.extend_from_slice(SMALL);
    ok(&args);
    (corpus, ckpt)
}

#[test]
fn gen_splits_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b, one) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("one"));
    ok(&["gen", "--dataset", "simple-json", "--count", "128", "--seed", "9", "--out", p(&a)]);
    ok(&["gen", "--dataset", "simple-json", "--count", "128", "--seed", "9", "--out", p(&b)]);
    ok(&["gen", "--dataset", "simple-json-stream", "--count", "1", "--out", p(&one)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = data::load_corpus(&a).unwrap();
    assert_eq!((c.train().len(), c.eval.len()), (120, 8));
    let c = data::load_corpus(&one).unwrap();
    assert_eq!((c.train().len(), c.eval.len()), (1, 0));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    let out = gramlearn(&["gen", "--dataset", "yaml", "--count", "3", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gramlearn(&["extract", "/no/such/file.pdf", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_writes_metrics_and_resume_matches() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("sj.jsonl");
    ok(&["gen", "--dataset", "simple-json", "--count", "40", "--out", p(&corpus)]);
    let run = |name: &str, extra: &[&str]| {
        let ckpt = dir.path().join(format!("{name}.ckpt"));
        let csv = dir.path().join(format!("{name}.csv"));
        let mut args = vec!["train", "--corpus", p(&corpus), "--out", p(&ckpt), "--metrics", p(&csv)];
        args.extend_from_slice(extra);
        ok(&args);
        (ckpt, csv)
    };
    let mut straight_args = SMALL.to_vec();
    straight_args.push("--set");
    straight_args.push("seed=4");
    let (straight, straight_csv) = run("straight", &straight_args);
    let mut first_args = straight_args.clone();
    first_args.extend_from_slice(&["--max-epochs", "1"]);
    let (half, half_csv) = run("half", &first_args);

    let text = fs::read_to_string(&half_csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,critic_loss,policy_loss,mean_reward,atom_types,memories,train_steps");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));

    ok(&["train", "--corpus", p(&corpus), "--resume", p(&half), "--out", p(&half), "--metrics", p(&half_csv)]);
    assert_eq!(fs::read(&half).unwrap(), fs::read(&straight).unwrap());
    assert_eq!(fs::read(&half_csv).unwrap(), fs::read(&straight_csv).unwrap());

    let out = gramlearn(&["train", "--corpus", p(&corpus), "--resume", p(&half), "--out", p(&half), "--set", "n_emb=4"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn parse_outputs_replay_and_render() {
    let dir = TempDir::new().unwrap();
    let (_, ckpt) = trained(&dir);
    let out = ok(&["parse", "--checkpoint", p(&ckpt), "--sentence", "x"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "x\n");

    let sentence = "{{a}{b}}";
    let out = ok(&["parse", "--checkpoint", p(&ckpt), "--sentence", sentence, "--format", "json"]);
    let trace = render::Trace::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let trainer = checkpoint::load(&ckpt).unwrap();
    let direct = trainer.parse(sentence.as_bytes()).unwrap();
    let replayed = trace.replay(&trainer.types).unwrap();
    assert_eq!(
        render::ascii(sentence.as_bytes(), &replayed),
        render::ascii(sentence.as_bytes(), &direct.tree)
    );
    let out = ok(&["parse", "--checkpoint", p(&ckpt), "--sentence", sentence]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        render::ascii(sentence.as_bytes(), &direct.tree)
    );
}

#[test]
fn corrupt_checkpoint_names_the_section() {
    let dir = TempDir::new().unwrap();
    let (corpus, ckpt) = trained(&dir);
    let mut bytes = fs::read(&ckpt).unwrap();
    let at = bytes.windows(4).position(|w| w == b"CRIT").unwrap();
    bytes[at + 4 + 8 + 16] ^= 0x40;
    fs::write(&ckpt, bytes).unwrap();
    let out = gramlearn(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("critic"), "{err}");
}

#[test]
fn eval_reports_every_field() {
    let dir = TempDir::new().unwrap();
    let (corpus, ckpt) = trained(&dir);
    let out = ok(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--top", "3", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["recursion_rate", "mean_roots", "mean_spatial_value"] {
        assert!(v[key].is_number(), "{key}");
    }
    let sentences = v["sentences"].as_array().unwrap();
    assert_eq!(sentences.len(), data::json_eval_count(40));
    for key in ["sentence", "roots", "root_types", "actions", "recursion", "recursive_types", "mean_spatial_value"] {
        assert!(!sentences[0][key].is_null(), "{key}");
    }
    let top = v["top_atoms"].as_array().unwrap();
    assert!(!top.is_empty() && top.len() <= 3);
    assert!(top[0]["effective"].as_f64().unwrap() >= top[top.len() - 1]["effective"].as_f64().unwrap());

    let text = ok(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus)]).stdout;
    assert!(String::from_utf8(text).unwrap().contains("recursion rate"));
}

#[test]
fn pdf_fixture_end_to_end() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("pdf.jsonl");
    let ckpt = dir.path().join("pdf.ckpt");
    let svgs = dir.path().join("svg");
    ok(&["extract", p(&fixture()), "--out", p(&corpus)]);
    let c = data::load_corpus(&corpus).unwrap();
    assert_eq!((c.train().len(), c.eval.len()), (161, 8));

    // extraction from standard input agrees with the file argument
    let piped = Command::new(env!("CARGO_BIN_EXE_gramlearn"))
        .args(["extract", "--out", p(&dir.path().join("stdin.jsonl"))])
        .stdin(fs::File::open(fixture()).unwrap())
        .output()
        .unwrap();
    assert!(piped.status.success());
    assert_eq!(data::load_corpus(&dir.path().join("stdin.jsonl")).unwrap().sentences, c.sentences);

    ok(&[
        "train", "--corpus", p(&corpus), "--preset", "pdf", "--out", p(&ckpt), "--set", "n_emb=8", "--set", "epochs=1",
    ]);
    ok(&["parse", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--eval-only", "--format", "svg", "--out-dir", p(&svgs)]);
    let mut files: Vec<_> = fs::read_dir(&svgs).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files.len(), 8);
    assert_eq!(files[0], "parse_0000.svg");
    let first = fs::read_to_string(svgs.join("parse_0000.svg")).unwrap();
    assert!(first.starts_with("<svg") && first.trim_end().ends_with("</svg>"));
}
