use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn crosslink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crosslink")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = "height = 32\nwidth = 32\nn_train = 4\nn_val = 1\nn_test = 2\narea_range = 0.02, 0.08\n";
const CONFIG: &str = "base_width = 2\nepochs = 2\nbatch_size = 2\nprecision = f64\n";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("spec.kv"), SPEC).unwrap();
        fs::write(dir.path().join("train.kv"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn gen(&self, out: &str, seed: &str) -> Output {
        crosslink(&["gen-data", "--spec", s(&self.path("spec.kv")), "--out", s(&self.path(out)), "--seed", seed])
    }
}

/// Every file below `root` with its contents, keyed by relative path.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_is_deterministic() {
    let ws = Workspace::new();
    assert_eq!(ws.gen("a", "11").status.code(), Some(0));
    assert_eq!(ws.gen("b", "11").status.code(), Some(0));
    assert_eq!(ws.gen("c", "12").status.code(), Some(0));
    let (a, b, c) = (tree(&ws.path("a")), tree(&ws.path("b")), tree(&ws.path("c")));
    assert_eq!(a, b);
    assert_ne!(a, c);

    // refuses to overwrite without --force
    let again = ws.gen("a", "11");
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));
}

#[test]
fn dry_run_writes_nothing() {
    let ws = Workspace::new();
    let out = ws.path("never");
    let o = crosslink(&["gen-data", "--spec", s(&ws.path("spec.kv")), "--out", s(&out), "--seed", "1", "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("height = 32"));
    assert!(!out.exists());

    assert_eq!(ws.gen("data", "1").status.code(), Some(0));
    let run = ws.path("run");
    let o = crosslink(&[
        "train", "--config", s(&ws.path("train.kv")), "--data", s(&ws.path("data")), "--out", s(&run), "--dry-run", "--seed", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!run.exists());
}

#[test]
fn generated_seed_is_reported() {
    let ws = Workspace::new();
    let o = crosslink(&["gen-data", "--spec", s(&ws.path("spec.kv")), "--out", s(&ws.path("d")), "--dry-run"]);
    assert_eq!(o.status.code(), Some(0));
    let err = stderr(&o);
    let seed = err.split("generated seed ").nth(1).expect("seed message").trim();
    assert!(stdout(&o).contains(&format!("seed = {seed}")));
}

#[test]
fn validation_failures_exit_1() {
    let ws = Workspace::new();
    fs::write(ws.path("bad.kv"), "height = 32\nwidth = 32\narea_range = 0.001, 0.01\n").unwrap();
    let o = crosslink(&["gen-data", "--spec", s(&ws.path("bad.kv")), "--out", s(&ws.path("x")), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("infeasible area fraction"), "{}", stderr(&o));

    let o = crosslink(&["eval", "--checkpoint", s(&ws.path("missing.ckpt")), "--data", s(&ws.path("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not exist"));

    assert_eq!(crosslink(&["params", "--base-width", "3"]).status.code(), Some(1));
    assert_eq!(crosslink(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(crosslink(&["gradcheck", "--scope", "everything", "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn train_eval_predict_report() {
    let ws = Workspace::new();
    assert_eq!(ws.gen("data", "3").status.code(), Some(0));
    let (data, run) = (ws.path("data"), ws.path("run"));
    let o = crosslink(&["train", "--config", s(&ws.path("train.kv")), "--data", s(&data), "--out", s(&run), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["best.ckpt", "last.ckpt", "runlog.jsonl", "timing.jsonl"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert!(stderr(&o).contains("epoch   1"));
    let runlog = fs::read_to_string(run.join("runlog.jsonl")).unwrap();
    assert!(!runlog.contains("seconds"), "wall time must stay out of the run log");

    let o = crosslink(&["eval", "--checkpoint", s(&run.join("best.ckpt")), "--data", s(&data), "--split", "test"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("id,dsc,sen,spe,or,ur,hd"));
    assert!(table.lines().filter(|l| l.starts_with("000")).count() == 2, "{table}");

    let image = fs::read_dir(data.join("images")).unwrap().next().unwrap().unwrap().path();
    let mask_out = ws.path("pred.pgm");
    let o = crosslink(&["predict", "--checkpoint", s(&run.join("best.ckpt")), "--image", s(&image), "--out", s(&mask_out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(crosslink::data::pgm::read_mask(&mask_out).is_ok());

    let o = crosslink(&["report", "--runlog", s(&run.join("runlog.jsonl"))]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("epochs run: 2"));
    assert!(text.contains("bin_lo_pct"));

    // resume to a later epoch from last.ckpt
    fs::write(ws.path("more.kv"), CONFIG.replace("epochs = 2", "epochs = 3")).unwrap();
    let o = crosslink(&[
        "train", "--config", s(&ws.path("more.kv")), "--data", s(&data), "--out", s(&run), "--seed", "4",
        "--resume", s(&run.join("last.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("epoch   2") && !stderr(&o).contains("epoch   0"));
}

#[test]
fn empty_runlog_reports_no_records() {
    let ws = Workspace::new();
    fs::write(ws.path("empty.jsonl"), "").unwrap();
    let o = crosslink(&["report", "--runlog", s(&ws.path("empty.jsonl"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "no records");
}

#[test]
fn gradcheck_fault_exits_3_and_names_the_op() {
    let o = crosslink(&["gradcheck", "--scope", "op", "--fault", "sigmoid", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stderr(&o).contains("gradient check failed: sigmoid"), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("sigmoid,") && l.ends_with("FAIL")));

    let o = crosslink(&["gradcheck", "--scope", "op", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn params_table() {
    let o = crosslink(&["params", "--base-width", "32"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 6);
    let expected = crosslink::net::parameter_report(crosslink::net::NetworkVariant::Crosslink, 32).unwrap().total;
    assert!(text.contains(&format!("Crosslink,{expected},")));
}
