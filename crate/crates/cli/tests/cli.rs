//! The `draftlab` binary: configuration echo, error reporting, parameter
//! counts and a short run through decode, score and report.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn draftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_draftlab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Exit code and the single stderr line, which must carry `error[class]`.
fn failure(o: &Output, class: &str) -> (i32, String) {
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{class}]: ")), "{err}");
    (o.status.code().unwrap(), err)
}

const TINY: &str = "[experiment]
regime = draft_self
d_ada = 8
[pretrain]
steps = 6
[adapt]
steps = 4
[finetune]
steps = 4
[source]
train = 10
[target]
train = 4
dev = 3
test = 5
";

#[test]
fn validate_echo_is_a_fixpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v1");
    let c = config(dir.path(), "a.ini", "[experiment]\nregime = draft_self\nd_ada = 16\n");
    let o = draftlab(&["validate", "--config", c.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = std::fs::read_to_string(out.join("config.normalized.ini")).unwrap();
    assert!(echo.contains("d_ada = 16") && echo.contains("steps = 600"), "{echo}");
    let again = config(dir.path(), "b.ini", &echo);
    let o = draftlab(&["validate", "--config", again.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("config.normalized.ini")).unwrap(), echo);
}

#[test]
fn config_errors_are_one_line_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, text: &str| {
        let c = config(dir.path(), name, text);
        draftlab(&["validate", "--config", c.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
    };
    let (code, msg) = failure(&run("s.ini", "[experiment]\nregime baseline\n"), "syntax");
    assert_eq!(code, 3);
    assert!(msg.contains("line 2"), "{msg}");

    let (code, msg) = failure(&run("k.ini", "[experiment]\nregime = baseline\nd_adaa = 3\n"), "unknown-key");
    assert_eq!(code, 3);
    assert!(msg.contains("line 3") && msg.contains("did you mean `experiment.d_ada`"), "{msg}");

    let (code, _) = failure(&run("v.ini", "[experiment]\nregime = baseline\nseed = minus\n"), "value");
    assert_eq!(code, 3);

    let (code, msg) = failure(&run("r.ini", "[experiment]\nregime = baseline\n[pretrain]\nsteps = 3\n"), "rule");
    assert_eq!(code, 3);
    assert!(msg.contains("pretrain"), "{msg}");

    let (code, _) = failure(&run("d.ini", "[experiment]\nregime = draft_self\n"), "rule");
    assert_eq!(code, 3);

    let manifest = "[experiment]\nregime = baseline\n[target]\nkind = manifest\ntrain = nope/train.tsv\ntest = nope/test.tsv\n";
    let (code, msg) = failure(&run("p.ini", manifest), "path");
    assert_eq!(code, 4);
    assert!(msg.contains("nope"), "{msg}");

    let (code, _) = failure(&draftlab(&["run", "--config", "/nonexistent/x.ini"]), "io");
    assert_eq!(code, 4);
    let (code, _) = failure(&draftlab(&["run"]), "usage");
    assert_eq!(code, 2);
    let (code, _) = failure(&draftlab(&["frobnicate"]), "usage");
    assert_eq!(code, 2);
}

#[test]
fn count_params_paper_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = draftlab(&["count-params", "--preset", "paper", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for n in ["872768", "1725568", "27309568", "27.3M", "SAFT reference"] {
        assert!(text.contains(n), "{n} missing from\n{text}");
    }
    let tsv = std::fs::read_to_string(dir.path().join("params.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 7);
    let (code, _) = failure(&draftlab(&["count-params", "--preset", "huge"]), "config");
    assert_eq!(code, 3);
    let (code, _) = failure(&draftlab(&["count-params", "--d-ada", "0"]), "usage");
    assert_eq!(code, 2);
}

#[test]
fn short_run_decode_score_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "tiny.ini", TINY);
    let a = dir.path().join("a");
    let o = draftlab(&["run", "--config", c.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = std::fs::read_to_string(a.join("summary.tsv")).unwrap();
    assert!(stdout(&o).ends_with(&row));
    assert!(row.starts_with("draft_self\tapc\ttarget\t8\t"), "{row}");
    for f in ["pretrain.ckpt", "adapt.ckpt", "finetune.ckpt", "decode_dev.tsv", "decode_test.tsv", "score_test.txt"] {
        assert!(a.join(f).exists(), "{f}");
    }

    let o = draftlab(&["decode", "--config", c.to_str().unwrap(), "--out", a.to_str().unwrap(), "--split", "dev"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dev: f64 = row.split('\t').nth(4).unwrap().parse().unwrap();
    assert!(stdout(&o).contains(&format!("{dev:.6}")), "{}", stdout(&o));

    let o = draftlab(&["score", "--input", a.join("decode_test.tsv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let test: f64 = row.split('\t').nth(5).unwrap().parse().unwrap();
    assert!(stdout(&o).contains(&format!("{test:.6}")), "{}", stdout(&o));

    // the same cell from another seed is a conflict
    let b = dir.path().join("b");
    let o = draftlab(&["run", "--config", c.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = draftlab(&["report", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("apc")).count(), 1);
    let (code, msg) = failure(&draftlab(&["report", a.to_str().unwrap(), b.to_str().unwrap()]), "report");
    assert_eq!(code, 9);
    assert!(msg.contains("conflicting"), "{msg}");

    let (code, _) =
        failure(&draftlab(&["decode", "--config", c.to_str().unwrap(), "--out", a.to_str().unwrap(), "--split", "train"]), "usage");
    assert_eq!(code, 2);
    std::fs::write(a.join("broken.tsv"), "only one column\n").unwrap();
    let (code, _) = failure(&draftlab(&["score", "--input", a.join("broken.tsv").to_str().unwrap()]), "format");
    assert_eq!(code, 5);
}

#[test]
fn every_bundled_config_validates() {
    let dir = tempfile::tempdir().unwrap();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(configs).unwrap() {
        let p = e.unwrap().path();
        let o = draftlab(&["validate", "--config", p.to_str().unwrap(), "--out", dir.path().join(format!("c{n}")).to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
        n += 1;
    }
    assert_eq!(n, 7);
}
