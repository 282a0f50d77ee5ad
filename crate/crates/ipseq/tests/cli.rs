mod common;

use std::process::Command;

use ipseq::checkpoint::Checkpoint;

fn ipseq() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ipseq"))
}

#[test]
fn train_prints_loss_curve_and_writes_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("train");
    common::corpus(&common::PAIRS).save_split(&stem).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let out = ipseq()
        .args(["train", "--train"])
        .arg(&stem)
        .arg("--out")
        .arg(&ckpt)
        .args(["--epochs", "2", "--batch-size", "4", "--tgt-tokenization", "char", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines.len(), 2 * 2);
    for line in &lines {
        let cells: Vec<_> = line.split('\t').collect();
        assert_eq!(cells.len(), 3, "{line}");
        cells[0].parse::<usize>().unwrap();
        cells[1].parse::<usize>().unwrap();
        assert!(cells[2].parse::<f64>().unwrap() > 0.0);
    }
    let loaded = Checkpoint::load(&ckpt).unwrap();
    assert!(loaded.optimizer.is_some());

    let again = ipseq()
        .args(["train", "--train"])
        .arg(&stem)
        .arg("--out")
        .arg(dir.path().join("m2.ckpt"))
        .args(["--epochs", "2", "--batch-size", "4", "--tgt-tokenization", "char", "--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(again.stdout).unwrap(), stdout);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(dir.path().join("m2.ckpt")).unwrap());
}

#[test]
fn simulate_prints_summary_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let task = common::text_task(dir.path(), "toy", &common::PAIRS, 4, 0.0);
    let report = dir.path().join("r.tsv");
    let out = ipseq()
        .arg("simulate")
        .arg("--tasks-dir")
        .arg(dir.path())
        .args(["--task", "toy", "--split"])
        .arg(task.join("samples"))
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("converged: 6/6"), "{stdout}");
    assert!(stdout.contains("first-half ksmr") && stdout.contains("second-half ksmr"), "{stdout}");
    assert_eq!(std::fs::read_to_string(report).unwrap().lines().count(), 7);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = ipseq()
        .arg("simulate")
        .arg("--tasks-dir")
        .arg(dir.path())
        .args(["--task", "none", "--split", "x", "--in-process"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown task"));

    let out = ipseq().args(["train", "--train", "/nonexistent/x", "--out", "y"]).output().unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
