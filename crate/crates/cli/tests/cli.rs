use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrlogic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `key=value` fields of the first line starting with `prefix`.
fn record(text: &str, prefix: &str) -> HashMap<String, String> {
    let line = text
        .lines()
        .find(|l| l.starts_with(prefix))
        .unwrap_or_else(|| panic!("no line starting with `{prefix}` in:\n{text}"));
    line.split_whitespace()
        .filter_map(|f| f.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn synth(dir: &TempDir, name: &str, n: usize, noise: f64) -> PathBuf {
    let out = dir.path().join(name);
    let o = run(&[
        "synth",
        "--preset",
        "fh-mini",
        "--n",
        &n.to_string(),
        "--label-noise",
        &noise.to_string(),
        "--seed",
        "11",
        "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn audit_of_clean_synthetic_labels_is_consistent() {
    let dir = TempDir::new().unwrap();
    let labels = synth(&dir, "s.csv", 300, 0.0);
    let o = run(&[
        "audit",
        "--preset",
        "fh-mini",
        "--labels",
        path_str(&labels),
        "--format",
        "records",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let s = record(&stdout(&o), "summary");
    assert_eq!(s["n_total"], "300");
    assert_eq!(s["n_failed"], "0");
    assert_eq!(s["ratio"], "0.000000");
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("row_id=")).count(), 300);
}

#[test]
fn rules_flag_accepts_file_and_preset_name() {
    let dir = TempDir::new().unwrap();
    let labels = synth(&dir, "s.csv", 50, 0.2);
    let by_name = run(&["audit", "--rules", "fh-mini", "--labels", path_str(&labels)]);
    assert_eq!(by_name.status.code(), Some(0));
    let rule_file = dir.path().join("fh.rules");
    std::fs::write(
        &rule_file,
        "attributes clean_shaven, chin_area, side_to_side, ba_invisible, len_short, len_medium, len_long, bl_invisible\n\
         group BeardArea { clean_shaven, chin_area, side_to_side, ba_invisible } exclusive exhaustive\n\
         group BeardLength { len_short, len_medium, len_long, bl_invisible } exclusive exhaustive\n\
         implies clean_shaven -> !len_short & !len_medium & !len_long\n",
    )
    .unwrap();
    let by_file = run(&["audit", "--rules", path_str(&rule_file), "--labels", path_str(&labels)]);
    assert_eq!(
        by_file.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&by_file.stderr)
    );
    assert_eq!(stdout(&by_name), stdout(&by_file));
}

#[test]
fn poison_is_deterministic_and_echoes_seed() {
    let dir = TempDir::new().unwrap();
    let labels = synth(&dir, "s.csv", 400, 0.0);
    let mut outputs = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(format!("{tag}.csv"));
        let o = run(&[
            "poison",
            "--preset",
            "fh-mini",
            "--labels",
            path_str(&labels),
            "--seed",
            "42",
            "--out",
            path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
        assert_eq!(stdout(&o).lines().next(), Some("seed=42"));
        let side = dir.path().join(format!("{tag}.logic.csv"));
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(&side).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    // Every row flagged y_logic=0 is reported as failing by the auditor.
    let poisoned = dir.path().join("a.csv");
    let audit = run(&[
        "audit",
        "--preset",
        "fh-mini",
        "--labels",
        path_str(&poisoned),
        "--format",
        "records",
    ]);
    let text = stdout(&audit);
    let side = String::from_utf8(outputs[0].1.clone()).unwrap();
    for (line, rec) in side
        .lines()
        .skip(1)
        .zip(text.lines().filter(|l| l.starts_with("row_id=")))
    {
        let y_logic = line.split(',').nth(1).unwrap();
        let consistent = rec.contains("verdict=consistent");
        assert_eq!(y_logic == "1", consistent, "{line} vs {rec}");
    }

    let other = run(&[
        "poison",
        "--preset",
        "fh-mini",
        "--labels",
        path_str(&labels),
        "--seed",
        "43",
    ]);
    assert_eq!(stdout(&other).lines().next(), Some("seed=43"));
}

#[test]
fn enforce_logic_never_exceeds_ignore_logic() {
    let dir = TempDir::new().unwrap();
    let gt = synth(&dir, "gt.csv", 300, 0.0);
    let poisoned = dir.path().join("p.csv");
    let o = run(&[
        "poison",
        "--preset",
        "fh-mini",
        "--labels",
        path_str(&gt),
        "--seed",
        "3",
        "--out",
        path_str(&poisoned),
    ]);
    assert!(o.status.success());
    for extra in [&[][..], &["--violated-only"][..]] {
        let mut args = vec![
            "metrics",
            "--preset",
            "fh-mini",
            "--gt",
            path_str(&gt),
            "--preds",
            path_str(&poisoned),
            "--format",
            "records",
        ];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        let ig = record(&text, "mode=ignore_logic");
        let en = record(&text, "mode=enforce_logic");
        for key in ["acc_traditional", "acc_avg"] {
            let a: f64 = ig[key].parse().unwrap();
            let b: f64 = en[key].parse().unwrap();
            assert!(b <= a, "{key}: enforce {b} > ignore {a}");
        }
    }
}

#[test]
fn compensation_removes_incomplete_rows() {
    let dir = TempDir::new().unwrap();
    let preds = dir.path().join("conf.csv");
    std::fs::write(
        &preds,
        "id,clean_shaven,chin_area,side_to_side,ba_invisible,len_short,len_medium,len_long,bl_invisible\n\
         0,0.1,0.4,0.2,0.3,0.2,0.1,0.05,0.3\n\
         1,0.9,0.1,0.1,0.1,0.1,0.1,0.1,0.8\n\
         2,0.2,0.2,0.2,0.2,0.6,0.1,0.1,0.1\n",
    )
    .unwrap();
    let out = dir.path().join("fixed.csv");
    let o = run(&[
        "compensate",
        "--preset",
        "fh-mini",
        "--preds",
        path_str(&preds),
        "--out",
        path_str(&out),
        "--format",
        "records",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(record(&text, "compensation")["n_rows_modified"], "2");
    assert_eq!(record(&text, "summary")["n_incomplete"], "0");

    let again = run(&[
        "compensate",
        "--preset",
        "fh-mini",
        "--preds",
        path_str(&out),
        "--format",
        "records",
    ]);
    assert_eq!(record(&stdout(&again), "compensation")["n_rows_modified"], "0");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let labels = synth(&dir, "s.csv", 20, 0.0);
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        run(&["audit", "--preset", "fh-mini", "--labels", path_str(&missing)])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["audit", "--preset", "nope", "--labels", path_str(&labels)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["audit", "--labels", path_str(&labels)]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,a\n0,1\n").unwrap();
    assert_eq!(
        run(&["audit", "--preset", "fh-mini", "--labels", path_str(&bad)])
            .status
            .code(),
        Some(1)
    );
    let header = "id,clean_shaven,chin_area,side_to_side,ba_invisible,len_short,len_medium,len_long,bl_invisible\n";
    std::fs::write(&bad, format!("{header}0,1,0,0,0,0,0,0,2\n")).unwrap();
    assert_eq!(
        run(&["audit", "--preset", "fh-mini", "--labels", path_str(&bad)])
            .status
            .code(),
        Some(1)
    );
    std::fs::write(&bad, format!("{header}0,1,0,0\n")).unwrap();
    assert_eq!(
        run(&["audit", "--preset", "fh-mini", "--labels", path_str(&bad)])
            .status
            .code(),
        Some(1)
    );

    let unwritable = dir.path().join("no_such_dir").join("out.csv");
    let o = run(&[
        "poison",
        "--preset",
        "fh-mini",
        "--labels",
        path_str(&labels),
        "--out",
        path_str(&unwritable),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let labels = synth(&dir, "train.csv", 200, 0.1);
    let go = |tag: &str| {
        let preds = dir.path().join(format!("{tag}.preds.csv"));
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let o = run(&[
            "train",
            "--preset",
            "fh-mini",
            "--labels",
            path_str(&labels),
            "--epochs",
            "2",
            "--seed",
            "5",
            "--set",
            "disc_kind=mlp",
            "--preds",
            path_str(&preds),
            "--out",
            path_str(&ckpt),
            "--format",
            "records",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (
            stdout(&o),
            std::fs::read(&preds).unwrap(),
            std::fs::read(&ckpt).unwrap(),
        )
    };
    let a = go("a");
    let b = go("b");
    assert_eq!(a, b);
    assert!(a.0.starts_with("seed=5\n"));
    assert_eq!(a.0.lines().filter(|l| l.starts_with("epoch=")).count(), 2);
}

#[test]
fn gradcheck_passes() {
    let o = run(&["gradcheck", "--format", "records"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text
        .lines()
        .filter(|l| l.starts_with("probe="))
        .all(|l| l.ends_with("passed=true")));
}
