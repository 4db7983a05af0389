use std::path::Path;
use std::process::{Command, Output};

fn surfseg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surfseg"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = surfseg(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--x", "48", "--y", "2", "--n", "16", "--conv-channels", "2,4,4", "--fc-hidden", "16"];

fn with<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn full_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with(&["generate", "--out", "v.vol", "--surfaces-out", "s.surf", "--seed", "4"]));
    ok(d, &with(&["preprocess", "--volume", "v.vol", "--out", "p.vol"]));
    let extract = ok(d, &with(&["extract", "--volume", "p.vol", "--surfaces", "s.surf", "--out", "d.lcp"]));
    assert!(extract.contains("records = "));
    let train = ok(d, &with(&["train", "--dataset", "d.lcp", "--out", "m.lcm", "--epochs", "2"]));
    assert!(train.contains("epoch 1 "));
    ok(d, &with(&["infer", "--model", "m.lcm", "--volume", "p.vol", "--out", "cnn.surf", "--report", "r.txt"]));
    let report = std::fs::read_to_string(d.join("r.txt")).unwrap();
    assert!(report.contains("patches_per_slice = "));
    ok(d, &with(&["baseline", "--volume", "p.vol", "--out", "dp.surf", "--report", "b.txt"]));
    assert!(std::fs::read_to_string(d.join("b.txt")).unwrap().contains("constraint_violations = 0"));
    let eval = ok(
        d,
        &with(&[
            "eval", "--pred", "cnn.surf", "--pred", "cnn.surf", "--ref", "s.surf", "--ref", "s.surf", "--pred-b",
            "dp.surf", "--pred-b", "dp.surf", "--seams", "--out", "e.txt",
        ]),
    );
    assert!(eval.contains("paired test"));
    let kv = std::fs::read_to_string(d.join("e.txt")).unwrap();
    assert!(kv.contains("a.seam.max = ") && kv.contains("a.paired.p = "));
    ok(d, &with(&["plot", "--volume", "p.vol", "--surfaces", "s.surf", "--surfaces", "cnn.surf", "--out", "o.ppm"]));
    let img = std::fs::read(d.join("o.ppm")).unwrap();
    let header = b"P6\n48 64\n255\n";
    assert!(img.starts_with(header));
    assert_eq!(img.len(), header.len() + 3 * 48 * 64);
}

#[test]
fn eval_of_reference_against_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with(&["generate", "--out", "v.vol", "--surfaces-out", "s.surf"]));
    let out = ok(d, &["eval", "--pred", "s.surf", "--ref", "s.surf", "--out", "e.txt"]);
    assert!(out.contains("overall UMSPE      0.000"));
    assert!(std::fs::read_to_string(d.join("e.txt")).unwrap().contains("a.umspe = 0\n"));
}

#[test]
fn outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for tag in ["a", "b"] {
        let (v, s, p, ds, m) = (
            format!("{tag}.vol"),
            format!("{tag}.surf"),
            format!("{tag}p.vol"),
            format!("{tag}.lcp"),
            format!("{tag}.lcm"),
        );
        ok(d, &with(&["generate", "--out", &v, "--surfaces-out", &s, "--seed", "9"]));
        ok(d, &with(&["preprocess", "--volume", &v, "--out", &p]));
        ok(d, &with(&["extract", "--volume", &p, "--surfaces", &s, "--out", &ds, "--seed", "9"]));
        ok(d, &with(&["train", "--dataset", &ds, "--out", &m, "--epochs", "1", "--seed", "9"]));
    }
    for (a, b) in [("a.vol", "b.vol"), ("a.surf", "b.surf"), ("a.lcp", "b.lcp"), ("a.lcm", "b.lcm")] {
        assert_eq!(std::fs::read(d.join(a)).unwrap(), std::fs::read(d.join(b)).unwrap(), "{a}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.cfg"), "# small volume\nx = 40\ny = 1\n").unwrap();
    ok(d, &["generate", "--config", "run.cfg", "--x", "24", "--out", "v.vol", "--surfaces-out", "s.surf"]);
    let bytes = std::fs::read(d.join("v.vol")).unwrap();
    // header: magic, version, then X
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 24);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| surfseg(d, args).status.code().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["generate", "--out", "v.vol"]), 1);
    std::fs::write(d.join("bad.cfg"), "no_such_key = 3\n").unwrap();
    assert_eq!(code(&["generate", "--config", "bad.cfg", "--out", "v.vol", "--surfaces-out", "s"]), 1);
    assert_eq!(code(&["preprocess", "--volume", "missing.vol", "--out", "p.vol"]), 2);
    std::fs::write(d.join("junk.vol"), b"not a volume").unwrap();
    assert_eq!(code(&["preprocess", "--volume", "junk.vol", "--out", "p.vol"]), 3);
    ok(d, &["generate", "--out", "v.vol", "--surfaces-out", "s.surf"]);
    assert_eq!(
        code(&["baseline", "--volume", "v.vol", "--out", "b.surf", "--sep-min", "70", "--sep-max", "80"]),
        4
    );
    assert_eq!(code(&["--help"]), 0);
}
