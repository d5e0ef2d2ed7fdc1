use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/corpus")
        .join(format!("{name}.fxa"))
}

fn fluxvm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluxvm"))
        .args(args)
        .output()
        .expect("spawn fluxvm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn asm_dis_transform_run_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let fxb = dir.path().join("fib.fxb");
    let tfxb = dir.path().join("fib.t.fxb");
    let src = corpus("classicfibo");

    let o = fluxvm(&["asm", src.to_str().unwrap(), "-o", fxb.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");

    let o = fluxvm(&["dis", fxb.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("INVOKE_STATIC"));

    let o = fluxvm(&[
        "transform",
        fxb.to_str().unwrap(),
        "-o",
        tfxb.to_str().unwrap(),
        "--stats",
    ]);
    assert!(o.status.success(), "{o:?}");
    let stats = stdout(&o);
    assert!(stats.contains("sites"), "{stats}");

    let o = fluxvm(&["dis", tfxb.to_str().unwrap()]);
    let text = stdout(&o);
    assert!(
        text.contains("INVOKE_DYNAMIC") && !text.contains("INVOKE_STATIC"),
        "{text}"
    );

    let plain = fluxvm(&[
        "run",
        fxb.to_str().unwrap(),
        "--entry",
        "classicfibo",
        "--args",
        "20",
        "--print-result",
    ]);
    let rewritten = fluxvm(&[
        "run",
        tfxb.to_str().unwrap(),
        "--entry",
        "classicfibo",
        "--args",
        "20",
        "--print-result",
    ]);
    assert_eq!(stdout(&plain).trim(), "6765");
    assert_eq!(stdout(&plain), stdout(&rewritten));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.fxa");
    std::fs::write(&bad, "module Bad\nfn main:()V {\n  FROB\n}\n").unwrap();
    let out = dir.path().join("bad.fxb");
    let o = fluxvm(&["asm", bad.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let missing = dir.path().join("missing.fxb");
    assert_ne!(
        fluxvm(&["run", missing.to_str().unwrap()]).status.code(),
        Some(0)
    );
    assert_eq!(fluxvm(&["frobnicate"]).status.code(), Some(3));
    assert_eq!(fluxvm(&["corpus", "nope"]).status.code(), Some(3));
}

#[test]
fn bench_json_has_every_configuration() {
    let o = fluxvm(&[
        "bench",
        "--n",
        "10",
        "--reps",
        "3",
        "--warmups",
        "1",
        "--out",
        "json",
    ]);
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0]["label"], "baseline-direct");
    assert!(rows[0]["overhead_pct"].is_null());
    for r in &rows[1..] {
        assert!(r["overhead_pct"].is_number());
        assert_eq!(r["samples_ms"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn ctl_rewires_a_running_event_loop() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_fluxvm"))
        .args([
            "run",
            corpus("switcher").to_str().unwrap(),
            "--transform",
            "--agent",
            "127.0.0.1:0",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut err = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    err.read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("agent listening on ")
        .expect(&line)
        .to_string();

    // One press before the change links the site.
    writeln!(stdin, "click").unwrap();
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut first = String::new();
    out.read_line(&mut first).unwrap();
    assert_eq!(first.trim(), "counter 1");

    let o = fluxvm(&[
        "ctl",
        "--connect",
        &addr,
        "changeCallSiteTarget",
        "virtual",
        "Listener.counterIncrement:(LListener;)V",
        "Listener.pictureSwitch:(LListener;)V",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(
        stdout(&o),
        "{\"ok\":true,\"result\":{\"sitesChanged\":1}}\n"
    );

    let o = fluxvm(&["ctl", "--connect", &addr, "listCallSites"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("Listener.counterIncrement"));

    let o = fluxvm(&[
        "ctl",
        "--connect",
        &addr,
        "resetCallSite",
        "virtual:Nope.x:()V",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("{\"ok\":false"));

    writeln!(stdin, "click").unwrap();
    writeln!(stdin, "click").unwrap();
    drop(stdin);
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut out, &mut rest).unwrap();
    assert_eq!(rest, "picture 1\npicture 0\n");
    assert!(child.wait().unwrap().success());
}
