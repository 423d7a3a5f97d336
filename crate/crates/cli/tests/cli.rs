use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lsm_core::io::{read_flo, read_pfm, read_png_mask, write_png, write_png_mask};
use lsm_core::synthetic::{iou, mean_epe, shifted_pair, two_color_disk, two_color_split, Texture};
use tempfile::TempDir;

fn lsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsm")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    /// Writes a shifted texture pair as `t.png` and `s.png`.
    fn stereo_pair(&self, shift: f64) {
        let (t, s) = shifted_pair(160, 128, shift, 2).unwrap();
        write_png(self.path("t.png"), &t).unwrap();
        write_png(self.path("s.png"), &s).unwrap();
    }
}

fn bytes(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn flow_on_identical_images_is_all_zeros() {
    let f = Fixture::new();
    let img = Texture::new(3).render(96, 80, 0.0, 0.0).unwrap();
    write_png(f.path("a.png"), &img).unwrap();
    let out = lsm(&["flow", &f.s("a.png"), &f.s("a.png"), "--out", &f.s("f.flo")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let field = read_flo(f.path("f.flo")).unwrap();
    assert_eq!((field.width(), field.height(), field.channels()), (96, 80, 2));
    assert!(field.data().iter().all(|&v| v == 0.0));
}

#[test]
fn stereo_recovers_the_shift_and_writes_a_report() {
    let f = Fixture::new();
    f.stereo_pair(3.0);
    let out = lsm(&[
        "stereo",
        &f.s("t.png"),
        &f.s("s.png"),
        "--out",
        &f.s("d.pfm"),
        "--json-report",
        &f.s("r.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let disp = read_pfm(f.path("d.pfm")).unwrap();
    // 8-bit PNG quantization costs some accuracy against the float fixture
    assert!(mean_epe(&disp, (3.0, 0.0), 16).unwrap() < 0.3);

    let report: serde_json::Value = serde_json::from_slice(&bytes(f.path("r.json"))).unwrap();
    assert_eq!(report["task"], "stereo");
    assert!(report["wall_ms"].as_f64().unwrap() > 0.0);
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 4);
    for level in levels {
        for it in level["iterations"].as_array().unwrap() {
            for key in ["energy_before", "energy_after", "step_norm", "damping", "coefficient_norm"] {
                assert!(it[key].is_number(), "{key}");
            }
            if it["accepted"] == true {
                assert!(it["energy_after"].as_f64() <= it["energy_before"].as_f64());
            }
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let f = Fixture::new();
    f.stereo_pair(2.0);
    for (task, ext) in [("stereo", "pfm"), ("flow", "flo")] {
        let a = f.s(&format!("a.{ext}"));
        let b = f.s(&format!("b.{ext}"));
        for out in [&a, &b] {
            let run = lsm(&[task, &f.s("t.png"), &f.s("s.png"), "--out", out]);
            assert_eq!(code(&run), 0, "{}", stderr(&run));
        }
        assert_eq!(bytes(&a), bytes(&b), "{task}");
    }
}

#[test]
fn iseg_reads_polyline_scribbles() {
    let f = Fixture::new();
    let (img, truth) = two_color_split(160, 96).unwrap();
    write_png(f.path("img.png"), &img).unwrap();
    std::fs::write(
        f.path("scribbles.json"),
        r#"{"foreground": [[[20, 48], [40, 48], [40, 60]]], "background": [[[120, 30], [140, 30]]]}"#,
    )
    .unwrap();
    let out = lsm(&["iseg", &f.s("img.png"), &f.s("scribbles.json"), "--out", &f.s("m.png")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let raw = bytes(f.path("m.png"));
    let mask = read_png_mask(f.path("m.png")).unwrap();
    assert!(iou(&mask, &truth).unwrap() >= 0.95);
    let again = lsm(&["iseg", &f.s("img.png"), &f.s("scribbles.json"), "--out", &f.s("m2.png")]);
    assert_eq!(code(&again), 0);
    assert_eq!(bytes(f.path("m2.png")), raw);

    std::fs::write(f.path("outside.json"), r#"{"foreground": [[[500, 1]]], "background": [[[1, 1]]]}"#).unwrap();
    let bad = lsm(&["iseg", &f.s("img.png"), &f.s("outside.json"), "--out", &f.s("m3.png")]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn vseg_propagates_a_static_mask() {
    let f = Fixture::new();
    let (frame, disk) = two_color_disk(128, 96, 60.0, 50.0, 25.0).unwrap();
    write_png(f.path("f.png"), &frame).unwrap();
    write_png_mask(f.path("m0.png"), &disk).unwrap();
    let out = lsm(&["vseg", &f.s("f.png"), &f.s("f.png"), &f.s("m0.png"), "--out", &f.s("m1.png")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(iou(&read_png_mask(f.path("m1.png")).unwrap(), &disk).unwrap() >= 0.9);
}

#[test]
fn verify_lists_every_suite_green() {
    let out = lsm(&["verify"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for suite in [
        "solver-oracle",
        "subspace-constraint",
        "proposition",
        "fast-vtrx",
        "gradient-labeling",
        "gradient-stereo",
        "gradient-flow",
        "cramer-contexts",
    ] {
        let line = text.lines().find(|l| l.starts_with(suite)).unwrap_or_else(|| panic!("{suite} missing"));
        assert!(line.ends_with("pass"), "{line}");
    }
    assert!(text.contains("all 8 suites passed"));
}

#[test]
fn generated_weights_drive_the_solver() {
    let f = Fixture::new();
    f.stereo_pair(1.0);
    let w = lsm(&["weights", "--out", &f.s("w.lsmw"), "--init", "random", "--seed", "5"]);
    assert_eq!(code(&w), 0, "{}", stderr(&w));
    let basis = format!("generated:{}", f.s("w.lsmw"));
    let out = lsm(&["stereo", &f.s("t.png"), &f.s("s.png"), "--basis", &basis, "--out", &f.s("d.pfm")]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(read_pfm(f.path("d.pfm")).unwrap().data().iter().all(|v| v.is_finite()));
}

#[test]
fn corrupt_weights_exit_one_with_diagnostic() {
    let f = Fixture::new();
    f.stereo_pair(1.0);
    assert_eq!(code(&lsm(&["weights", "--out", &f.s("w.lsmw")])), 0);
    let mut raw = bytes(f.path("w.lsmw"));
    let mid = raw.len() / 2;
    raw[mid] ^= 0x10;
    std::fs::write(f.path("bad.lsmw"), raw).unwrap();
    let basis = format!("generated:{}", f.s("bad.lsmw"));
    let out = lsm(&["stereo", &f.s("t.png"), &f.s("s.png"), "--basis", &basis, "--out", &f.s("d.pfm")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("invalid weights"), "{}", stderr(&out));
    assert!(!f.path("d.pfm").exists());

    // weights built for another K schedule are rejected the same way
    assert_eq!(code(&lsm(&["weights", "--out", &f.s("k.lsmw"), "--k-schedule", "1,2,3,4"])), 0);
    let basis = format!("generated:{}", f.s("k.lsmw"));
    let out = lsm(&["stereo", &f.s("t.png"), &f.s("s.png"), "--basis", &basis, "--out", &f.s("d.pfm")]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("invalid weights"));
}

#[test]
fn usage_errors_exit_two() {
    let f = Fixture::new();
    f.stereo_pair(1.0);
    let (t, s, o) = (f.s("t.png"), f.s("s.png"), f.s("o.flo"));
    let cases: Vec<Vec<&str>> = vec![
        vec!["flow", &t, &s, "--out", &o, "--bogus"],
        vec!["flow", &t, "--out", &o],
        vec!["flow", &t, "/no/such/file.png", "--out", &o],
        vec!["flow", &t, &s],
        vec!["flow", &t, &s, "--out", &o, "--basis", "learned"],
        vec!["flow", &t, &s, "--out", &o, "--k-schedule", "2,4"],
        vec!["flow", &t, &s, "--out", &o, "--levels", "7"],
        vec!["flow", &t, &s, "--out", &o, "--damping", "huge"],
        vec!["weights", "--out", &o, "--channels", "32,32"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = lsm(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn solver_flags_are_honoured() {
    let f = Fixture::new();
    f.stereo_pair(1.5);
    let out = lsm(&[
        "flow",
        &f.s("t.png"),
        &f.s("s.png"),
        "--levels",
        "2",
        "--k-schedule",
        "6,12",
        "--iters",
        "1",
        "--damping",
        "abs:0.01",
        "--basis",
        "patches",
        "--out",
        &f.s("f.flo"),
        "--json-report",
        &f.s("r.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&bytes(f.path("r.json"))).unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 2);
    assert_eq!(levels[0]["k"], 6);
    assert_eq!(levels[1]["k"], 12);
    for level in levels {
        let iters = level["iterations"].as_array().unwrap();
        assert_eq!(iters.len(), 1);
        assert!(iters[0]["damping"].as_f64().unwrap() >= 0.01);
    }
}

#[test]
fn bench_reports_every_task() {
    let out = lsm(&["bench"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    for task in ["stereo", "flow", "iseg", "vseg"] {
        assert!(text.lines().any(|l| l.starts_with(task)), "{task}");
    }
}
