use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use vino_harness::{Container, RunConfig, ScenarioSpec};

fn vino(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vino"))
        .args(args)
        .current_dir(dir)
        .env_clear()
        .output()
        .expect("spawn vino")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&vino(
        &["canonical", "--spec", "spec.json", "--config", "cfg.json"],
        dir.path(),
    ));
    ok(&vino(
        &[
            "synth",
            "--spec",
            "spec.json",
            "--out",
            "src.vint",
            "masks.vint",
        ],
        dir.path(),
    ));
    dir
}

#[test]
fn synth_writes_video_and_mask() {
    let dir = setup();
    let src = Container::load(&dir.path().join("src.vint")).unwrap();
    let mask = Container::load(&dir.path().join("masks.vint"))
        .unwrap()
        .to_mask()
        .unwrap();
    assert_eq!(src.dims, ScenarioSpec::canonical().dims());
    assert_eq!(mask.count_ones(), 8 * 81);
    assert_eq!(src.meta["scenario"]["frames"], 8);
}

#[test]
fn edit_is_byte_deterministic_and_self_describing() {
    let dir = setup();
    let p = dir.path();
    let args = |out: &'static str| {
        vec![
            "edit",
            "--config",
            "cfg.json",
            "--source",
            "src.vint",
            "--out",
            out,
            "--dump-rough",
            "rough.vint",
            "--dump-masks",
            "masks",
            "--frames-ppm",
            "frames",
        ]
    };
    ok(&vino(&args("a.vint"), p));
    ok(&vino(&args("b.vint"), p));
    let a = std::fs::read(p.join("a.vint")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.vint")).unwrap());

    let edited = Container::from_bytes(&a).unwrap();
    let cfg: RunConfig = serde_json::from_value(edited.meta["config"].clone()).unwrap();
    assert_eq!(cfg, RunConfig::canonical());
    assert_eq!(
        edited.meta["config"]["edit"]["schedule"]["spacing"],
        "sqrt_linear"
    );
    for name in [
        "source_mask",
        "source_mask_dilated",
        "rough_mask",
        "final_mask",
    ] {
        Container::load(&p.join("masks").join(format!("{name}.vint")))
            .unwrap()
            .to_mask()
            .unwrap();
    }
    assert!(p.join("rough.vint").exists());
    let ppm = std::fs::read(p.join("frames/frame_007.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(ppm.len(), 13 + 32 * 32 * 3);
}

#[test]
fn metrics_on_identical_files_reports_inf() {
    let dir = setup();
    let out = vino(
        &["metrics", "--a", "src.vint", "--b", "src.vint", "--json"],
        dir.path(),
    );
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["psnr"], "inf");
    assert_eq!(v["changed_pixel_fraction"], 0.0);
    assert!(v["temporal"].as_f64().unwrap() > 0.9);
}

#[test]
fn metrics_of_edit_with_background_mask() {
    let dir = setup();
    let p = dir.path();
    ok(&vino(
        &[
            "edit",
            "--config",
            "cfg.json",
            "--source",
            "src.vint",
            "--out",
            "e.vint",
            "--dump-masks",
            "m",
        ],
        p,
    ));
    let out = vino(
        &["metrics", "--a", "e.vint", "--b", "src.vint", "--json"],
        p,
    );
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let psnr = v["psnr"].as_f64().unwrap();
    assert!(psnr.is_finite() && psnr > 5.0);
    let frac = v["changed_pixel_fraction"].as_f64().unwrap();
    assert!(frac > 0.0 && frac < 0.3);

    let fm = Container::load(&p.join("m/final_mask.vint"))
        .unwrap()
        .to_mask()
        .unwrap();
    Container::mask(&fm.complement(), Value::Null)
        .save(&p.join("bg.vint"))
        .unwrap();
    let out = vino(
        &[
            "metrics", "--a", "e.vint", "--b", "src.vint", "--mask", "bg.vint", "--json",
        ],
        p,
    );
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["psnr"], "inf");
}

#[test]
fn invert_writes_trajectory() {
    let dir = setup();
    let out = vino(
        &[
            "invert",
            "--source",
            "src.vint",
            "--nu",
            "10",
            "--out",
            "traj.vint",
        ],
        dir.path(),
    );
    ok(&out);
    let c = Container::load(&dir.path().join("traj.vint")).unwrap();
    assert_eq!(c.dims.frames, 11 * 8);
    assert_eq!(c.meta["tau"].as_array().unwrap().len(), 11);
    assert_eq!(c.meta["tau"][10], 1000);
    let first: Vec<f64> = c.data[..8 * 3 * 32 * 32].to_vec();
    let src = Container::load(&dir.path().join("src.vint")).unwrap();
    assert_eq!(first, src.data);
}

#[test]
fn exit_codes() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), "{\"edit\": 1}").unwrap();
    let out = vino(
        &[
            "edit", "--config", "bad.json", "--source", "src.vint", "--out", "x.vint",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(2));

    let mut cfg = RunConfig::canonical().resolved();
    cfg["edit"]["k"] = Value::from(4);
    std::fs::write(p.join("k4.json"), cfg.to_string()).unwrap();
    let out = vino(
        &[
            "edit", "--config", "k4.json", "--source", "src.vint", "--out", "x.vint",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(2));

    let out = vino(
        &[
            "edit",
            "--config",
            "cfg.json",
            "--source",
            "missing.vint",
            "--out",
            "x.vint",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(3));

    // source object absent from the video: empty segmentation is a runtime error
    let mut cfg = RunConfig::canonical().resolved();
    cfg["edit"]["source_object"]["color"] = serde_json::json!([0.0, 1.0, 0.0]);
    std::fs::write(p.join("green.json"), cfg.to_string()).unwrap();
    let out = vino(
        &[
            "edit",
            "--config",
            "green.json",
            "--source",
            "src.vint",
            "--out",
            "x.vint",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty mask"));

    let out = vino(&["frobnicate"], p);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = vino(&["selftest"], dir.path());
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("all 11 checks passed"));
}
