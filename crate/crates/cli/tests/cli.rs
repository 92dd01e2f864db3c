use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatsketch")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) {
    let text = "total_steps = 6\nresolution = 16\nuse_sds = false\nuse_sketch = false\nguidance_refresh_interval = 3\n";
    std::fs::write(dir.join("run.cfg"), text).unwrap();
}

#[test]
fn metrics_of_identical_images() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--sphere", "12", "--radius", "0.5", "--out", "s.ply"], d).status.success());
    let r = bin(&["render", "--scene", "s.ply", "--width", "24", "--height", "20", "--out", "a.png"], d);
    assert!(r.status.success(), "{}", stderr(&r));
    let m = bin(&["metrics", "a.png", "a.png"], d);
    assert!(m.status.success());
    assert_eq!(stdout(&m).trim(), "psnr=100.00 ssim=1.0000");
}

#[test]
fn gradcheck_passes_on_builtin_scene() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["gradcheck"], dir.path());
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("position"));
}

#[test]
fn fit_without_guidance_names_the_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(bin(&["init", "--sphere", "4", "--out", "s.ply"], d).status.success());
    let o = bin(&["fit", "--scene", "s.ply", "--out", "o.ply"], d);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("--guidance-dir") && err.contains("--synthetic"), "{err}");
    assert!(!d.join("o.ply").exists());
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_config(d);
    assert!(bin(&["init", "--sphere", "16", "--radius", "0.6", "--seed", "2", "--out", "truth.ply"], d).status.success());
    assert!(bin(&["init", "--sphere", "16", "--radius", "0.8", "--seed", "3", "--out", "init.ply"], d).status.success());
    for name in ["a", "b"] {
        let out = format!("{name}.ply");
        let log = format!("{name}.jsonl");
        let args = [
            "fit", "--config", "run.cfg", "--scene", "init.ply", "--synthetic", "truth.ply", "--out", &out, "--metrics", &log,
        ];
        let o = bin(&args, d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(d.join("a.ply")).unwrap(), std::fs::read(d.join("b.ply")).unwrap());
    let log = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert_ne!(std::fs::read(d.join("a.ply")).unwrap(), std::fs::read(d.join("init.ply")).unwrap());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "total_stepz = 3\n").unwrap();
    assert!(bin(&["init", "--sphere", "4", "--out", "s.ply"], d).status.success());
    let o = bin(&["fit", "--config", "bad.cfg", "--scene", "s.ply", "--synthetic", "s.ply", "--out", "o.ply"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("total_stepz"), "{}", stderr(&o));
}
