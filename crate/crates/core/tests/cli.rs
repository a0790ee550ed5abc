use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use corrkd::linalg::io::{read_tensor, write_tensor, write_tensor_as, DType};
use corrkd::linalg::Tensor2D;

fn corrkd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corrkd")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn put(dir: &Path, name: &str, t: &Tensor2D) -> String {
    let p = dir.join(name);
    write_tensor(&p, t).unwrap();
    p.to_str().unwrap().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn rows(r: &[&[f64]]) -> Tensor2D {
    Tensor2D::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn entropy_of_quarter_identity() {
    let dir = tempfile::tempdir().unwrap();
    let a = put(dir.path(), "a.rdt", &Tensor2D::identity(4).scale(0.25));
    let o = corrkd(&["entropy", "--input", &a, "--alpha", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "2");
    let o = corrkd(&["entropy", "--input", &a, "--alpha", "3"]);
    assert_eq!(stdout(&o).trim(), "2");
}

#[test]
fn entropy_from_features_and_mi() {
    let dir = tempfile::tempdir().unwrap();
    let x = put(dir.path(), "x.rdt", &rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let o = corrkd(&["entropy", "--input", &x, "--features"]);
    assert_eq!(stdout(&o).trim(), "1");
    let o = corrkd(&["mi", "--a", &x, "--b", &x, "--features", "--alpha", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1");
}

#[test]
fn alpha_one_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let a = put(dir.path(), "a.rdt", &Tensor2D::identity(2).scale(0.5));
    let o = corrkd(&["entropy", "--input", &a, "--alpha", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("limit"), "{}", stderr(&o));
}

#[test]
fn loss_with_explicit_target() {
    let dir = tempfile::tempdir().unwrap();
    let h = 0.5f64.sqrt();
    let zs = put(dir.path(), "zs.rdt", &rows(&[&[1.0, 0.0], &[h, h]]));
    let t = put(dir.path(), "t.rdt", &Tensor2D::identity(2));
    let o = corrkd(&["loss", "--zs", &zs, "--target", &t]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("repr_loss 0.29248125036"), "{out}");
}

#[test]
fn loss_with_teacher_labels_and_logits() {
    let dir = tempfile::tempdir().unwrap();
    let zs = put(dir.path(), "zs.rdt", &rows(&[&[1.0, 0.2], &[0.9, -0.1], &[-0.3, 1.0]]));
    let zt = put(dir.path(), "zt.rdt", &rows(&[&[1.0, 0.0, 0.1], &[1.0, 0.1, 0.0], &[0.0, 1.0, 0.0]]));
    let y = put(dir.path(), "y.rdt", &rows(&[&[0.0], &[0.0], &[1.0]]));
    let s = put(dir.path(), "s.rdt", &rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]));
    let o = corrkd(&[
        "loss", "--zs", &zs, "--zt", &zt, "--labels", &y, "--omega", "0.5", "--student-logits", &s,
        "--teacher-logits", &s, "--tau", "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    for key in ["repr_loss ", "poly_xe ", "kl 0\n", "total "] {
        assert!(out.contains(key), "missing {key:?} in {out}");
    }
    // Teacher-only target needs omega = 1.
    let o = corrkd(&["loss", "--zs", &zs, "--zt", &zt, "--omega", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let zs = put(dir.path(), "zs.rdt", &rows(&[&[1.0, 0.3, -0.2], &[-0.2, 0.9, 0.4], &[0.5, 0.5, 0.1], &[0.7, -1.1, 0.3]]));
    let t = put(
        dir.path(),
        "t.rdt",
        &rows(&[&[1.0, 0.2, 0.5, 0.0], &[0.2, 1.0, 0.0, 0.5], &[0.5, 0.0, 1.0, 0.2], &[0.0, 0.5, 0.2, 1.0]]),
    );
    let o = corrkd(&["grad-check", "--zs", &zs, "--target", &t, "--h", "1e-5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err: f64 = stdout(&o).trim().parse().unwrap();
    assert!(err < 1e-4);
}

#[test]
fn usage_errors_exit_one() {
    let o = corrkd(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = corrkd(&["entropy", "--inptu", "x"]);
    assert_eq!(o.status.code(), Some(1));
    let o = corrkd(&[]);
    assert_eq!(o.status.code(), Some(1));
    let o = corrkd(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("grad-check"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = corrkd(&["entropy", "--input", &path(dir.path(), "missing.rdt")]);
    assert_eq!(o.status.code(), Some(2));
    let junk = path(dir.path(), "junk.rdt");
    std::fs::write(&junk, b"RDT9garbage").unwrap();
    let o = corrkd(&["entropy", "--input", &junk]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn boundary_writes_band_and_indices() {
    let dir = tempfile::tempdir().unwrap();
    let mask = Tensor2D::from_fn(8, 8, |_, j| if j >= 4 { 1.0 } else { 0.0 });
    let m = path(dir.path(), "m.rdt");
    write_tensor_as(&m, &mask, DType::U8).unwrap();
    let (out, idx) = (path(dir.path(), "band.rdt"), path(dir.path(), "idx.rdt"));
    let o = corrkd(&["boundary", "--mask", &m, "--radius", "1", "--cap", "10", "--seed", "3", "--out", &out, "--indices", &idx]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let band = read_tensor(&out).unwrap();
    // Edge between columns 3 and 4, marked on both sides, then dilated by one.
    for i in 0..8 {
        let row: Vec<f64> = band.row(i).to_vec();
        assert_eq!(row, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }
    assert_eq!(read_tensor(&idx).unwrap().shape(), (10, 1));
    assert!(stdout(&o).contains("boundary_pixels 32"), "{}", stdout(&o));
}

fn short_config(dir: &Path, seed: u64) -> PathBuf {
    let p = dir.join(format!("run{seed}.cfg"));
    std::fs::write(&p, format!("# quick run\nseed = {seed}\nsteps = 25\nheight = 32\nwidth = 32\n")).unwrap();
    p
}

#[test]
fn train_writes_deterministic_csv_and_params() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 4);
    let cfg = cfg.to_str().unwrap();
    let (a, b, p) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"), path(dir.path(), "p.rdt"));
    let o = corrkd(&["train", "--config", cfg, "--out", &a, "--params-out", &p]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(corrkd(&["train", "--config", cfg, "--out", &b]).status.code(), Some(0));
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,loss_total,loss_repr,loss_logit,loss_xe,probe_acc,mi_bits");
    assert_eq!(text.lines().count(), 26);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(read_tensor(&p).unwrap().shape(), (1, 4 * 8 + 8));
    // A different seed gives a different history.
    let c = path(dir.path(), "c.csv");
    assert_eq!(corrkd(&["train", "--config", cfg, "--seed", "5", "--out", &c]).status.code(), Some(0));
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn failed_train_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "steps = 5\nomgea = 0.5\n").unwrap();
    let out = path(dir.path(), "h.csv");
    let o = corrkd(&["train", "--config", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `omgea`"), "{}", stderr(&o));
    assert!(!Path::new(&out).exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn soup_from_trained_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1);
    // Checkpoints along one run.
    for (k, steps) in ["25", "10", "1"].iter().enumerate() {
        let o = corrkd(&[
            "train", "--config", cfg.to_str().unwrap(), "--steps", steps, "--out", &path(dir.path(), &format!("h{k}.csv")),
            "--params-out", &path(dir.path(), &format!("ck{k}.rdt")),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let manifest = dir.path().join("soup.txt");
    std::fs::write(
        &manifest,
        "metric = neg_loss\nmode = greedy\nconfig = run1.cfg\ningredient = a ck0.rdt\ningredient = b ck1.rdt\ningredient = c ck2.rdt\n",
    )
    .unwrap();
    let out = path(dir.path(), "soup.rdt");
    let o = corrkd(&["soup", "--manifest", manifest.to_str().unwrap(), "--out", &out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(key)).unwrap().trim().parse().unwrap()
    };
    assert!(value("metric ") >= value("best_individual "), "{text}");
    assert_eq!(read_tensor(&out).unwrap().shape(), (1, 40));

    std::fs::write(&manifest, "mode = uniform\ningredient = a ck0.rdt\ningredient = b missing.rdt\n").unwrap();
    let o = corrkd(&["soup", "--manifest", manifest.to_str().unwrap(), "--out", &path(dir.path(), "u.rdt")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_dumps_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 2);
    let out = dir.path().join("seq");
    let o = corrkd(&["gen", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for t in 0..5 {
        let m = read_tensor(out.join(format!("mask_{t:03}.rdt"))).unwrap();
        assert_eq!(m.shape(), (32, 32));
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(read_tensor(out.join(format!("features_{t:03}.rdt"))).unwrap().shape(), (1024, 4));
    }
}
