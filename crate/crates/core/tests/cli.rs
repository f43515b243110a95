use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use steklov::config::ExperimentConfig;
use steklov::Error;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn steklov(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steklov")).args(args).output().unwrap()
}

fn read_csv_column(path: &Path, col: usize) -> Vec<f64> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn minimal_spectrum_config() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("disk_spectrum.toml");
    let o = steklov(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lambda = read_csv_column(&out.path().join("spectrum/spectrum.csv"), 1);
    assert_eq!(lambda.len(), 7);
    assert!((lambda[1] - 1.0).abs() < 0.02, "{lambda:?}");
    let text = std::fs::read_to_string(out.path().join("spectrum/spectrum.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,lambda,residual");
    let field = text.lines().nth(2).unwrap().split(',').nth(1).unwrap();
    let mantissa = field.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{field}");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["files"]["spectrum/spectrum.csv"].is_string());
    assert_eq!(manifest["config"]["name"], "disk-spectrum");
    assert!(!out.path().join("solve").exists());
}

#[test]
fn increasing_schedule_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[domain]\nkind = \"disk\"\n[mesh]\nh = 0.2\n[solve]\nlambda_start = 0.001\nlambda_end = 0.1\nseed = \"trivial\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = steklov(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("must decrease"));
    assert!(!out.exists());

    // The same check applies to command-line overrides.
    let good = configs().join("disk_spectrum.toml");
    let o = steklov(&[
        "solve",
        "--config",
        good.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--lambda-start",
        "0.01",
        "--lambda-end",
        "0.1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn parse_errors_name_the_location() {
    let base = Path::new(".");
    let e = ExperimentConfig::from_toml("[domain]\nkind = \"disk\"\n[mesh]\nh = \"fine\"\n", base).unwrap_err();
    assert!(matches!(&e, Error::Config(m) if m.contains("line 4") && m.contains('h')), "{e}");
    let e = ExperimentConfig::from_toml("[domain]\nkind = \"disk\"\n[mesh]\nh = 0.1\nhh = 2\n", base).unwrap_err();
    assert!(e.to_string().contains("hh"), "{e}");
    let e = ExperimentConfig::from_toml("[domain]\nkind = \"spline\"\nfile = \"missing.txt\"\n[mesh]\nh = 0.1\n", base).unwrap_err();
    assert!(e.to_string().contains("missing.txt"), "{e}");
    let e = ExperimentConfig::from_toml("[domain]\nkind = \"disk\"\n[mesh]\nh = 0.1\nladder = [0.05, 0.1]\n", base).unwrap_err();
    assert!(e.to_string().contains("ladder"), "{e}");
    let e = ExperimentConfig::from_toml("[domain]\nkind = \"disk\"\n[mesh]\nh = 0.1\n[[assert]]\ncheck = \"vibes\"\n", base).unwrap_err();
    assert!(e.to_string().contains("vibes"), "{e}");
}

#[test]
fn relative_spline_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let pts: String = (0..16)
        .map(|k| {
            let t = k as f64 * std::f64::consts::TAU / 16.0;
            format!("{} {}\n", 1.5 * t.cos(), t.sin())
        })
        .collect();
    std::fs::write(dir.path().join("ellipse.txt"), pts).unwrap();
    let cfg = dir.path().join("spline.toml");
    std::fs::write(&cfg, "[domain]\nkind = \"spline\"\nfile = \"ellipse.txt\"\n[mesh]\nh = 0.2\n[spectrum]\ncount = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = steklov(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn blow_up_recipe_passes_its_asserts_and_reruns_identically() {
    let cfg = configs().join("disk_blowup.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let o = steklov(&["report", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("PASS flux_mass") && !stdout.contains("FAIL"), "{stdout}");
    }
    let checks: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(a.path().join("checks.json")).unwrap()).unwrap();
    assert!(checks.iter().all(|c| c["passed"] == true));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_object().unwrap();
    for f in ["continue/branch.json", "diagnose/summary.csv", "green/mu.json", "ansatz/residual.json", "mesh/mesh.txt"] {
        assert!(files.contains_key(f), "{f}");
        let bytes_a = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(bytes_a, std::fs::read(b.path().join(f)).unwrap(), "{f}");
        assert_eq!(files[f], steklov::io::sha256_hex(&bytes_a));
    }
    assert_eq!(std::fs::read(a.path().join("manifest.json")).unwrap(), std::fs::read(b.path().join("manifest.json")).unwrap());
}

#[test]
fn failing_assert_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[domain]\nkind = \"disk\"\n[mesh]\nh = 0.2\n[[assert]]\ncheck = \"spectrum_lambda1\"\ntarget = 1.5\n").unwrap();
    let out = dir.path().join("out");
    let o = steklov(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL spectrum_lambda1"));
    let checks: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(out.join("checks.json")).unwrap()).unwrap();
    assert_eq!(checks[0]["passed"], false);
}

#[test]
fn seed_override_and_deflation_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[domain]\nkind = \"disk\"\n[mesh]\nh = 0.08\nlocal_h = 1.25e-4\n[spectrum]\nenabled = false\n").unwrap();
    let first = dir.path().join("first");
    let args = ["--lambda-start", "0.1", "--lambda-end", "0.05", "--lambda-factor", "0.5"];
    let mut a = vec!["continue", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap(), "--seed-spec", "ansatz:1,0:-1,0"];
    a.extend(args);
    let o = steklov(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let b1 = steklov::solver::Branch::load(&first.join("continue")).unwrap();
    assert_eq!(b1.lambdas(), vec![0.1, 0.05]);

    // The reversed ansatz gives the negated branch, which deflating the first one leaves reachable.
    let second = dir.path().join("second");
    let mut a = vec!["continue", "--config", cfg.to_str().unwrap(), "--out", second.to_str().unwrap(), "--seed", "ansatz:-1,0:1,0"];
    a.extend(args);
    let cont = first.join("continue");
    a.extend(["--deflate", cont.to_str().unwrap()]);
    let o = steklov(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let b2 = steklov::solver::Branch::load(&second.join("continue")).unwrap();
    let d = b1.points[0].u.add(&b2.points[0].u).max_abs();
    assert!(d < 1e-6 * b1.points[0].u.max_abs(), "{d}");
}
