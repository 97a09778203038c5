use std::path::Path;
use std::process::Command;

fn modev(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_modev")).args(args).output().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "config.toml" {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read_to_string(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

const SMALL: &str = "[mdp]\neps = [0.2, 0.1]\nreplications = 400\nis_replications = 200\n\
[clt]\nreplications = 300\n[var_rep]\nreplications = 500\n[audit]\npaths = 20\n\
[pollutant]\nseeds = 4\nhs_levels = 20\n";

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for cmd in [
        vec!["mdp-slope"],
        vec!["clt-check"],
        vec!["var-rep"],
        vec!["simulate", "--audit", "--paths", "3"],
    ] {
        let mut trees = Vec::new();
        for w in ["1", "3"] {
            let out = tmp.path().join(format!("{}-{w}", cmd[0]));
            let mut args = vec!["--config", &cfg, "--workers", w, "--out", out.to_str().unwrap()];
            args.extend(cmd.iter().copied());
            let o = modev(&args);
            assert!(o.status.code().is_some(), "{cmd:?} crashed");
            trees.push(tree(&out));
        }
        assert_eq!(trees[0], trees[1], "{cmd:?} differs across worker counts");
    }
}

#[test]
fn seed_flag_changes_the_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(modev(&["simulate", "--seed", "1", "--out", a.to_str().unwrap()])
        .status
        .success());
    assert!(modev(&["simulate", "--seed", "2", "--out", b.to_str().unwrap()])
        .status
        .success());
    assert_ne!(
        std::fs::read(a.join("realization.csv")).unwrap(),
        std::fs::read(b.join("realization.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[mdp]\neps = [0.1, 0.2]\n");
    let o = modev(&[
        "--config",
        &cfg,
        "fluid",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn failed_assertion_exits_nonzero_and_names_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 7\n[pollutant]\nr = 0.2\nseeds = 2\nhs_levels = 10\n",
    );
    let o = modev(&[
        "--config",
        &cfg,
        "pollutant",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("FAIL") && err.contains("seed 7") && err.contains("Hilbert-Schmidt"),
        "{err}"
    );
}

#[test]
fn fluid_and_rate_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    assert!(modev(&["fluid", "--out", o]).status.success());
    assert!(modev(&["rate", "--out", o, "--target", "0.5"]).status.success());
    for f in [
        "fluid.csv",
        "linearization.csv",
        "covariance.csv",
        "gramian.csv",
        "rate.csv",
        "u_opt.csv",
        "psi_opt.csv",
        "eta.csv",
        "config.toml",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
}

#[test]
fn shipped_configs_parse_and_run_fluid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        modev::ExperimentConfig::load(&p).unwrap();
        let out = tmp.path().join(p.file_stem().unwrap());
        let o = modev(&["--config", p.to_str().unwrap(), "fluid", "--out", out.to_str().unwrap()]);
        assert!(
            o.status.success(),
            "{}: {}",
            p.display(),
            String::from_utf8_lossy(&o.stderr)
        );
        seen += 1;
    }
    assert!(seen >= 3);
}
