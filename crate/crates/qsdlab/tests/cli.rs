//! End-to-end checks of the binary: exit codes, diagnostics, CSV shape, and
//! override flags.

use std::path::Path;
use std::process::{Command, Output};

fn qsdlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qsdlab"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn coupling_friction_floor_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        "experiment = \"coupling\"\n[params]\ngamma = 0.5\n",
    );
    let out = qsdlab(&["coupling", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("gamma must exceed 1"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn unknown_key_and_duplicate_key_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "u.toml",
        "experiment = \"oracle\"\nbogus_key = 1\n",
    );
    let out = qsdlab(&["oracle", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("bogus_key") && err.contains("line 2"), "{err}");

    let cfg = write_config(
        dir.path(),
        "d.toml",
        "experiment = \"oracle\"\nseed = 1\nseed = 2\n",
    );
    let out = qsdlab(&["oracle", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("duplicate"), "{}", stderr_of(&out));
}

#[test]
fn experiment_subcommand_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.toml", "experiment = \"oracle\"\n");
    let out = qsdlab(&["fv", "--config", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("subcommand"), "{}", stderr_of(&out));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = qsdlab(&["oracle", "--config", "/nonexistent/q.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("cannot read"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn degenerate_ensemble_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.toml",
        "experiment = \"fv\"\n\
         [domain]\nkind = \"interval\"\na = -0.01\nb = 0.01\n\
         [run]\ndt = 10.0\nt_final = 100.0\nburn_in = 0.0\nsnapshot_stride = 1\n\
         n_particles = 8\nbridge_correction = false\n",
    );
    let out = qsdlab(
        &["fv", "--config", &cfg, "--out", dir.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("all particles exited"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "k.toml", "experiment = \"kernels_check\"\n");
    for bad in ["zero", "0", "-3"] {
        let out = qsdlab(
            &["kernels_check", "--config", &cfg],
            &[("QSDLAB_THREADS", bad)],
        );
        assert_eq!(out.status.code(), Some(2), "QSDLAB_THREADS={bad}");
        assert!(
            stderr_of(&out).contains("QSDLAB_THREADS"),
            "{}",
            stderr_of(&out)
        );
    }
}

#[test]
fn sweep_emits_one_row_per_gamma_after_header_and_comment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        "experiment = \"sweep\"\n[params]\ngammas = [2.0, 4.0, 8.0]\n[run]\n\
         n_particles = 32\nt_final = 0.5\nburn_in = 0.25\nsnapshot_stride = 10\noracle_n = 100\n",
    );
    let out_dir = dir.path().join("out");
    let out = qsdlab(
        &["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "{csv}");
    assert!(lines[0].starts_with("gamma,N,T,dt,lambda0_rescaled"));
    assert!(lines[1].starts_with("# seed=42 config_hash="));
    for (line, gamma) in lines[2..].iter().zip(["2,", "4,", "8,"]) {
        assert!(line.starts_with(gamma), "{line}");
    }
    let summary = String::from_utf8_lossy(&out.stdout);
    assert!(summary.starts_with("experiment=sweep rows=3"), "{summary}");
}

#[test]
fn seed_and_out_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "o.toml",
        "experiment = \"oracle\"\nseed = 5\nout = \"ignored\"\n[run]\noracle_n = 50\n",
    );
    let out_dir = dir.path().join("elsewhere");
    let out = qsdlab(
        &[
            "oracle",
            "--config",
            &cfg,
            "--seed",
            "11",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let csv = std::fs::read_to_string(out_dir.join("oracle.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("# seed=11 "), "{csv}");
}

#[test]
fn reruns_are_byte_identical_and_seeds_change_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "f.toml",
        "experiment = \"fv\"\n[run]\nn_particles = 32\nt_final = 0.5\nburn_in = 0.25\n\
         snapshot_stride = 10\noracle_n = 100\n",
    );
    let run = |out: &Path, seed: Option<&str>| -> Vec<u8> {
        let mut args = vec!["fv", "--config", &cfg, "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let o = qsdlab(&args, &[]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr_of(&o));
        std::fs::read(out.join("fv.csv")).unwrap()
    };
    let a = run(&dir.path().join("a"), None);
    let b = run(&dir.path().join("b"), None);
    assert_eq!(a, b);
    let c = run(&dir.path().join("c"), Some("7"));
    assert_ne!(a, c);
}
