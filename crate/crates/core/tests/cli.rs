use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn vig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn entropy_of_identical_rows_is_one() {
    let v = json(&vig(&["entropy", "--inline", "1,2;1,2;1,2"]));
    assert!((v["vendi_score"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn entropy_of_distinct_symbols_is_their_count() {
    let v = json(&vig(&["entropy", "--symbols", "a,b,c,d", "--q", "inf"]));
    assert!((v["vendi_score"].as_f64().unwrap() - 4.0).abs() < 1e-9);
}

#[test]
fn entropy_reads_points_file_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.csv");
    std::fs::write(&pts, "0\n0.1\n0.2\n").unwrap();
    let a = json(&vig(&["entropy", "--points", pts.to_str().unwrap(), "--base", "2"]));
    let conf = dir.path().join("e.toml");
    std::fs::write(&conf, "version = 1\npoints = [[0.0], [0.1], [0.2]]\nbase = \"2\"\n").unwrap();
    let b = json(&vig(&["entropy", "--config", conf.to_str().unwrap()]));
    assert_eq!(a["entropy"], b["entropy"]);
    assert!(a["entropy"].as_f64().unwrap() > 0.0);
}

#[test]
fn channel_q_flag_reaches_every_row() {
    let v = json(&vig(&["channel", "--config", &cfg("channels.toml"), "--q", "2"]));
    for c in v["channels"].as_array().unwrap() {
        for row in c["vig"].as_array().unwrap() {
            assert_eq!(row["q"].as_f64(), Some(2.0));
        }
    }
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "version = 1\nbudget = 101\nseeds = 1\n[pool.synthetic]\nd = 1\nsize = 100\n[[policies]]\nkind = \"random\"\n",
    )
    .unwrap();
    let out = vig(&[
        "lse",
        "--config",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));

    std::fs::write(
        &bad,
        "version = 1\nsimilarities = [0.0]\nrepeats = 1\nmeasures = [\"mi\"]\ntypo = 1\n",
    )
    .unwrap();
    let out = vig(&[
        "rt",
        "--config",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));

    assert!(!vig(&["entropy", "--inline", "0;x"]).status.success());
    assert!(!vig(&["acquire"]).status.success());
    assert!(!vig(&["channel", "--config", "/nonexistent.toml"]).status.success());
}

#[test]
fn csv_outputs_carry_hash_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = vig(&[
        "rt",
        "--config",
        &cfg("rt.toml"),
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("rt_summary.csv")).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("# config-hash: ") && first.len() == "# config-hash: ".len() + 64);
}

#[test]
fn different_seeds_change_acquisition_output() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let d = dir.path().join(seed);
        assert!(vig(&[
            "acquire",
            "--config",
            &cfg("acquire_step.toml"),
            "--seed",
            seed,
            "--out-dir",
            d.to_str().unwrap()
        ])
        .status
        .success());
        std::fs::read(d.join("acquire_runs.csv")).unwrap()
    };
    assert_ne!(run("1"), run("2"));
}

#[test]
fn step_smoke_run_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let out = vig(&[
        "acquire",
        "--config",
        &cfg("acquire_step.toml"),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let el = t.elapsed();
    assert!(out.status.success());
    assert!(el.as_secs_f64() < 10.0, "smoke run took {el:?}");
    let summary = std::fs::read_to_string(dir.path().join("acquire_summary.csv")).unwrap();
    // three policies, iterations 0..=5
    assert_eq!(summary.lines().filter(|l| !l.starts_with('#')).count(), 1 + 3 * 6);
}

#[test]
fn shipped_configs_parse() {
    use vig::cli::*;
    for (name, kind) in [
        ("channels.toml", "channel"),
        ("channels_pair.toml", "channel"),
        ("compare_sphere.toml", "compare"),
        ("acquire_step.toml", "acquire"),
        ("acquire_death.toml", "acquire"),
        ("acquire_location.toml", "acquire"),
        ("lse_synthetic.toml", "lse"),
        ("rt.toml", "rt"),
    ] {
        let p = configs().join(name);
        let ok = match kind {
            "channel" => load_config::<ChannelConfig>(&p).is_ok(),
            "compare" => load_config::<CompareConfig>(&p).is_ok(),
            "acquire" => load_config::<AcquireConfig>(&p).is_ok(),
            "lse" => load_config::<LseConfig>(&p).is_ok(),
            _ => load_config::<vig::rtmodel::RtConfig>(&p).is_ok(),
        };
        assert!(ok, "{name}");
    }
}
