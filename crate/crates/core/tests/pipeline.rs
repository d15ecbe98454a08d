use std::fs;
use std::path::Path;
use std::process::Command;

use micromixer::io::{parse_config, run_pipeline, RunConfig, Stage};
use micromixer::report::read_report_csv;
use micromixer::Error;

fn tiny(variant: &str, threads: usize) -> RunConfig {
    parse_config(&format!(
        r#"{{
            variant: "{variant}",
            flow_rate_per_inlet_ul_per_min: 5.0,
            channel_length_um: 900,
            n_periods: 1,
            h_um: 10,
            n_particles: 2000,
            slices_per_period: 2,
            threads: {threads},
        }}"#
    ))
    .unwrap()
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn geometry_stage_writes_grid_and_meta_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let m = run_pipeline(&tiny("CDM", 1), Stage::Geometry, &out, false).unwrap();
    assert_eq!(names(&out), ["grid.vtk", "meta.json"]);
    assert_eq!(m.artifacts.last().unwrap().path, "meta.json");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["stage"], "geometry");
    assert_eq!(meta["artifacts"][0]["path"], "grid.vtk");
}

#[test]
fn non_empty_output_needs_force_and_force_keeps_foreign_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    fs::write(out.join("notes.txt"), "mine").unwrap();
    fs::write(out.join("report.csv"), "stale").unwrap();
    let cfg = tiny("PLAIN", 1);
    let err = run_pipeline(&cfg, Stage::Geometry, out, false).unwrap_err();
    assert!(matches!(err, Error::OutputNotEmpty(_)), "{err}");
    assert_eq!(names(out), ["notes.txt", "report.csv"]);
    run_pipeline(&cfg, Stage::Geometry, out, true).unwrap();
    assert_eq!(names(out), ["grid.vtk", "meta.json", "notes.txt"]);
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn single_thread_reruns_are_byte_identical_and_threads_agree() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = [1, 1, 3]
        .iter()
        .enumerate()
        .map(|(n, &t)| {
            let out = dir.path().join(format!("run{n}"));
            let m = run_pipeline(&tiny("CDM", t), Stage::All, &out, false).unwrap();
            (out, m)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    assert_eq!(a.artifacts.len(), b.artifacts.len());
    for (x, y) in a.artifacts.iter().zip(&b.artifacts) {
        assert_eq!(x, y, "{} differs between reruns", x.path);
    }
    for name in ["grid.vtk", "velocity.vtk", "flow_history.csv", "particles_period_1.csv", "topology.csv", "species.vtk", "fret.csv", "report.csv"] {
        assert!(a.get(name).is_some(), "missing {name}");
    }

    let read = |p: &Path| read_report_csv(fs::File::open(p.join("report.csv")).unwrap()).unwrap();
    let (one, many) = (read(&runs[0].0), read(&runs[2].0));
    for ((_, r1), (_, r3)) in one.iter().zip(&many) {
        for (p, q) in r1.iter().zip(r3) {
            for (x, y) in [(p.mixing_index, q.mixing_index), (p.fret_factor, q.fret_factor)] {
                assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()), "{x} vs {y}");
            }
        }
    }
}

#[test]
fn cli_compares_finished_runs() {
    let dir = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_micromixer");
    let mut dirs = Vec::new();
    for v in ["CDM", "SGM"] {
        let cfg = dir.path().join(format!("{v}.json5"));
        fs::write(
            &cfg,
            format!(
                "// tiny run\n{{variant: '{v}', flow_rate_per_inlet: 5, channel_length: 900, n_periods: 1, h_um: 10, n_particles: 2000}}"
            ),
        )
        .unwrap();
        let out = dir.path().join(v);
        let status = Command::new(exe)
            .env("RUST_LOG", "warn")
            .args(["report", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--threads", "1"])
            .status()
            .unwrap();
        assert!(status.success());
        dirs.push(out);
    }
    let cmp = dir.path().join("cmp");
    let out = Command::new(exe)
        .args(["report", "--compare"])
        .args(&dirs)
        .arg("--out")
        .arg(&cmp)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert!(text.contains("CDM") && text.contains("SGM"));
}

#[test]
fn cli_reports_bad_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json5");
    fs::write(&cfg, "{variant: 'XGM', flow_rate_per_inlet: 5}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_micromixer"))
        .args(["geometry", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("variant") && err.contains("CDM"), "{err}");
    assert!(!dir.path().join("o").exists());
}
