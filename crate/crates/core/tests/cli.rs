//! End-to-end tests of the shipped binary: exit codes, stream discipline,
//! and byte-level determinism of its outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dvars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvars"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const NULL_SPEC: &str = "voxels = 600\nframes = 80\nseed = 5\nmu = [500.0, 1500.0]\nsigma = [5.0, 20.0]\nrho = [0.0, 0.5]\ntr = 2.0\n";

const SPIKE_SPEC: &str = "voxels = 1200\nframes = 80\nseed = 6\nmu = [500.0, 1500.0]\nsigma = [5.0, 20.0]\nrho = [0.0, 0.5]\n\n[[spike]]\nframe = 40\nfactor = 3.0\n";

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(dvars(&["--help"]).status.code(), Some(0));
    assert_eq!(dvars(&["--version"]).status.code(), Some(0));
    assert_eq!(dvars(&["compute", "--help"]).status.code(), Some(0));
}

#[test]
fn bad_usage_exits_one() {
    assert_eq!(dvars(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dvars(&["compute"]).status.code(), Some(1));
    assert_eq!(
        dvars(&["compute", "--input", "x.tsv", "--flag", "sideways"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_input_exits_one_and_names_the_path() {
    let out = dvars(&["compute", "--input", "/no/such/file.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/no/such/file.tsv"), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
}

#[test]
fn clean_simulated_volume_computes_with_exit_zero_and_pure_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "null.toml", NULL_SPEC);
    let vol = dir.path().join("null.nii.gz");

    let sim = dvars(&["simulate", "--spec", &spec, "--output", vol.to_str().unwrap()]);
    assert_eq!(sim.status.code(), Some(0), "{}", stderr(&sim));
    // Progress goes to stderr; stdout stays empty.
    assert!(stdout(&sim).is_empty());
    assert!(vol.exists());
    let sidecar = dir.path().join("null.nii.gz.params.tsv");
    assert!(sidecar.exists());
    let params = fs::read_to_string(&sidecar).unwrap();
    assert!(params.starts_with("voxel\tsigma\trho\tdiff_var\n"));
    assert_eq!(params.lines().count(), 601);

    let out = dvars(&["compute", "--input", vol.to_str().unwrap(), "--mask-strategy", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    // Stdout is exactly the TSV report: header plus one row per frame pair.
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frame\tdvars\tdvars_star\tdvars_star_star\tflag"
    );
    assert_eq!(text.lines().count(), 80);
    assert!(text.ends_with('\n'));
}

#[test]
fn spiked_volume_flags_frames_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "spike.toml", SPIKE_SPEC);
    let vol = dir.path().join("spike.nii");
    let sim = dvars(&["simulate", "--spec", &spec, "--output", vol.to_str().unwrap()]);
    assert_eq!(sim.status.code(), Some(0), "{}", stderr(&sim));

    let report = dir.path().join("report.tsv");
    let out = dvars(&[
        "compute",
        "--input",
        vol.to_str().unwrap(),
        "--mask-strategy",
        "all",
        "--output",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    // Report went to the file; stdout stays empty.
    assert!(stdout(&out).is_empty());
    let text = fs::read_to_string(&report).unwrap();
    let flagged: Vec<&str> = text
        .lines()
        .skip(1)
        .filter(|l| l.ends_with("\t1"))
        .collect();
    assert_eq!(flagged.len(), 2, "flagged rows:\n{text}");
    assert!(flagged[0].starts_with("40\t"));
    assert!(flagged[1].starts_with("41\t"));
}

#[test]
fn simulation_is_byte_deterministic_and_seed_override_changes_it() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "null.toml", NULL_SPEC);
    let a = dir.path().join("a.nii.gz");
    let b = dir.path().join("b.nii.gz");
    let c = dir.path().join("c.nii.gz");
    for (path, seed) in [(&a, None), (&b, None), (&c, Some("17"))] {
        let mut args = vec!["simulate", "--spec", spec.as_str(), "--output", path.to_str().unwrap()];
        if let Some(seed) = seed {
            args.extend(["--seed", seed]);
        }
        assert_eq!(dvars(&args).status.code(), Some(0));
    }
    let bytes_a = fs::read(&a).unwrap();
    assert_eq!(bytes_a, fs::read(&b).unwrap(), "same spec, same bytes");
    assert_ne!(bytes_a, fs::read(&c).unwrap(), "new seed, new data");
    assert_eq!(
        fs::read(dir.path().join("a.nii.gz.params.tsv")).unwrap(),
        fs::read(dir.path().join("b.nii.gz.params.tsv")).unwrap()
    );
}

#[test]
fn text_matrix_input_round_trips_the_hand_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("toy.tsv");
    fs::write(&input, "1\t3\t2\n2\t2\t4\n").unwrap();
    let out = dvars(&[
        "compute",
        "--input",
        input.to_str().unwrap(),
        "--mask-strategy",
        "all",
        "--variants",
        "raw",
        "--flag",
        "none",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    // sqrt(2) and sqrt(2.5) to six significant digits.
    assert_eq!(rows[0], "2\t1.41421\tna\tna\t0");
    assert_eq!(rows[1], "3\t1.58114\tna\tna\t0");
}

#[test]
fn two_frame_input_degrades_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("two.csv");
    fs::write(&input, "1,2\n3,5\n2,0\n").unwrap();
    let out = dvars(&["compute", "--input", input.to_str().unwrap(), "--mask-strategy", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("standardized variants skipped"),
        "{}",
        stderr(&out)
    );
    // The report still carries the raw column.
    assert!(stdout(&out).lines().nth(1).unwrap().contains("\tna\tna\t"));
}

#[test]
fn json_format_emits_a_parseable_full_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("toy.tsv");
    fs::write(&input, "1\t3\t2\t5\n2\t2\t4\t1\n9\t8\t7\t9\n").unwrap();
    let out = dvars(&[
        "compute",
        "--input",
        input.to_str().unwrap(),
        "--mask-strategy",
        "all",
        "--format",
        "json",
        "--flag",
        "none",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["meta"]["tool"], "dvars");
    assert_eq!(value["meta"]["frames"], 4);
    assert_eq!(value["frames"].as_array().unwrap().len(), 3);
}

#[test]
fn selftest_passes_and_repeats_identically() {
    let a = dvars(&["selftest"]);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    assert!(stdout(&a).contains("10/10 checks passed"));
    let b = dvars(&["selftest"]);
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn perturbed_selftest_fails_the_calibration_checks() {
    let out = dvars(&["selftest", "--perturb-null-scale", "1.2"]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("null-calibration-star-estimated ... FAIL"), "{text}");
    assert!(text.contains("null-calibration-star-true ... FAIL"), "{text}");
    assert!(text.contains("null-calibration-starstar-true ... FAIL"), "{text}");
    // The data-independent checks still pass.
    assert!(text.contains("hand-oracle ... ok"), "{text}");
    assert!(text.contains("7/10 checks passed"), "{text}");
}
