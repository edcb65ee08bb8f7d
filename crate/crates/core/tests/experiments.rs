use std::fs;
use std::path::Path;

use seplab::experiments::{run, run_to_dir, validate, ExperimentConfig, ExperimentKind, RunReport};

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(text).unwrap()
}

fn table<'a>(rep: &'a RunReport, name: &str) -> &'a seplab::experiments::Table {
    rep.tables.iter().find(|t| t.name == name).unwrap_or_else(|| panic!("missing table {name}"))
}

fn column(rep: &RunReport, name: &str, col: &str) -> Vec<String> {
    let t = table(rep, name);
    let k = t.header.iter().position(|h| h == col).unwrap();
    t.rows.iter().map(|r| r[k].clone()).collect()
}

const SMALL: &[(&str, &str)] = &[
    ("moments", "kind = \"moments\"\n"),
    ("duality", "kind = \"duality\"\n[duality]\ngraphs = 5\nmax_vertices = 8\n"),
    (
        "consistency",
        "kind = \"consistency\"\nseeds = [1, 2]\n[sizes]\nn = [500, 2000]\n[graph]\nalphas = [0.5, 1.0]\n[assertions]\nenabled = false\n",
    ),
    (
        "concentration",
        "kind = \"concentration\"\nseeds = [1, 2, 3]\n[sizes]\nn = [500, 2000]\n[concentration]\ngrid = 50\n[assertions]\nenabled = false\n",
    ),
    (
        "hydro",
        "kind = \"hydro\"\n[sizes]\nn = [1000]\n[dynamics]\nmodes = 16\nt_end = 0.05\ntime_points = 6\n[assertions]\nenabled = false\n",
    ),
    (
        "bundle-consistency",
        "kind = \"bundle-consistency\"\n[graph]\nscheme = \"lifted\"\n[sizes]\nn = [300]\nn_fibre = [20]\nqueries = 100\n\
         [observables]\nphi = [\"cos(1|1)\"]\n[assertions]\nenabled = false\n",
    ),
    (
        "bundle-hydro",
        "kind = \"bundle-hydro\"\n[graph]\nscheme = \"lifted\"\n[sizes]\nn = [150]\nn_fibre = [20]\n\
         [observables]\nphi = [\"cos(1|1)\"]\n[dynamics]\nmodes = 8\nfibre_modes = 4\nt_end = 0.02\ntime_points = 3\n\
         [assertions]\nenabled = false\n",
    ),
];

#[test]
fn every_kind_has_a_small_valid_config() {
    assert_eq!(SMALL.len(), ExperimentKind::ALL.len());
    for (name, text) in SMALL {
        let c = config(text);
        assert_eq!(c.kind.name(), *name);
        assert!(validate(&c).is_ok(), "{name}: {:?}", validate(&c).failures);
    }
}

#[test]
fn small_runs_write_documented_tables_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in SMALL {
        let c = config(text);
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        let rep = run_to_dir(&c, &a).unwrap();
        run_to_dir(&c, &b).unwrap();
        assert!(!rep.tables.is_empty());
        for t in &rep.tables {
            let file = format!("{}.csv", t.name);
            let text = fs::read_to_string(a.join(&file)).unwrap();
            assert_eq!(text.lines().next().unwrap(), t.header.join(","), "{name}/{file}");
            assert_eq!(text.lines().count(), t.rows.len() + 1);
            assert_eq!(fs::read(a.join(&file)).unwrap(), fs::read(b.join(&file)).unwrap(), "{name}/{file}");
        }
        for f in ["metadata.json", "run.log"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{name}/{f}");
        }
        metadata_reproduces_config(&a, &c);
    }
}

fn metadata_reproduces_config(dir: &Path, c: &ExperimentConfig) {
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("metadata.json")).unwrap()).unwrap();
    let again: ExperimentConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    assert_eq!(&again, c);
    // the TOML form round-trips too
    assert_eq!(&ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
}

#[test]
fn moments_table_matches_closed_forms() {
    let rep = run(&config(SMALL[0].1)).unwrap();
    assert!(rep.passed());
    let c0 = column(&rep, "moments", "c0");
    let c2 = column(&rep, "moments", "c2");
    let kernels = column(&rep, "moments", "kernel");
    let dims = column(&rep, "moments", "dim");
    let row = (0..kernels.len()).find(|&i| kernels[i] == "indicator" && dims[i] == "1").unwrap();
    assert!((c0[row].parse::<f64>().unwrap() - 2.0).abs() < 1e-12);
    assert!((c2[row].parse::<f64>().unwrap() - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn hydro_table_reports_pairing_errors() {
    let rep = run(&config(SMALL[4].1)).unwrap();
    let emp = column(&rep, "hydro", "empirical");
    let pde = column(&rep, "hydro", "pde");
    let err = column(&rep, "hydro", "abs_error");
    assert_eq!(emp.len(), 6);
    for i in 0..emp.len() {
        let (e, p, d): (f64, f64, f64) = (emp[i].parse().unwrap(), pde[i].parse().unwrap(), err[i].parse().unwrap());
        assert_eq!(d, (e - p).abs());
    }
    let max: f64 = column(&rep, "hydro_summary", "max_error")[0].parse().unwrap();
    let worst = err.iter().map(|s| s.parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert_eq!(max, worst);
    assert_eq!(column(&rep, "pde", "value").len(), 6);
}

#[test]
fn duality_run_passes_its_assertion() {
    let rep = run(&config(SMALL[1].1)).unwrap();
    assert!(rep.passed());
    assert_eq!(table(&rep, "duality").rows.len(), 5);
}

#[test]
fn invalid_configs_are_refused_before_running() {
    for (text, needle) in [
        ("kind = \"consistency\"\n[graph]\nkernel = \"gauss\"\n", "unknown kernel `gauss`"),
        ("kind = \"consistency\"\n[sizes]\nn = [4000, 2000]\n", "strictly increasing"),
        ("kind = \"consistency\"\nseeds = []\n", "seeds"),
        ("kind = \"consistency\"\n[graph]\nschedule_exponent = 0.9\n", "N h^{m+2}/log N"),
        ("kind = \"hydro\"\n[geometry]\npotential = \"quartic\"\n", "unknown potential"),
    ] {
        let c = config(text);
        let report = validate(&c);
        assert!(report.failures.iter().any(|f| f.contains(needle)), "{needle}: {:?}", report.failures);
        let err = run(&c).unwrap_err().to_string();
        assert!(err.contains(needle), "{err}");
    }
}
