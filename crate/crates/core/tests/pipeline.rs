use g2sqz::io::write_tags;
use g2sqz::pipeline::{run_pipeline, PipelineConfig, TagSource};
use g2sqz::sim::{simulate, SimConfig};
use g2sqz::tags::TimeTagStream;
use g2sqz::Error;

#[test]
fn empty_tag_file_aborts_at_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.sqzt");
    let streams = [
        TimeTagStream::new(0, vec![], 1_000_000).unwrap(),
        TimeTagStream::new(1, vec![], 1_000_000).unwrap(),
    ];
    write_tags(&streams, &path, None).unwrap();
    let mut cfg = PipelineConfig::reference_setup(5e-6, 1.0, 1);
    cfg.source = TagSource::TagFile {
        path,
        channel_a: 0,
        channel_b: 1,
    };
    let err = run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "correlate"),
        other => panic!("{other}"),
    }
    assert!(matches!(err.root(), Error::EmptyStream(_)));
    assert!(!err.is_numerical());
}

#[test]
fn rerun_gives_identical_report() {
    let mut cfg = PipelineConfig::reference_setup(30e-6, 1.0, 42);
    cfg.uncertainty.samples = 2000;
    let one = serde_json::to_string(&run_pipeline(&cfg).unwrap()).unwrap();
    let two = serde_json::to_string(&run_pipeline(&cfg).unwrap()).unwrap();
    assert_eq!(one, two);
}

#[test]
fn tag_file_source_matches_in_memory_simulation() {
    let sim = SimConfig::reference_setup(30e-6, 1.0, 8);
    let out = simulate(&sim).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.sqzt");
    write_tags(&[out.a, out.b], &path, Some(&out.truth)).unwrap();

    let mut cfg = PipelineConfig::reference_setup(30e-6, 1.0, 8);
    cfg.uncertainty.samples = 2000;
    let direct = run_pipeline(&cfg).unwrap();
    cfg.source = TagSource::TagFile {
        path,
        channel_a: 0,
        channel_b: 1,
    };
    let from_file = run_pipeline(&cfg).unwrap();
    assert_eq!(direct.r, from_file.r);
    assert_eq!(direct.sigma_db, from_file.sigma_db);
    assert_eq!(direct.coincidences, from_file.coincidences);
    assert!(from_file.truth.is_some());
}

#[test]
fn report_carries_every_stage() {
    let mut cfg = PipelineConfig::reference_setup(30e-6, 1.0, 3);
    cfg.uncertainty.samples = 2000;
    let report = run_pipeline(&cfg).unwrap();
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    for key in ["r", "sigma_r", "squeezing_db", "sigma_db", "g2_zero", "gamma1", "gamma2", "k", "f", "eta_esc", "p_th", "formula_mode"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert!(report.comb_fit.fit.converged);
    assert!(report.sigma_db > 0.0 && report.squeezing_db < 0.0);
    assert!(report.to_text().lines().any(|l| l.starts_with("squeezing ") && l.ends_with(" dB")));
}
