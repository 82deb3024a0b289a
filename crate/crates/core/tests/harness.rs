//! End-to-end runs, file outputs and plots.

use std::path::Path;

use adatrunc::harness::plot::{emit_plots, plot_particles, plot_replications};
use adatrunc::harness::{
    read_releases, run_adaptive_experiment, run_adaptive_with_n, run_batch_experiment, run_nonadaptive_experiment,
    run_replications, run_sequential, ExperimentConfig, IntervalPolicy, Method, PopulationSource,
};
use adatrunc::model::Normal;
use adatrunc::privacy::{PrivacyParams, TruncationInterval};
use adatrunc::rng::{Purpose, SeedTree};
use adatrunc::smc::ParticleSystem;
use adatrunc::Error;

/// Small and fast, with the base interval given so no grid search runs.
fn small(n: usize) -> ExperimentConfig {
    ExperimentConfig {
        n,
        particles: 40,
        epsilon: 2.0,
        seed: 3,
        base_a: Some(-0.5),
        base_b: Some(0.5),
        batch_iterations: 600,
        batch_burn_in: 100,
        ..Default::default()
    }
}

#[test]
fn zero_records_leave_the_prior() {
    let cfg = small(1);
    let run = run_adaptive_with_n(&cfg, 0).unwrap();
    assert!(run.trace.is_empty() && run.releases.is_empty());
    let prior = ParticleSystem::init(&cfg.prior(), cfg.particles, &SeedTree::new(cfg.seed)).unwrap();
    assert_eq!(run.summary.mean_m, prior.summary().mean_m);
    assert_eq!(run.particle_rows.len(), cfg.particles);
}

#[test]
fn reruns_write_identical_files() {
    let cfg = small(30);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<_> = dirs
        .iter()
        .map(|d| run_adaptive_experiment(&cfg).unwrap().write(d.path()).unwrap())
        .collect();
    for (a, b) in [
        (files[0].trace.clone().unwrap(), files[1].trace.clone().unwrap()),
        (files[0].particles.clone().unwrap(), files[1].particles.clone().unwrap()),
        (files[0].releases.clone(), files[1].releases.clone()),
        (files[0].summary.clone(), files[1].summary.clone()),
    ] {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }
    let name = files[0]
        .trace
        .as_ref()
        .unwrap()
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .to_string();
    assert_eq!(name, "adaptive_eps2_seed3_trace.csv");
}

#[test]
fn frozen_adaptive_intervals_reproduce_the_adaptive_run() {
    let cfg = small(25);
    let seeds = SeedTree::new(cfg.seed);
    let privacy = cfg.privacy().unwrap();
    let base = cfg.base_interval().unwrap().unwrap();
    let run = |policy: &IntervalPolicy| {
        let mut source = PopulationSource::new(&Normal, cfg.true_theta(), seeds);
        run_sequential(
            &Normal,
            &mut source,
            policy,
            privacy,
            &cfg.prior(),
            &cfg.smc_config(),
            cfg.n,
            5,
            &seeds,
        )
        .unwrap()
    };
    let adaptive = run(&IntervalPolicy::Adaptive(base));
    let frozen = run(&IntervalPolicy::Schedule(adaptive.intervals()));
    assert_eq!(adaptive, frozen);
}

#[test]
fn population_source_enforces_order() {
    let mut source = PopulationSource::new(&Normal, adatrunc::model::Theta { m: 0.0, c: 1.0 }, SeedTree::new(1));
    let iv = TruncationInterval::new(-1.0, 1.0).unwrap();
    let p = PrivacyParams::new(1.0).unwrap();
    assert!(source.release(2, iv, p).is_err());
    let r = source.release(1, iv, p).unwrap();
    assert_eq!(r.t, 1);
    assert!(source.release(1, iv, p).is_err());
}

#[test]
fn releases_carry_no_raw_values() {
    let cfg = small(5);
    let dir = tempfile::tempdir().unwrap();
    let files = run_nonadaptive_experiment(&cfg).unwrap().write(dir.path()).unwrap();
    let text = std::fs::read_to_string(&files.releases).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,y,l,r,epsilon");
    let back = read_releases(&files.releases).unwrap();
    assert_eq!(back.len(), 5);
    let iv = cfg.fixed_interval().unwrap();
    assert!(back.iter().all(|r| r.interval == iv));
}

#[test]
fn malformed_release_file_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "t,y,l\n1,0.5,0\n").unwrap();
    assert!(matches!(read_releases(&path), Err(Error::Schema { .. })));
    std::fs::write(&path, "t,y,l,r,epsilon\n2,0.5,0,1,1\n").unwrap();
    assert!(matches!(read_releases(&path), Err(Error::Schema { .. })));
}

#[test]
fn batch_uses_the_nonadaptive_records() {
    let cfg = small(20);
    let fixed = run_nonadaptive_experiment(&cfg).unwrap();
    let (generated, _) = run_batch_experiment(&cfg, None).unwrap();
    assert_eq!(generated.releases, fixed.releases);
}

#[test]
fn config_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"n": 12, "epsilon": 5}"#).unwrap();
    let cfg = ExperimentConfig::from_json_file(&path).unwrap();
    assert_eq!((cfg.n, cfg.epsilon, cfg.particles), (12, 5.0, 500));
    std::fs::write(&path, r#"{"epsilon": -1}"#).unwrap();
    assert!(matches!(ExperimentConfig::from_json_file(&path), Err(Error::Config(_))));
    std::fs::write(&path, "not json").unwrap();
    assert!(matches!(ExperimentConfig::from_json_file(&path), Err(Error::Config(_))));
}

#[test]
fn replication_table_shape() {
    let cfg = ExperimentConfig {
        replications: 2,
        ..small(10)
    };
    let table = run_replications(&cfg, &[1.0, 10.0]).unwrap();
    assert_eq!(table.rows.len(), 2 * 3 * 2);
    for eps in [1.0, 10.0] {
        for m in [Method::Adaptive, Method::Nonadaptive, Method::Batch] {
            assert_eq!(
                table.rows.iter().filter(|r| r.method == m && r.epsilon == eps).count(),
                2
            );
            let agg = table.aggregate(m, eps).unwrap();
            assert_eq!((agg.runs, agg.failures), (2, 0));
        }
    }
}

#[test]
fn single_replication_is_a_plain_run() {
    let cfg = ExperimentConfig {
        replications: 1,
        ..small(15)
    };
    let table = run_replications(&cfg, &[cfg.epsilon]).unwrap();
    let seed = SeedTree::new(cfg.seed).child(Purpose::Replication, 0).master();
    let direct = run_adaptive_experiment(&ExperimentConfig { seed, ..cfg.clone() }).unwrap();
    let row = table.rows.iter().find(|r| r.method == Method::Adaptive).unwrap();
    assert_eq!(row.mean_m, direct.summary.mean_m);
}

#[test]
fn desk_scale_run_recovers_the_mean() {
    let cfg = ExperimentConfig {
        epsilon: 10.0,
        seed: 7,
        ..Default::default()
    };
    let adaptive = run_adaptive_experiment(&cfg).unwrap();
    let fixed = run_nonadaptive_experiment(&cfg).unwrap();
    println!(
        "epsilon 10: adaptive |error| = {:.3}, non-adaptive |error| = {:.3}",
        adaptive.summary.abs_error_m, fixed.summary.abs_error_m
    );
    assert!(adaptive.summary.abs_error_m < 1.0);
}

fn write_run(dir: &Path, n: usize, dump_every: usize) {
    let cfg = ExperimentConfig {
        dump_every,
        particles: 20,
        ..small(n)
    };
    run_adaptive_experiment(&cfg).unwrap().write(dir).unwrap();
}

#[test]
fn particle_plot_has_one_slice_per_dump() {
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), 400, 20);
    let report = emit_plots(dir.path(), dir.path()).unwrap();
    assert_eq!(report.slices, vec![20]);
    let svg = &report.files[0];
    let first = std::fs::read(svg).unwrap();
    assert!(String::from_utf8_lossy(&first).starts_with("<svg"));
    emit_plots(dir.path(), dir.path()).unwrap();
    assert_eq!(std::fs::read(svg).unwrap(), first);
}

#[test]
fn missing_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("x_trace.csv");
    let parts = dir.path().join("x_particles.csv");
    std::fs::write(&trace, "t,posterior_mean_m\n1,0.5\n").unwrap();
    std::fs::write(&parts, "t,i,m,c,weight\n1,0,0.5,1,1\n").unwrap();
    let err = plot_particles(&trace, &parts, &dir.path().join("x.svg")).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
}

#[test]
fn empty_replication_summary_writes_no_box_plot() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("replicate_seed1_runs.csv");
    std::fs::write(
        &runs,
        "method,epsilon,replication,seed,mean_m,mean_c,abs_error_m,abs_error_c,status\n",
    )
    .unwrap();
    assert!(plot_replications(&runs, &dir.path().join("replicate_seed1"))
        .unwrap()
        .is_none());
    let report = emit_plots(dir.path(), dir.path()).unwrap();
    assert!(report.files.is_empty());
    assert_eq!(report.notices.len(), 1);
}

#[test]
fn box_plots_from_replications() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        replications: 3,
        ..small(10)
    };
    let table = run_replications(&cfg, &[1.0, 2.0]).unwrap();
    table.write(dir.path(), cfg.seed).unwrap();
    let report = emit_plots(dir.path(), dir.path()).unwrap();
    let names: Vec<String> = report
        .files
        .iter()
        .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["replicate_seed3_box_m.svg", "replicate_seed3_box_c.svg"]);
}
