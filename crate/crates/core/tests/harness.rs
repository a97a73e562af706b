use std::collections::BTreeMap;

use apn_doa::harness::flops::{flop_polynomials, total_flop_estimate};
use apn_doa::harness::montecarlo::{run_monte_carlo, run_trial};
use apn_doa::harness::results::{read_csv, read_jsonl, report_rows, write_csv, write_jsonl};
use apn_doa::harness::scenario::{Estimator, ScenarioConfig};
use apn_doa::harness::snapshot_io::{load_snapshots, save_snapshots};
use apn_doa::ml::SampleCovariance;
use apn_doa::optimizer::{apn_estimate, ApnOptions};
use apn_doa::Target;

const SML: Estimator = Estimator::Apn(Target::Sml);

fn small(trials: usize, snr: &[f64], estimators: &[Estimator]) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::uncorrelated();
    cfg.trials = trials;
    cfg.snr_db = snr.to_vec();
    cfg.estimators = estimators.to_vec();
    cfg
}

#[test]
fn estimators_see_the_same_snapshots() {
    let both = small(1, &[20.0], &[Estimator::Music, SML]);
    let alone = small(1, &[20.0], &[SML]);
    let sc = both.build().unwrap();
    let a = run_trial(&both, &sc, 0, 0).unwrap();
    let b = run_trial(&alone, &sc, 0, 0).unwrap();
    assert_eq!(a[1], b[0]);
    assert_eq!(sc.trial_data(20.0, 0, 0).unwrap(), sc.trial_data(20.0, 0, 0).unwrap());
}

#[test]
fn sweep_row_counts() {
    let cfg = small(2, &[10.0, 30.0], &[Estimator::Music, Estimator::Apn(Target::DmlO), SML]);
    let rows = report_rows(&run_monte_carlo(&cfg, Some(2)).unwrap());
    let mut per: BTreeMap<(String, String, bool), usize> = BTreeMap::new();
    for r in &rows {
        *per.entry((r.snr_db.to_string(), r.estimator.clone(), r.is_aggregate())).or_default() += 1;
    }
    assert_eq!(per.len(), 12);
    for ((_, _, agg), n) in per {
        assert_eq!(n, if agg { 1 } else { 2 * 3 });
    }
    let agg: Vec<_> = rows.iter().filter(|r| r.is_aggregate()).collect();
    assert!(agg.iter().all(|r| r.k_index == -1 && r.theta_hat.is_none() && r.crb.is_none()));
    assert!(rows.iter().position(|r| r.is_aggregate()).unwrap() == rows.len() - 6);
}

#[test]
fn results_round_trip() {
    let cfg = small(3, &[0.0, 40.0], &[Estimator::Music, Estimator::Apn(Target::DmlAlt), SML]);
    let rows = report_rows(&run_monte_carlo(&cfg, None).unwrap());
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows).unwrap();
    assert_eq!(read_csv(csv.as_slice()).unwrap(), rows);
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &rows).unwrap();
    assert_eq!(read_jsonl(jsonl.as_slice()).unwrap(), rows);
}

#[test]
fn estimator_failures_do_not_abort_the_sweep() {
    let mut cfg = small(2, &[20.0], &[Estimator::Music, SML]);
    cfg.snapshots = 2;
    let report = run_monte_carlo(&cfg, Some(1)).unwrap();
    let sml = report.aggregate(20.0, SML).unwrap();
    assert_eq!(sml.failures, 2);
    assert!(sml.rmse.is_none());
    let music = report.aggregate(20.0, Estimator::Music).unwrap();
    assert_eq!(music.failures, 0);
    assert!(music.rmse.is_some());
    let rows = report_rows(&report);
    assert!(rows.iter().filter(|r| r.estimator == "sml" && !r.is_aggregate()).all(|r| r.theta_hat.is_none()));
}

#[test]
fn reduced_hessian_needs_more_iterations() {
    let cfg = small(20, &[20.0], &[SML, Estimator::Apn(Target::SmlRed)]);
    let report = run_monte_carlo(&cfg, None).unwrap();
    let full = report.aggregate(20.0, SML).unwrap().mean_iters_stage3.unwrap();
    let red = report.aggregate(20.0, Estimator::Apn(Target::SmlRed)).unwrap().mean_iters_stage3.unwrap();
    assert!(full.is_finite() && red.is_finite());
    assert!(red > full, "reduced {red} vs full {full}");
}

#[test]
fn flop_model_composition() {
    let cfg = ScenarioConfig::uncorrelated();
    let sc = cfg.build().unwrap();
    let r_z = SampleCovariance::from_snapshots(&sc.trial_data(20.0, 2, 0).unwrap());
    let res = apn_estimate(&r_z, &sc.geometry, 3, Target::Sml, &ApnOptions::default()).unwrap();
    assert!((1e6..=1e7).contains(&res.flop_estimate), "{}", res.flop_estimate);

    let mut idle = res.clone();
    idle.line_search_evals.iter_mut().for_each(|v| *v = 0);
    idle.stage1_iterations.iter_mut().for_each(|v| *v = 0);
    idle.stage1_extra_evals.iter_mut().for_each(|v| *v = 0);
    idle.stage3_newton_iterations = 0;
    idle.stage3_extra_evals = 0;
    assert_eq!(total_flop_estimate(&idle, 11, 3), 0.0);

    let mut doubled = res.clone();
    doubled.stage3_newton_iterations *= 2;
    let per_iter = flop_polynomials(11, 3).cost_s_with_derivs as f64;
    let base = total_flop_estimate(&res, 11, 3);
    assert_eq!(total_flop_estimate(&doubled, 11, 3) - base, res.stage3_newton_iterations as f64 * per_iter);
}

#[test]
fn snapshot_files_round_trip() {
    let cfg = ScenarioConfig::uncorrelated();
    let sc = cfg.build().unwrap();
    let z = sc.trial_data(10.0, 1, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("z.apnd");
    save_snapshots(&bin, &z).unwrap();
    let back = load_snapshots(&bin).unwrap();
    let first = std::fs::read(&bin).unwrap();
    save_snapshots(&bin, &back).unwrap();
    assert_eq!(std::fs::read(&bin).unwrap(), first);
    let text = dir.path().join("z.csv");
    save_snapshots(&text, &z).unwrap();
    assert_eq!(load_snapshots(&text).unwrap(), z);
}

#[test]
fn bundled_configs_load_from_disk() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(ScenarioConfig::load(&root.join("uncorrelated.toml")).unwrap(), ScenarioConfig::uncorrelated());
    assert_eq!(ScenarioConfig::load(&root.join("correlated.toml")).unwrap(), ScenarioConfig::correlated());
}
