//! Parallel Monte Carlo sweeps over SNR and trials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::match_angles;
use super::scenario::{Estimator, Scenario, ScenarioConfig};
use crate::ml::SampleCovariance;
use crate::music::music_estimate;
use crate::optimizer::apn_estimate;
use crate::{Error, Result};

/// Outcome of one estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub snr_db: f64,
    pub snr_index: usize,
    pub trial: usize,
    pub estimator: Estimator,
    pub theta_true: Vec<f64>,
    /// Estimates reordered to match `theta_true`; absent when the estimator failed.
    pub theta_hat: Option<Vec<f64>>,
    pub lambda_hat: Option<Vec<f64>>,
    pub sq_err: Option<Vec<f64>>,
    pub iters_stage1: usize,
    pub iters_stage3: usize,
    pub flops_est: Option<f64>,
    pub converged: bool,
    pub diverged_lambda: bool,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Per-(SNR, estimator) summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub snr_db: f64,
    pub snr_index: usize,
    pub estimator: Estimator,
    pub trials: usize,
    pub failures: usize,
    /// Squared angle error pooled over angles and successful trials.
    pub mse: Option<f64>,
    pub rmse: Option<f64>,
    pub mean_iters_stage1: Option<f64>,
    pub mean_iters_stage3: Option<f64>,
    pub mean_flops: Option<f64>,
    pub converged_rate: f64,
    pub divergence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub config: ScenarioConfig,
    /// Ordered by SNR index, then estimator position in the config, then trial.
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl MonteCarloReport {
    pub fn aggregate(&self, snr_db: f64, estimator: Estimator) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.snr_db == snr_db && a.estimator == estimator)
    }
}

/// Runs every estimator on one trial's data. All estimators see the same snapshots.
pub fn run_trial(config: &ScenarioConfig, scenario: &Scenario, snr_index: usize, trial: usize) -> Result<Vec<TrialRecord>> {
    let snr_db = config.snr_db[snr_index];
    let z = scenario.trial_data(snr_db, snr_index, trial)?;
    let r_z = SampleCovariance::from_snapshots(&z);
    let truth = scenario.theta.as_slice();
    let k = truth.len();
    let records = config
        .estimators
        .iter()
        .map(|&estimator| {
            let mut rec = TrialRecord {
                snr_db,
                snr_index,
                trial,
                estimator,
                theta_true: truth.to_vec(),
                theta_hat: None,
                lambda_hat: None,
                sq_err: None,
                iters_stage1: 0,
                iters_stage3: 0,
                flops_est: None,
                converged: false,
                diverged_lambda: false,
                error: None,
            };
            let outcome = match estimator {
                Estimator::Music => music_estimate(&r_z, &scenario.geometry, k, &config.options.music).map(|res| {
                    rec.converged = !res.padded;
                    res.theta_hat
                }),
                Estimator::Apn(target) => apn_estimate(&r_z, &scenario.geometry, k, target, &config.options.apn).map(|res| {
                    rec.lambda_hat = res.lambda_hat.clone();
                    rec.iters_stage1 = res.last_stage1_iterations();
                    rec.iters_stage3 = res.stage3_iterations;
                    rec.flops_est = Some(res.flop_estimate);
                    rec.converged = res.converged;
                    rec.diverged_lambda = res.diverged_lambda;
                    res.theta_hat
                }),
            };
            match outcome {
                Ok(est) => {
                    let (matched, err) = match_angles(truth, &est);
                    rec.theta_hat = Some(matched);
                    rec.sq_err = Some(err);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect();
    Ok(records)
}

/// Sum of `values` after sorting, so the result does not depend on input order.
fn ordered_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.into_iter().sum()
}

fn ordered_mean(values: Vec<f64>) -> Option<f64> {
    let n = values.len();
    (n > 0).then(|| ordered_sum(values) / n as f64)
}

/// Summarises records sharing one SNR and estimator.
pub fn aggregate(records: &[&TrialRecord]) -> Option<Aggregate> {
    let first = records.first()?;
    let ok: Vec<&&TrialRecord> = records.iter().filter(|r| !r.failed()).collect();
    let errors: Vec<f64> = ok.iter().flat_map(|r| r.sq_err.clone().unwrap_or_default()).collect();
    let mse = ordered_mean(errors);
    let n = records.len() as f64;
    let is_apn = matches!(first.estimator, Estimator::Apn(_));
    Some(Aggregate {
        snr_db: first.snr_db,
        snr_index: first.snr_index,
        estimator: first.estimator,
        trials: records.len(),
        failures: records.len() - ok.len(),
        mse,
        rmse: mse.map(f64::sqrt),
        mean_iters_stage1: if is_apn { ordered_mean(ok.iter().map(|r| r.iters_stage1 as f64).collect()) } else { None },
        mean_iters_stage3: if is_apn { ordered_mean(ok.iter().map(|r| r.iters_stage3 as f64).collect()) } else { None },
        mean_flops: ordered_mean(ok.iter().filter_map(|r| r.flops_est).collect()),
        converged_rate: records.iter().filter(|r| r.converged).count() as f64 / n,
        divergence_rate: records.iter().filter(|r| r.diverged_lambda).count() as f64 / n,
    })
}

/// Aggregates for every (SNR, estimator) pair, in SNR then config order.
pub fn aggregate_all(config: &ScenarioConfig, records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for snr_index in 0..config.snr_db.len() {
        for &est in &config.estimators {
            let group: Vec<&TrialRecord> = records.iter().filter(|r| r.snr_index == snr_index && r.estimator == est).collect();
            out.extend(aggregate(&group));
        }
    }
    out
}

/// Runs the sweep described by `config`. `threads = None` uses the global pool.
pub fn run_monte_carlo(config: &ScenarioConfig, threads: Option<usize>) -> Result<MonteCarloReport> {
    config.validate()?;
    let scenario = config.build()?;
    let jobs: Vec<(usize, usize)> = (0..config.snr_db.len()).flat_map(|s| (0..config.trials).map(move |t| (s, t))).collect();
    let work = || -> Result<Vec<Vec<TrialRecord>>> { jobs.par_iter().map(|&(s, t)| run_trial(config, &scenario, s, t)).collect() };
    let per_trial = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    let position = |e: &Estimator| config.estimators.iter().position(|x| x == e).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (r.snr_index, position(&r.estimator), r.trial));
    let aggregates = aggregate_all(config, &records);
    Ok(MonteCarloReport { config: config.clone(), records, aggregates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Target;

    fn tiny() -> ScenarioConfig {
        let mut c = ScenarioConfig::uncorrelated();
        c.trials = 3;
        c.snr_db = vec![20.0];
        c.estimators = vec![Estimator::Music, Estimator::Apn(Target::DmlO), Estimator::Apn(Target::Sml)];
        c
    }

    #[test]
    fn record_layout() {
        let rep = run_monte_carlo(&tiny(), Some(2)).unwrap();
        assert_eq!(rep.records.len(), 9);
        assert_eq!(rep.aggregates.len(), 3);
        assert!(rep.records.iter().all(|r| !r.failed()));
        assert_eq!(rep.records[0].estimator, Estimator::Music);
        assert_eq!(rep.records[3].estimator, Estimator::Apn(Target::DmlO));
    }

    #[test]
    fn aggregate_ignores_order() {
        let rep = run_monte_carlo(&tiny(), Some(1)).unwrap();
        let group: Vec<&TrialRecord> = rep.records.iter().filter(|r| r.estimator == Estimator::Apn(Target::Sml)).collect();
        let mut rev = group.clone();
        rev.reverse();
        assert_eq!(aggregate(&group), aggregate(&rev).map(|mut a| {
            a.snr_index = group[0].snr_index;
            a
        }));
    }
}
