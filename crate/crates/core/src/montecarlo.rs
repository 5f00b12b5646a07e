//! Seeded, parallel replication harness.
//!
//! Each `(n, rep)` pair owns an [`RngStream`], so records are a pure function
//! of the [`RunConfig`] regardless of how many worker threads run them. The
//! summary is computed afterwards from the ordered record list and carries one
//! [`Verdict`] per checked property.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::Arc;
use thiserror::Error;

use crate::kernel::{
    min_embed_size, validate_kernel, FieldParams, KernelError, KernelSpec, ValidityReport,
};
use crate::matrix::{
    build_a, build_w, largest_eigenvalue, operator_norm, quad_ones, quad_ones_sq,
    random_unit_vector, EigOptions,
};
use crate::sampler::{PreparedSampler, RngStream, SampleError, SamplerKind, CHOLESKY_CAP};
use crate::stats::{
    ks_test, median, qq_points, quantile_sorted, sorted_copy, KsResult, MomentSummary,
    KS_MIN_SAMPLES,
};
use crate::theory::{finite_n_oracles, predict, FiniteNOracles, Predictions};

/// Fraction of failed replications above which a run is rejected.
pub const FAILURE_BUDGET: f64 = 0.01;

fn default_eig_tol() -> f64 {
    1e-10
}

fn default_level() -> f64 {
    0.005
}

/// One experiment: a field law, the sizes to simulate and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub theta: f64,
    pub kernel: KernelSpec,
    pub sizes: Vec<usize>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default = "default_eig_tol")]
    pub eig_tol: f64,
    /// KS p-value threshold.
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("kernel is not a valid covariance (min spectral value {})", .0.min_spectral)]
    InvalidKernel(ValidityReport),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("{failed} of {total} replications failed, above the {budget} budget", budget = FAILURE_BUDGET)]
    FailureBudget {
        failed: usize,
        total: usize,
        records: Vec<RepRecord>,
    },
    #[error("records: {0}")]
    Records(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    /// Checks every precondition and returns the field parameters.
    pub fn validate(&self) -> Result<FieldParams, RunError> {
        if self.replications < 2 {
            return Err(RunError::Config(format!(
                "replications must be at least 2, got {}",
                self.replications
            )));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(RunError::Config(
                "sizes must be a nonempty list of positive integers".into(),
            ));
        }
        if !(self.eig_tol > 0.0 && self.eig_tol < 1.0) {
            return Err(RunError::Config(format!(
                "eig_tol must lie in (0, 1), got {}",
                self.eig_tol
            )));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(RunError::Config(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        let params = FieldParams::from_spec(self.theta, &self.kernel)?;
        if params.ma().is_none() {
            let report = validate_kernel(params.kernel(), min_embed_size(params.kernel()).max(64))?;
            if !report.valid {
                return Err(RunError::InvalidKernel(report));
            }
        }
        match self.sampler {
            SamplerKind::Ma if params.ma().is_none() => {
                return Err(SampleError::MissingFilter.into())
            }
            SamplerKind::Cholesky => {
                if let Some(&n) = self.sizes.iter().find(|&&n| n > CHOLESKY_CAP) {
                    return Err(SampleError::TooLarge {
                        n,
                        cap: CHOLESKY_CAP,
                    }
                    .into());
                }
            }
            _ => {}
        }
        Ok(params)
    }
}

/// Observables of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub n: usize,
    pub rep_index: u64,
    /// Stream key the replication drew from.
    pub seed: u64,
    pub lambda1: f64,
    /// `lambda1 - 2 n theta`.
    pub centered: f64,
    /// `1'W1`.
    pub quad_w: f64,
    /// `1'W^2 1`.
    pub quad_w2: f64,
    /// `|W|`.
    pub op_norm: f64,
    /// `2 theta quad_w / lambda1`.
    pub term1: f64,
    /// `2 theta quad_w2 / lambda1^2`.
    pub term2: f64,
    /// `centered - term1 - term2`.
    pub remainder: f64,
    pub eig_iterations: usize,
    pub failed: bool,
}

impl RepRecord {
    fn failed(n: usize, rep: u64, seed: u64, iterations: usize) -> Self {
        let nan = f64::NAN;
        RepRecord {
            n,
            rep_index: rep,
            seed,
            lambda1: nan,
            centered: nan,
            quad_w: nan,
            quad_w2: nan,
            op_norm: nan,
            term1: nan,
            term2: nan,
            remainder: nan,
            eig_iterations: iterations,
            failed: true,
        }
    }
}

/// Runs one replication: sample, build `A` and `W`, solve, decompose.
pub fn replicate(
    params: &FieldParams,
    sampler: &PreparedSampler,
    stream: &RngStream,
    opts: &EigOptions,
) -> RepRecord {
    let n = sampler.n();
    let theta = params.theta();
    let sample = sampler.sample(stream);
    let a = build_a(&sample);
    let w = build_w(&sample);
    let start = random_unit_vector(n, &mut stream.aux_rng());

    let top = match largest_eigenvalue(&a, opts, &start) {
        Ok(r) => r,
        Err(e) => {
            let iterations = match e {
                crate::matrix::EigError::NotConverged { iterations, .. } => iterations,
                _ => 0,
            };
            return RepRecord::failed(n, stream.rep, stream.key(), iterations);
        }
    };
    let norm = match operator_norm(&w, opts, &start) {
        Ok(r) => r,
        Err(_) => return RepRecord::failed(n, stream.rep, stream.key(), top.iterations),
    };

    let lambda1 = top.lambda;
    let centered = lambda1 - 2.0 * n as f64 * theta;
    let quad_w = quad_ones(&w);
    let quad_w2 = quad_ones_sq(&w);
    let term1 = 2.0 * theta * quad_w / lambda1;
    let term2 = 2.0 * theta * quad_w2 / (lambda1 * lambda1);
    RepRecord {
        n,
        rep_index: stream.rep,
        seed: stream.key(),
        lambda1,
        centered,
        quad_w,
        quad_w2,
        op_norm: norm.norm,
        term1,
        term2,
        remainder: centered - term1 - term2,
        eig_iterations: top.iterations + norm.iterations,
        failed: false,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RepRecord>,
    pub summary: SummaryReport,
}

/// Simulates every `(n, rep)` pair of the config and summarizes.
///
/// `threads = None` uses the global rayon pool. Output does not depend on it.
pub fn run_experiment(config: &RunConfig, threads: Option<usize>) -> Result<RunOutput, RunError> {
    let params = config.validate()?;
    let opts = EigOptions::with_tol(config.eig_tol);
    let samplers: Vec<Arc<PreparedSampler>> = config
        .sizes
        .iter()
        .map(|&n| PreparedSampler::new(config.sampler, &params, n).map(Arc::new))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, u64)> = (0..config.sizes.len())
        .flat_map(|s| (0..config.replications as u64).map(move |r| (s, r)))
        .collect();

    let work = || -> Vec<RepRecord> {
        jobs.par_iter()
            .map(|&(s, rep)| {
                let sampler = &samplers[s];
                let stream = RngStream::new(config.seed, sampler.n(), rep);
                replicate(&params, sampler, &stream, &opts)
            })
            .collect()
    };
    let records = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| RunError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let failed = records.iter().filter(|r| r.failed).count();
    if failed as f64 > FAILURE_BUDGET * records.len() as f64 {
        return Err(RunError::FailureBudget {
            failed,
            total: records.len(),
            records,
        });
    }
    let summary = summarize(config, &records)?;
    Ok(RunOutput { records, summary })
}

/// A checked property with the numbers it was decided on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub rule: String,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Verdict {
    fn within(name: &str, observed: f64, expected: f64, tolerance: f64) -> Self {
        Verdict {
            name: name.into(),
            rule: "|observed - expected| <= tolerance".into(),
            observed,
            expected,
            tolerance,
            passed: (observed - expected).abs() <= tolerance,
        }
    }

    fn at_most(name: &str, observed: f64, bound: f64) -> Self {
        Verdict {
            name: name.into(),
            rule: "observed <= expected + tolerance".into(),
            observed,
            expected: bound,
            tolerance: 0.0,
            passed: observed <= bound,
        }
    }

    fn below(name: &str, observed: f64, bound: f64) -> Self {
        Verdict {
            name: name.into(),
            rule: "observed < expected".into(),
            observed,
            expected: bound,
            tolerance: 0.0,
            passed: observed < bound,
        }
    }
}

/// Quantiles of `|W| / sqrt(n)` at one size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormQuantiles {
    pub n: usize,
    pub q50: f64,
    pub q90: f64,
    pub q99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub predictions: Predictions,
    pub oracles: FiniteNOracles,
    pub centered: MomentSummary,
    pub ks: Option<KsResult>,
    pub quad_w: MomentSummary,
    /// Empirical `Var(1'W1)` over its exact value.
    pub var_quad_ratio: f64,
    pub quad_w2: MomentSummary,
    /// Empirical mean of `1'W^2 1 / n^2`; tends to `2 alpha theta`.
    pub mean_w2_scaled: f64,
    pub op_norm: NormQuantiles,
    pub median_abs_remainder: f64,
    pub weyl_violations: usize,
    pub rayleigh_violations: usize,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub config: RunConfig,
    pub sizes: Vec<SizeSummary>,
    pub cross_size: Vec<Verdict>,
    pub all_passed: bool,
}

impl SummaryReport {
    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.sizes
            .iter()
            .flat_map(|s| s.verdicts.iter())
            .chain(self.cross_size.iter())
    }
}

/// Smallest size at which the remainder of the three-term expansion is
/// required to be below a tenth of the limiting standard deviation.
pub const REMAINDER_MIN_N: usize = 400;

/// Allowed finite-size drift of the centered mean on top of three standard
/// errors; proportional to `(|alpha| + sigma2) / (theta n)`.
fn mean_bias_allowance(pred: &Predictions, theta: f64, n: usize) -> f64 {
    (pred.alpha.abs() + pred.sigma2) / (theta * n as f64)
}

/// Quantiles of `|W|/sqrt(n)` for every size present in `records`.
pub fn norm_quantile_table(records: &[RepRecord]) -> Vec<NormQuantiles> {
    let mut sizes: Vec<usize> = records.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|n| {
            let scaled: Vec<f64> = records
                .iter()
                .filter(|r| r.n == n && !r.failed)
                .map(|r| r.op_norm / (n as f64).sqrt())
                .collect();
            let sorted = sorted_copy(&scaled);
            NormQuantiles {
                n,
                q50: quantile_sorted(&sorted, 0.5),
                q90: quantile_sorted(&sorted, 0.9),
                q99: quantile_sorted(&sorted, 0.99),
            }
        })
        .collect()
}

/// 99% quantile at the largest size at most 1.5 times that at the smallest,
/// over sizes `n >= 100`. `None` with fewer than two such sizes.
pub fn norm_tightness(table: &[NormQuantiles]) -> Option<Verdict> {
    let eligible: Vec<&NormQuantiles> = table.iter().filter(|q| q.n >= 100).collect();
    let first = eligible.iter().min_by_key(|q| q.n)?;
    let last = eligible.iter().max_by_key(|q| q.n)?;
    if first.n == last.n {
        return None;
    }
    Some(Verdict::at_most(
        "norm_tightness",
        last.q99,
        1.5 * first.q99,
    ))
}

fn summarize_size(
    config: &RunConfig,
    params: &FieldParams,
    n: usize,
    records: &[&RepRecord],
) -> Result<SizeSummary, RunError> {
    let theta = params.theta();
    let kernel = params.kernel();
    let ok: Vec<&RepRecord> = records.iter().copied().filter(|r| !r.failed).collect();
    let failures = records.len() - ok.len();
    let pred = predict(kernel, theta, n).map_err(|e| RunError::Config(e.to_string()))?;
    let oracles = finite_n_oracles(kernel, n);
    let too_few = |_| {
        RunError::Records(format!(
            "size {n} has fewer than two successful replications"
        ))
    };

    let centered: Vec<f64> = ok.iter().map(|r| r.centered).collect();
    let quad_w: Vec<f64> = ok.iter().map(|r| r.quad_w).collect();
    let quad_w2: Vec<f64> = ok.iter().map(|r| r.quad_w2).collect();
    let centered_m = MomentSummary::from_samples(&centered).map_err(too_few)?;
    let quad_w_m = MomentSummary::from_samples(&quad_w).map_err(too_few)?;
    let quad_w2_m = MomentSummary::from_samples(&quad_w2).map_err(too_few)?;
    let m = ok.len() as f64;

    let ks = if !pred.degenerate && ok.len() >= KS_MIN_SAMPLES {
        ks_test(&centered, pred.alpha, pred.sigma2).ok()
    } else {
        None
    };

    let tol = config.eig_tol;
    let weyl_violations = ok
        .iter()
        .filter(|r| {
            r.centered.abs() > r.op_norm * (1.0 + 2.0 * tol) + 8.0 * f64::EPSILON * r.lambda1.abs()
        })
        .count();
    // 1'A1 / n = quad_w / n + 2 n theta
    let rayleigh_violations = ok
        .iter()
        .filter(|r| {
            r.centered
                < r.quad_w / n as f64
                    - 2.0 * tol * r.lambda1.abs()
                    - 8.0 * f64::EPSILON * r.lambda1.abs()
        })
        .count();

    let median_abs_remainder = median(&ok.iter().map(|r| r.remainder.abs()).collect::<Vec<_>>());
    let op_norm = norm_quantile_table(&ok.iter().map(|r| (*r).clone()).collect::<Vec<_>>())
        .into_iter()
        .next()
        .expect("at least one record");

    let mut verdicts = Vec::new();
    if !pred.degenerate {
        let sigma = pred.sigma();
        verdicts.push(Verdict::within(
            "centered_mean",
            centered_m.mean,
            pred.alpha,
            3.0 * sigma / m.sqrt() + mean_bias_allowance(&pred, theta, n),
        ));
        verdicts.push(Verdict::within(
            "centered_variance_ratio",
            centered_m.variance / pred.sigma2,
            1.0,
            0.2f64.max(4.0 * (2.0 / (m - 1.0)).sqrt()),
        ));
        if let Some(ks) = &ks {
            verdicts.push(Verdict {
                name: "ks_normal_limit".into(),
                rule: "observed > expected".into(),
                observed: ks.p_value,
                expected: config.level,
                tolerance: 0.0,
                passed: ks.p_value > config.level,
            });
        }
        if n >= REMAINDER_MIN_N {
            verdicts.push(Verdict::below(
                "expansion_remainder",
                median_abs_remainder,
                0.1 * sigma,
            ));
        }
    }
    let var_quad_ratio = quad_w_m.variance / oracles.var_quad;
    if oracles.var_quad > 0.0 {
        verdicts.push(Verdict::within(
            "var_quad_ratio",
            var_quad_ratio,
            1.0,
            5.0 * (2.0 / m).sqrt(),
        ));
    }
    verdicts.push(Verdict::within(
        "mean_w2",
        quad_w2_m.mean,
        oracles.mean_w2,
        5.0 * quad_w2_m.mean_se,
    ));
    verdicts.push(Verdict::at_most(
        "weyl_bound_violations",
        weyl_violations as f64,
        0.0,
    ));
    verdicts.push(Verdict::at_most(
        "rayleigh_bound_violations",
        rayleigh_violations as f64,
        0.0,
    ));

    Ok(SizeSummary {
        n,
        replications: records.len(),
        failures,
        predictions: pred,
        oracles,
        centered: centered_m,
        ks,
        quad_w: quad_w_m,
        var_quad_ratio,
        quad_w2: quad_w2_m,
        mean_w2_scaled: quad_w2_m.mean / (n * n) as f64,
        op_norm,
        median_abs_remainder,
        weyl_violations,
        rayleigh_violations,
        verdicts,
    })
}

/// Aggregates records into per-size statistics and verdicts. Pure function of
/// `(config, records)`; record order does not matter.
pub fn summarize(config: &RunConfig, records: &[RepRecord]) -> Result<SummaryReport, RunError> {
    let params = config.validate()?;
    let mut sorted: Vec<&RepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.n, r.rep_index));
    let mut sizes: Vec<usize> = config.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();

    let per_size = sizes
        .iter()
        .map(|&n| {
            let group: Vec<&RepRecord> = sorted.iter().copied().filter(|r| r.n == n).collect();
            summarize_size(config, &params, n, &group)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut cross_size = Vec::new();
    let table: Vec<NormQuantiles> = per_size.iter().map(|s| s.op_norm).collect();
    cross_size.extend(norm_tightness(&table));
    if let (Some(small), Some(large)) = (per_size.first(), per_size.last()) {
        if small.n != large.n {
            if small.predictions.degenerate {
                cross_size.push(Verdict::below(
                    "degenerate_concentration",
                    large.centered.variance,
                    small.centered.variance,
                ));
            } else {
                cross_size.push(Verdict::below(
                    "remainder_decreasing",
                    large.median_abs_remainder,
                    small.median_abs_remainder,
                ));
            }
        }
    }

    let all_passed = per_size
        .iter()
        .flat_map(|s| &s.verdicts)
        .chain(&cross_size)
        .all(|v| v.passed);
    Ok(SummaryReport {
        config: config.clone(),
        sizes: per_size,
        cross_size,
        all_passed,
    })
}

/// Q-Q rows `(n, theoretical, empirical)` against `N(alpha, sigma2)` for every
/// non-degenerate size.
pub fn qq_table(summary: &SummaryReport, records: &[RepRecord]) -> Vec<(usize, f64, f64)> {
    let mut rows = Vec::new();
    for s in summary.sizes.iter().filter(|s| !s.predictions.degenerate) {
        let centered: Vec<f64> = records
            .iter()
            .filter(|r| r.n == s.n && !r.failed)
            .map(|r| r.centered)
            .collect();
        if let Ok(points) = qq_points(&centered, s.predictions.alpha, s.predictions.sigma2) {
            rows.extend(points.into_iter().map(|(t, e)| (s.n, t, e)));
        }
    }
    rows
}

pub const CSV_COLUMNS: [&str; 13] = [
    "n",
    "rep_index",
    "seed",
    "lambda1",
    "centered",
    "quad_w",
    "quad_w2",
    "op_norm",
    "term1",
    "term2",
    "remainder",
    "eig_iterations",
    "failed",
];

/// 17 significant digits, lossless for `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn write_records_csv<W: Write>(records: &[RepRecord], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| RunError::Records(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.rep_index.to_string(),
            r.seed.to_string(),
            fmt_f64(r.lambda1),
            fmt_f64(r.centered),
            fmt_f64(r.quad_w),
            fmt_f64(r.quad_w2),
            fmt_f64(r.op_norm),
            fmt_f64(r.term1),
            fmt_f64(r.term2),
            fmt_f64(r.remainder),
            r.eig_iterations.to_string(),
            (r.failed as u8).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<RepRecord>, RunError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| RunError::Records(e.to_string()))?
        .clone();
    if headers.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(RunError::Records(format!(
            "unexpected header: {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| RunError::Records(e.to_string()))?;
        let bad =
            |col: &str| RunError::Records(format!("row {}: bad value in column {col}", line + 1));
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad(CSV_COLUMNS[i]));
        let u = |i: usize| row[i].parse::<u64>().map_err(|_| bad(CSV_COLUMNS[i]));
        records.push(RepRecord {
            n: u(0)? as usize,
            rep_index: u(1)?,
            seed: u(2)?,
            lambda1: f(3)?,
            centered: f(4)?,
            quad_w: f(5)?,
            quad_w2: f(6)?,
            op_norm: f(7)?,
            term1: f(8)?,
            term2: f(9)?,
            remainder: f(10)?,
            eig_iterations: u(11)? as usize,
            failed: match &row[12] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("failed")),
            },
        });
    }
    Ok(records)
}
