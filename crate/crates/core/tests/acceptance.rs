//! End-to-end acceptance checks. Runs every criterion, prints one `PASS`/`FAIL`
//! line each and exits nonzero if any failed.
//!
//! `cargo test -p corrmat --test acceptance [-- FILTER]` runs the criteria whose
//! function name contains `FILTER`.

use corrmat::kernel::{FieldParams, KernelSpec};
use corrmat::matrix::{
    build_w, dense_extremal, dense_operator_norm, lanczos_extremal, operator_norm, quad_ones,
    quad_ones_sq, random_unit_vector, EigOptions, SymMatrix,
};
use corrmat::montecarlo::{run_experiment, RepRecord, RunConfig};
use corrmat::sampler::{FieldSample, PreparedSampler, RngStream, SamplerKind};
use corrmat::stats::{ks_test, median, normal_cdf, quantile_sorted, sorted_copy, MomentSummary};
use corrmat::theory::{
    exact_mean_w2, exact_var_quad, exact_var_quadform, predict, var_quad_error_bound,
};
use corrmat::Kernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::panic::catch_unwind;
use std::process::ExitCode;
use std::time::Instant;

struct Check {
    label: String,
    passed: bool,
}

fn check(label: impl Into<String>, passed: bool) -> Check {
    Check {
        label: label.into(),
        passed,
    }
}

struct Outcome {
    id: u32,
    title: String,
    checks: Vec<Check>,
}

fn outcome(id: u32, title: &str, checks: Vec<Check>) -> Outcome {
    Outcome {
        id,
        title: title.into(),
        checks,
    }
}

impl Outcome {
    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn line(&self) -> String {
        let detail: Vec<String> = self
            .checks
            .iter()
            .map(|c| format!("{}{}", if c.passed { "" } else { "!! " }, c.label))
            .collect();
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        format!(
            "criterion {:>2} [{tag}] {}: {}",
            self.id,
            self.title,
            detail.join("; ")
        )
    }
}

fn wigner_kernel() -> KernelSpec {
    // R(0,0) = eta2 / 2 = 0.5
    KernelSpec::Wigner { eta2: 1.0 }
}

fn two_tap_kernel() -> KernelSpec {
    serde_json::from_str(r#"{"type":"ma","coeffs":[[0,0,1.0],[1,0,1.0]]}"#).unwrap()
}

fn degenerate_kernel() -> KernelSpec {
    serde_json::from_str(r#"{"type":"ma","coeffs":[[0,0,1.0],[1,0,-1.0]]}"#).unwrap()
}

fn params(spec: &KernelSpec) -> FieldParams {
    FieldParams::from_spec(1.0, spec).unwrap()
}

fn run(spec: KernelSpec, sizes: Vec<usize>, replications: usize, seed: u64) -> Vec<RepRecord> {
    let config = RunConfig {
        theta: 1.0,
        kernel: spec,
        sizes,
        replications,
        seed,
        sampler: SamplerKind::Ma,
        eig_tol: 1e-10,
        level: 0.005,
    };
    let out = run_experiment(&config, None).expect("run succeeds");
    assert!(
        out.records.iter().all(|r| !r.failed),
        "eigensolver failures"
    );
    out.records
}

fn column(records: &[RepRecord], n: usize, f: impl Fn(&RepRecord) -> f64) -> Vec<f64> {
    records.iter().filter(|r| r.n == n).map(f).collect()
}

fn draw_fields(
    kind: SamplerKind,
    params: &FieldParams,
    n: usize,
    m: usize,
    seed: u64,
) -> Vec<FieldSample> {
    let sampler = PreparedSampler::new(kind, params, n).unwrap();
    (0..m as u64)
        .map(|rep| sampler.sample(&RngStream::new(seed, n, rep)))
        .collect()
}

fn limit_law_checks(
    spec: KernelSpec,
    alpha: f64,
    sigma2: f64,
    mean_tol: f64,
    var_band: (f64, f64),
) -> Vec<Check> {
    let (n, m) = (400, 1000);
    let records = run(spec.clone(), vec![n], m, 1);
    let centered = column(&records, n, |r| r.centered);
    let moments = MomentSummary::from_samples(&centered).unwrap();
    let (kernel, _) = spec.resolve().unwrap();
    let p = predict(&kernel, 1.0, n).unwrap();
    let ks = ks_test(&centered, alpha, sigma2).unwrap();
    vec![
        check(
            format!("alpha {:.6} = {alpha}", p.alpha),
            (p.alpha - alpha).abs() < 1e-12,
        ),
        check(
            format!("sigma2 {:.6} = {sigma2}", p.sigma2),
            (p.sigma2 - sigma2).abs() < 1e-12,
        ),
        check(
            format!("mean {:.4} in {alpha} +- {mean_tol}", moments.mean),
            (moments.mean - alpha).abs() <= mean_tol,
        ),
        check(
            format!(
                "variance {:.4} in [{}, {}]",
                moments.variance, var_band.0, var_band.1
            ),
            moments.variance >= var_band.0 && moments.variance <= var_band.1,
        ),
        check(
            format!("KS p {:.4} > 0.005", ks.p_value),
            ks.p_value > 0.005,
        ),
    ]
}

fn criterion_01_wigner_limit_law() -> Outcome {
    outcome(
        1,
        "Wigner limit law at n=400",
        limit_law_checks(wigner_kernel(), 0.5, 2.0, 0.15, (1.6, 2.4)),
    )
}

fn criterion_02_correlated_limit_law() -> Outcome {
    outcome(
        2,
        "two-tap MA limit law at n=400",
        limit_law_checks(two_tap_kernel(), 3.0, 16.0, 0.45, (12.8, 19.2)),
    )
}

fn criterion_03_quadratic_form_variance() -> Outcome {
    let (n, m) = (50, 2000);
    let mut checks = Vec::new();
    for (name, spec) in [("wigner", wigner_kernel()), ("two-tap", two_tap_kernel())] {
        let p = params(&spec);
        let quads: Vec<f64> = draw_fields(SamplerKind::Ma, &p, n, m, 3)
            .iter()
            .map(|f| quad_ones(&build_w(f)))
            .collect();
        let var = MomentSummary::from_samples(&quads).unwrap().variance;
        let exact = exact_var_quad(p.kernel(), n);
        let rel = var / exact - 1.0;
        checks.push(check(
            format!("{name} Var(1'W1)/exact - 1 = {rel:+.4} within 0.15"),
            rel.abs() <= 0.15,
        ));

        let sigma2 = 4.0 * p.kernel().total_sum();
        let violations: Vec<usize> = (1..=64)
            .filter(|&k| {
                let dev = (exact_var_quad(p.kernel(), k) / (k * k) as f64 - sigma2).abs();
                dev > var_quad_error_bound(p.kernel(), k)
            })
            .collect();
        checks.push(check(
            format!(
                "{name} product bound violated at {} of 64 sizes {:?}",
                violations.len(),
                &violations[..violations.len().min(4)]
            ),
            violations.is_empty(),
        ));
    }
    outcome(3, "variance of 1'W1", checks)
}

fn criterion_04_mean_of_w_squared() -> Outcome {
    let (n, m) = (200, 1000);
    let mut checks = Vec::new();
    for (name, spec) in [("wigner", wigner_kernel()), ("two-tap", two_tap_kernel())] {
        let p = params(&spec);
        let values: Vec<f64> = draw_fields(SamplerKind::Ma, &p, n, m, 4)
            .iter()
            .map(|f| quad_ones_sq(&build_w(f)))
            .collect();
        let s = MomentSummary::from_samples(&values).unwrap();
        let se = (s.variance / m as f64).sqrt();
        let exact = exact_mean_w2(p.kernel(), n);
        let z = (s.mean - exact) / se;
        checks.push(check(
            format!("{name} mean 1'W^2 1 z = {z:+.3} within 5 SE"),
            z.abs() <= 5.0,
        ));
        let pred = predict(p.kernel(), 1.0, n).unwrap();
        let target = 2.0 * pred.alpha * 1.0;
        let rel = s.mean / (n * n) as f64 / target - 1.0;
        checks.push(check(
            format!("{name} mean/n^2 vs 2 alpha theta = {rel:+.4} within 0.10"),
            rel.abs() <= 0.10,
        ));
    }
    outcome(4, "mean of 1'W^2 1", checks)
}

fn norm_quantiles(spec: &KernelSpec, n: usize, m: usize) -> Vec<f64> {
    let p = params(spec);
    let sampler = PreparedSampler::new(SamplerKind::Ma, &p, n).unwrap();
    let opts = EigOptions::default();
    let norms: Vec<f64> = (0..m as u64)
        .map(|rep| {
            let stream = RngStream::new(5, n, rep);
            let w = build_w(&sampler.sample(&stream));
            let start = random_unit_vector(n, &mut stream.aux_rng());
            operator_norm(&w, &opts, &start).unwrap().norm / (n as f64).sqrt()
        })
        .collect();
    sorted_copy(&norms)
}

fn criterion_05_operator_norm_tightness() -> Outcome {
    let m = 200;
    let mut checks = Vec::new();
    for (name, spec) in [("wigner", wigner_kernel()), ("two-tap", two_tap_kernel())] {
        let small = norm_quantiles(&spec, 100, m);
        let mid = norm_quantiles(&spec, 400, m);
        let large = norm_quantiles(&spec, 1000, m);
        let q99 = |xs: &[f64]| quantile_sorted(xs, 0.99);
        let (q_small, q_mid, q_large) = (q99(&small), q99(&mid), q99(&large));
        checks.push(check(
            format!("{name} q99 n=100/400/1000 {q_small:.4}/{q_mid:.4}/{q_large:.4}, ratio <= 1.5"),
            q_large <= 1.5 * q_small,
        ));
        if name == "wigner" {
            let med = quantile_sorted(&large, 0.5);
            checks.push(check(
                format!("wigner median n=1000 {med:.4} in [1.9, 2.1]"),
                (1.9..=2.1).contains(&med),
            ));
        }
    }
    outcome(5, "|W|/sqrt(n) stays bounded", checks)
}

fn criterion_06_expansion_remainder() -> Outcome {
    let m = 200;
    let records = run(wigner_kernel(), vec![200, 800], m, 6);
    let worst_identity = records
        .iter()
        .map(|r| {
            let scale = r
                .centered
                .abs()
                .max(r.term1.abs())
                .max(r.term2.abs())
                .max(1.0);
            (r.centered - (r.term1 + r.term2 + r.remainder)).abs() / scale
        })
        .fold(0.0, f64::max);
    let med = |n| median(&column(&records, n, |r| r.remainder.abs()));
    let (small, large) = (med(200), med(800));
    let sigma = predict(&wigner_kernel().resolve().unwrap().0, 1.0, 800)
        .unwrap()
        .sigma();
    outcome(
        6,
        "expansion remainder",
        vec![
            check(
                format!("identity residual {worst_identity:.2e} <= 1e-12"),
                worst_identity <= 1e-12,
            ),
            check(
                format!("median |rem| n=800 {large:.4} < n=200 {small:.4}"),
                large < small,
            ),
            check(
                format!(
                    "median |rem| n=800 {large:.4} < 0.1 sigma {:.4}",
                    0.1 * sigma
                ),
                large < 0.1 * sigma,
            ),
        ],
    )
}

fn criterion_07_degenerate_concentration() -> Outcome {
    let spec = degenerate_kernel();
    let pred = predict(&spec.resolve().unwrap().0, 1.0, 100).unwrap();
    let records = run(spec, vec![100, 400], 500, 7);
    let var = |n| {
        MomentSummary::from_samples(&column(&records, n, |r| r.centered))
            .unwrap()
            .variance
    };
    let (small, large) = (var(100), var(400));
    outcome(
        7,
        "degenerate kernel concentrates",
        vec![
            check(
                "predicted law degenerate",
                pred.degenerate && pred.sigma2 == 0.0,
            ),
            check(
                format!("Var n=400 {large:.5} < Var n=100 {small:.5}"),
                large < small,
            ),
        ],
    )
}

/// Per-field mean of centered products at `lag` over all in-window pairs.
fn lag_product_mean(f: &FieldSample, (u, v): (i64, i64)) -> f64 {
    let n = f.n() as i64;
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            let (k, l) = (i + u, j + v);
            if (0..n).contains(&k) && (0..n).contains(&l) {
                sum += f.centered(i as usize, j as usize) * f.centered(k as usize, l as usize);
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn criterion_08_sampler_cross_equivalence() -> Outcome {
    let (n, m) = (8, 20_000);
    let spec: KernelSpec = serde_json::from_str(
        r#"{"type":"ma","coeffs":[[0,0,1.0],[1,0,0.5],[0,1,-0.4],[1,1,0.3]]}"#,
    )
    .unwrap();
    let p = params(&spec);
    let kernel: &Kernel = p.kernel();
    let ones = vec![1.0; n];
    let exact_quad = exact_var_quadform(kernel, &ones);
    let mut checks = Vec::new();
    for kind in [
        SamplerKind::Ma,
        SamplerKind::Cholesky,
        SamplerKind::Circulant,
    ] {
        let fields = draw_fields(kind, &p, n, m, 8);
        let mut worst = 0.0f64;
        for (&lag, &r) in kernel.iter() {
            let per_field: Vec<f64> = fields.iter().map(|f| lag_product_mean(f, lag)).collect();
            let s = MomentSummary::from_samples(&per_field).unwrap();
            worst = worst.max((s.mean - r).abs() / (s.variance / m as f64).sqrt());
        }
        checks.push(check(
            format!("{kind} worst lag z {worst:.3} within 4 SE"),
            worst <= 4.0,
        ));

        let quads: Vec<f64> = fields.iter().map(|f| quad_ones(&build_w(f))).collect();
        let var = MomentSummary::from_samples(&quads).unwrap().variance;
        let z = (var - exact_quad) / (exact_quad * (2.0 / (m as f64 - 1.0)).sqrt());
        checks.push(check(
            format!("{kind} Var(1'W1) z {z:+.3} within 5 SE"),
            z.abs() <= 5.0,
        ));
    }
    outcome(8, "sampler cross-equivalence", checks)
}

fn criterion_09_eigensolver_oracle() -> Outcome {
    let n = 64;
    let opts = EigOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_lambda, mut worst_norm) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let m = SymMatrix::from_upper(n, |_, _| rng.sample(StandardNormal));
        let start = random_unit_vector(n, &mut rng);
        let scale = dense_operator_norm(&m);
        let lz = lanczos_extremal(&m, 1.0, &opts, &start).unwrap();
        worst_lambda = worst_lambda.max((lz.lambda - dense_extremal(&m, 1.0).lambda).abs() / scale);
        worst_norm =
            worst_norm.max((operator_norm(&m, &opts, &start).unwrap().norm - scale).abs() / scale);
    }
    let mut worst_rank_one = 0.0f64;
    for (size, c) in [(1usize, 1.0), (10, 1.0), (64, 2.5), (400, 1.0), (1000, 0.3)] {
        let m = SymMatrix::from_upper(size, |_, _| c);
        let start = random_unit_vector(size, &mut rng);
        let exact = c * size as f64;
        let lz = lanczos_extremal(&m, 1.0, &opts, &start).unwrap();
        worst_rank_one = worst_rank_one.max((lz.lambda - exact).abs() / exact);
    }
    outcome(
        9,
        "Lanczos against dense oracle",
        vec![
            check(
                format!("lambda1 rel err {worst_lambda:.2e} <= 1e-8"),
                worst_lambda <= 1e-8,
            ),
            check(
                format!("norm rel err {worst_norm:.2e} <= 1e-8"),
                worst_norm <= 1e-8,
            ),
            check(
                format!("rank-one rel err {worst_rank_one:.2e} <= 1e-10"),
                worst_rank_one <= 1e-10,
            ),
        ],
    )
}

fn criterion_10_stats_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let rejections = (0..200)
        .filter(|_| {
            let xs: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
            ks_test(&xs, 0.0, 1.0).unwrap().p_value < 0.05
        })
        .count();
    let tail = normal_cdf(-8.0);
    outcome(
        10,
        "KS calibration and normal CDF",
        vec![
            check(
                format!("rejections {rejections} in [2, 25]"),
                (2..=25).contains(&rejections),
            ),
            check("cdf(0) = 0.5", normal_cdf(0.0) == 0.5),
            check(
                format!("cdf(1.959963985) = {:.12}", normal_cdf(1.959963985)),
                (normal_cdf(1.959963985) - 0.975).abs() <= 1e-9,
            ),
            check(
                format!("cdf(-8) = {tail:.4e}"),
                (tail - 6.22e-16).abs() <= 1e-17,
            ),
        ],
    )
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    (
        "criterion_01_wigner_limit_law",
        criterion_01_wigner_limit_law,
    ),
    (
        "criterion_02_correlated_limit_law",
        criterion_02_correlated_limit_law,
    ),
    (
        "criterion_03_quadratic_form_variance",
        criterion_03_quadratic_form_variance,
    ),
    (
        "criterion_04_mean_of_w_squared",
        criterion_04_mean_of_w_squared,
    ),
    (
        "criterion_05_operator_norm_tightness",
        criterion_05_operator_norm_tightness,
    ),
    (
        "criterion_06_expansion_remainder",
        criterion_06_expansion_remainder,
    ),
    (
        "criterion_07_degenerate_concentration",
        criterion_07_degenerate_concentration,
    ),
    (
        "criterion_08_sampler_cross_equivalence",
        criterion_08_sampler_cross_equivalence,
    ),
    (
        "criterion_09_eigensolver_oracle",
        criterion_09_eigensolver_oracle,
    ),
    (
        "criterion_10_stats_calibration",
        criterion_10_stats_calibration,
    ),
];

fn main() -> ExitCode {
    // libtest flags such as --nocapture or --test-threads are accepted and ignored
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected = CRITERIA.iter().filter(|(name, _)| {
        filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()))
    });

    let (mut passed, mut failed) = (0, 0);
    for (name, run) in selected {
        let started = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|payload| {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            let id = name["criterion_".len()..][..2].parse().unwrap_or(0);
            outcome(id, name, vec![check(format!("panicked: {message}"), false)])
        });
        println!(
            "{}  ({:.1}s)",
            result.line(),
            started.elapsed().as_secs_f64()
        );
        if result.passed() {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    println!("\nacceptance: {passed} passed, {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
