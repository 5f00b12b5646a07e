//! Stationary covariance kernels on the integer lattice.
//!
//! A [`Kernel`] stores `R(u,v) = Cov(Z(0,0), Z(u,v))` on a finite support.
//! Kernels come either from a moving-average [`MaFilter`], which makes them
//! positive semidefinite by construction, or from an explicit table that has
//! to pass [`validate_kernel`] before it can be sampled.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::spectral::{torus_spectrum, Fft2};

/// A lattice lag `(u, v)`.
pub type Lag = (i64, i64);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("empty MA filter")]
    EmptyFilter,
    #[error("empty kernel")]
    EmptyKernel,
    #[error("non-finite value {value} at lag ({}, {})", .lag.0, .lag.1)]
    NonFinite { lag: Lag, value: f64 },
    #[error("duplicate entry for lag ({}, {})", .0.0, .0.1)]
    DuplicateLag(Lag),
    #[error(
        "kernel is not symmetric: R({}, {}) = {} but R({}, {}) = {}",
        .lag.0, .lag.1, .value, -.lag.0, -.lag.1, .mate
    )]
    Asymmetric { lag: Lag, value: f64, mate: f64 },
    #[error("negative origin variance R(0,0) = {0}")]
    NegativeOrigin(f64),
    #[error("wigner kernel needs eta2 > 0, got {0}")]
    BadEta2(f64),
    #[error("theta must be a finite positive number, got {0}")]
    BadTheta(f64),
    #[error("embed size {size} must be a power of two and at least {min}")]
    BadEmbedSize { size: usize, min: usize },
}

/// Axis-aligned bounding box of a finite lag set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportBox {
    pub u_min: i64,
    pub u_max: i64,
    pub v_min: i64,
    pub v_max: i64,
}

impl SupportBox {
    fn of<'a>(lags: impl Iterator<Item = &'a Lag>) -> Option<Self> {
        lags.fold(None, |acc, &(u, v)| {
            Some(match acc {
                None => SupportBox {
                    u_min: u,
                    u_max: u,
                    v_min: v,
                    v_max: v,
                },
                Some(b) => SupportBox {
                    u_min: b.u_min.min(u),
                    u_max: b.u_max.max(u),
                    v_min: b.v_min.min(v),
                    v_max: b.v_max.max(v),
                },
            })
        })
    }

    /// Largest coordinate magnitude `max(|u|, |v|)` over the box.
    pub fn radius(&self) -> usize {
        [self.u_min, self.u_max, self.v_min, self.v_max]
            .iter()
            .map(|x| x.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }
}

fn collect_finite(
    entries: impl IntoIterator<Item = (Lag, f64)>,
) -> Result<BTreeMap<Lag, f64>, KernelError> {
    let mut map = BTreeMap::new();
    for (lag, value) in entries {
        if !value.is_finite() {
            return Err(KernelError::NonFinite { lag, value });
        }
        if map.insert(lag, value).is_some() {
            return Err(KernelError::DuplicateLag(lag));
        }
    }
    Ok(map)
}

/// Moving-average filter `a(s,t)`; the field is `Z = theta + a * xi` for an
/// iid standard normal grid `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaFilter {
    coeffs: BTreeMap<Lag, f64>,
    support: SupportBox,
}

impl MaFilter {
    pub fn new(coeffs: impl IntoIterator<Item = (Lag, f64)>) -> Result<Self, KernelError> {
        let coeffs = collect_finite(coeffs)?;
        if coeffs.values().all(|&a| a == 0.0) {
            return Err(KernelError::EmptyFilter);
        }
        let support = SupportBox::of(coeffs.keys()).ok_or(KernelError::EmptyFilter)?;
        Ok(Self { coeffs, support })
    }

    pub fn coeffs(&self) -> &BTreeMap<Lag, f64> {
        &self.coeffs
    }

    pub fn support(&self) -> SupportBox {
        self.support
    }

    /// `sum a(s,t)`; the induced kernel has total sum equal to its square.
    pub fn coeff_sum(&self) -> f64 {
        self.coeffs.values().sum()
    }

    pub fn to_triples(&self) -> Vec<(i64, i64, f64)> {
        self.coeffs.iter().map(|(&(s, t), &a)| (s, t, a)).collect()
    }
}

/// A finitely supported stationary covariance kernel with `R(u,v) = R(-u,-v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    values: BTreeMap<Lag, f64>,
    support: SupportBox,
    abs_sum: f64,
    total_sum: f64,
}

impl Kernel {
    fn from_symmetric(values: BTreeMap<Lag, f64>) -> Result<Self, KernelError> {
        let support = SupportBox::of(values.keys()).ok_or(KernelError::EmptyKernel)?;
        let abs_sum = values.values().map(|r| r.abs()).sum();
        let total_sum = values.values().sum();
        let kernel = Self {
            values,
            support,
            abs_sum,
            total_sum,
        };
        if kernel.origin_value() < 0.0 {
            return Err(KernelError::NegativeOrigin(kernel.origin_value()));
        }
        Ok(kernel)
    }

    /// `R(u,v)`, zero off the support.
    pub fn get(&self, lag: Lag) -> f64 {
        self.values.get(&lag).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Lag, &f64)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support(&self) -> SupportBox {
        self.support
    }

    pub fn radius(&self) -> usize {
        self.support.radius()
    }

    /// `sum |R(u,v)|`.
    pub fn abs_sum(&self) -> f64 {
        self.abs_sum
    }

    /// `sum R(u,v)`.
    pub fn total_sum(&self) -> f64 {
        self.total_sum
    }

    /// `R(0,0)`, the entry variance of the field.
    pub fn origin_value(&self) -> f64 {
        self.get((0, 0))
    }

    /// Serializable explicit-table form of this kernel.
    pub fn to_spec(&self) -> KernelSpec {
        KernelSpec::Explicit {
            coeffs: self.values.iter().map(|(&(u, v), &r)| (u, v, r)).collect(),
        }
    }
}

/// `R(u,v) = sum_{s,t} a(s,t) a(s+u, t+v)`.
pub fn kernel_from_ma(filter: &MaFilter) -> Kernel {
    let coeffs: Vec<(Lag, f64)> = filter.coeffs.iter().map(|(&l, &a)| (l, a)).collect();
    let mut values = BTreeMap::new();
    for &((s1, t1), a1) in &coeffs {
        for &((s2, t2), a2) in &coeffs {
            let lag = (s2 - s1, t2 - t1);
            // Accumulate on the canonical half only, then mirror, so the
            // (u,v) / (-u,-v) pair is bitwise equal.
            if lag >= (0, 0) {
                *values.entry(lag).or_insert(0.0) += a1 * a2;
            }
        }
    }
    let mirrored: Vec<(Lag, f64)> = values
        .iter()
        .filter(|(&lag, _)| lag != (0, 0))
        .map(|(&(u, v), &r)| ((-u, -v), r))
        .collect();
    values.extend(mirrored);
    Kernel::from_symmetric(values).expect("MA filters are nonempty and induce R(0,0) > 0")
}

/// Kernel from an explicit table. Paired entries must be exactly equal.
pub fn kernel_explicit(
    entries: impl IntoIterator<Item = (Lag, f64)>,
) -> Result<Kernel, KernelError> {
    let values = collect_finite(entries)?;
    if values.is_empty() {
        return Err(KernelError::EmptyKernel);
    }
    for (&(u, v), &r) in &values {
        let mate = values.get(&(-u, -v)).copied();
        if mate != Some(r) {
            return Err(KernelError::Asymmetric {
                lag: (u, v),
                value: r,
                mate: mate.unwrap_or(0.0),
            });
        }
    }
    Kernel::from_symmetric(values)
}

/// Outcome of wrapping a kernel onto a torus and inspecting its spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub embed_size: usize,
    pub min_spectral: f64,
    pub max_spectral: f64,
    pub tol_psd: f64,
    pub negative_modes: usize,
    pub valid: bool,
}

/// Relative tolerance, scaled by `abs_sum`, under which negative torus
/// eigenvalues count as rounding noise.
pub const PSD_REL_TOL: f64 = 1e-9;

pub fn psd_tolerance(kernel: &Kernel) -> f64 {
    PSD_REL_TOL * kernel.abs_sum()
}

/// Smallest admissible embedding side for `kernel`: a power of two at least
/// `2 * radius + 2`.
pub fn min_embed_size(kernel: &Kernel) -> usize {
    (2 * kernel.radius() + 2).next_power_of_two()
}

pub fn validate_kernel(kernel: &Kernel, embed_size: usize) -> Result<ValidityReport, KernelError> {
    let min = 2 * kernel.radius() + 2;
    if embed_size < min || !embed_size.is_power_of_two() {
        return Err(KernelError::BadEmbedSize {
            size: embed_size,
            min,
        });
    }
    let spectrum = torus_spectrum(kernel, &Fft2::new(embed_size));
    let tol_psd = psd_tolerance(kernel);
    let min_spectral = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
    let max_spectral = spectrum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let negative_modes = spectrum.iter().filter(|&&x| x < 0.0).count();
    Ok(ValidityReport {
        embed_size,
        min_spectral,
        max_spectral,
        tol_psd,
        negative_modes,
        valid: min_spectral >= -tol_psd,
    })
}

/// Drops the smallest symmetric pairs while the removed absolute mass stays
/// within `eps`. The origin is never removed.
pub fn truncate_kernel(kernel: &Kernel, eps: f64) -> Kernel {
    let mut pairs: Vec<(Lag, f64)> = kernel
        .values
        .iter()
        .filter(|(&lag, _)| lag > (0, 0))
        .map(|(&lag, &r)| (lag, 2.0 * r.abs()))
        .collect();
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut values = kernel.values.clone();
    let mut removed = 0.0;
    for ((u, v), mass) in pairs {
        if removed + mass > eps {
            break;
        }
        removed += mass;
        values.remove(&(u, v));
        values.remove(&(-u, -v));
    }
    if values.is_empty() {
        // only reachable when the origin was absent and everything else fit under eps
        values.insert((0, 0), 0.0);
    }
    Kernel::from_symmetric(values).expect("truncation keeps a valid kernel")
}

/// JSON description of a kernel as accepted by the CLI and config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Ma { coeffs: Vec<(i64, i64, f64)> },
    Explicit { coeffs: Vec<(i64, i64, f64)> },
    Wigner { eta2: f64 },
}

impl KernelSpec {
    /// Builds the kernel and, when the description has a moving-average form, the filter.
    pub fn resolve(&self) -> Result<(Kernel, Option<MaFilter>), KernelError> {
        match self {
            KernelSpec::Ma { coeffs } => {
                let filter = MaFilter::new(coeffs.iter().map(|&(s, t, a)| ((s, t), a)))?;
                Ok((kernel_from_ma(&filter), Some(filter)))
            }
            KernelSpec::Explicit { coeffs } => Ok((
                kernel_explicit(coeffs.iter().map(|&(u, v, r)| ((u, v), r)))?,
                None,
            )),
            KernelSpec::Wigner { eta2 } => {
                if !(eta2.is_finite() && *eta2 > 0.0) {
                    return Err(KernelError::BadEta2(*eta2));
                }
                let kernel = kernel_explicit([((0, 0), eta2 / 2.0)])?;
                let filter = MaFilter::new([((0, 0), (eta2 / 2.0).sqrt())])?;
                Ok((kernel, Some(filter)))
            }
        }
    }
}

/// Everything the samplers need: the mean, the kernel, and the MA filter when
/// one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    theta: f64,
    kernel: Kernel,
    ma: Option<MaFilter>,
}

impl FieldParams {
    pub fn new(theta: f64, kernel: Kernel, ma: Option<MaFilter>) -> Result<Self, KernelError> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(KernelError::BadTheta(theta));
        }
        Ok(Self { theta, kernel, ma })
    }

    pub fn from_ma(theta: f64, filter: MaFilter) -> Result<Self, KernelError> {
        Self::new(theta, kernel_from_ma(&filter), Some(filter))
    }

    pub fn from_spec(theta: f64, spec: &KernelSpec) -> Result<Self, KernelError> {
        let (kernel, ma) = spec.resolve()?;
        Self::new(theta, kernel, ma)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn ma(&self) -> Option<&MaFilter> {
        self.ma.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force double sum over the filter support for every lag in the
    /// difference box.
    fn brute_kernel(filter: &[(Lag, f64)]) -> BTreeMap<Lag, f64> {
        let get = |s: i64, t: i64| {
            filter
                .iter()
                .find(|(l, _)| *l == (s, t))
                .map(|(_, a)| *a)
                .unwrap_or(0.0)
        };
        let mut out = BTreeMap::new();
        for u in -4..=4 {
            for v in -4..=4 {
                let mut acc = 0.0;
                for s in -4..=4 {
                    for t in -4..=4 {
                        acc += get(s, t) * get(s + u, t + v);
                    }
                }
                if acc != 0.0 {
                    out.insert((u, v), acc);
                }
            }
        }
        out
    }

    fn naive_min_spectrum(kernel: &Kernel, m: usize) -> f64 {
        let mut min = f64::INFINITY;
        for p in 0..m {
            for q in 0..m {
                let mut acc = 0.0;
                for (&(u, v), &r) in kernel.iter() {
                    let phase = 2.0 * std::f64::consts::PI * ((p as i64 * u + q as i64 * v) as f64)
                        / m as f64;
                    acc += r * phase.cos();
                }
                min = min.min(acc);
            }
        }
        min
    }

    #[test]
    fn delta_filter() {
        let k = kernel_from_ma(&MaFilter::new([((0, 0), 1.0)]).unwrap());
        assert_eq!(k.len(), 1);
        assert_eq!(k.get((0, 0)), 1.0);
        assert_eq!(k.abs_sum(), 1.0);
        assert_eq!(k.total_sum(), 1.0);
    }

    #[test]
    fn two_tap_filters_match_brute_force() {
        for taps in [
            [((0, 0), 1.0), ((1, 0), 1.0)],
            [((0, 0), 1.0), ((1, 0), -1.0)],
        ] {
            let k = kernel_from_ma(&MaFilter::new(taps).unwrap());
            let oracle = brute_kernel(&taps);
            for (lag, r) in &oracle {
                assert_eq!(k.get(*lag), *r, "lag {lag:?}");
            }
            assert_eq!(k.len(), oracle.len());
        }
        let k = kernel_from_ma(&MaFilter::new([((0, 0), 1.0), ((1, 0), 1.0)]).unwrap());
        assert_eq!(
            (k.get((0, 0)), k.get((1, 0)), k.get((-1, 0))),
            (2.0, 1.0, 1.0)
        );
        assert_eq!((k.abs_sum(), k.total_sum()), (4.0, 4.0));

        let k = kernel_from_ma(&MaFilter::new([((0, 0), 1.0), ((1, 0), -1.0)]).unwrap());
        assert_eq!(
            (k.get((0, 0)), k.get((1, 0)), k.get((-1, 0))),
            (2.0, -1.0, -1.0)
        );
        assert_eq!(k.total_sum(), 0.0);
    }

    #[test]
    fn empty_filter_rejected() {
        assert_eq!(MaFilter::new([]).unwrap_err(), KernelError::EmptyFilter);
        assert_eq!(
            MaFilter::new([((0, 0), 0.0)]).unwrap_err(),
            KernelError::EmptyFilter
        );
        assert_eq!(KernelError::EmptyFilter.to_string(), "empty MA filter");
    }

    #[test]
    fn explicit_kernels() {
        let k = kernel_explicit([((0, 0), 0.5)]).unwrap();
        assert_eq!((k.abs_sum(), k.total_sum()), (0.5, 0.5));

        let err = kernel_explicit([((0, 0), 1.0), ((1, 1), 0.5)]).unwrap_err();
        assert!(matches!(err, KernelError::Asymmetric { lag: (1, 1), .. }));
        assert!(err.to_string().contains("R(-1, -1)"));

        let k = kernel_explicit([((0, 0), 1.0), ((1, 1), 0.5), ((-1, -1), 0.5)]).unwrap();
        assert_eq!((k.abs_sum(), k.total_sum()), (2.0, 2.0));

        assert!(matches!(
            kernel_explicit([((0, 0), f64::NAN)]).unwrap_err(),
            KernelError::NonFinite { .. }
        ));
        assert!(kernel_explicit([((0, 0), 1.0), ((2, 0), 0.1), ((-2, 0), 0.1000001)]).is_err());
    }

    #[test]
    fn validity_examples() {
        let wigner = kernel_explicit([((0, 0), 0.5)]).unwrap();
        let rep = validate_kernel(&wigner, 16).unwrap();
        assert!(rep.valid);
        assert_eq!(rep.min_spectral, 0.5);
        assert_eq!(rep.max_spectral, 0.5);

        let ma = kernel_from_ma(&MaFilter::new([((0, 0), 1.0), ((1, 0), 1.0)]).unwrap());
        let rep = validate_kernel(&ma, 16).unwrap();
        assert!(rep.valid);
        assert!((rep.min_spectral - naive_min_spectrum(&ma, 16)).abs() < 1e-12);

        let bad = kernel_explicit([((0, 0), 1.0), ((1, 0), 0.8), ((-1, 0), 0.8)]).unwrap();
        let rep = validate_kernel(&bad, 16).unwrap();
        assert!(!rep.valid);
        assert!((rep.min_spectral - naive_min_spectrum(&bad, 16)).abs() < 1e-12);
        assert!((rep.min_spectral + 0.6).abs() < 1e-12);
    }

    #[test]
    fn embed_size_precondition() {
        let k = kernel_explicit([((0, 0), 1.0), ((3, 0), 0.1), ((-3, 0), 0.1)]).unwrap();
        assert!(validate_kernel(&k, 4).is_err());
        assert!(validate_kernel(&k, 12).is_err());
        assert!(validate_kernel(&k, 8).is_ok());
        assert_eq!(min_embed_size(&k), 8);
    }

    #[test]
    fn truncation_examples() {
        let ma = kernel_from_ma(&MaFilter::new([((0, 0), 1.0), ((1, 2), 0.3)]).unwrap());
        assert_eq!(truncate_kernel(&ma, 0.0), ma);

        let k = kernel_explicit([((0, 0), 1.0), ((5, 5), 1e-12), ((-5, -5), 1e-12)]).unwrap();
        let t = truncate_kernel(&k, 1e-10);
        assert_eq!(t, kernel_explicit([((0, 0), 1.0)]).unwrap());

        let wigner = kernel_explicit([((0, 0), 0.5)]).unwrap();
        assert_eq!(truncate_kernel(&wigner, 1.0), wigner);
    }

    #[test]
    fn spec_json_forms() {
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"wigner","eta2":1.0}"#).unwrap();
        let (k, ma) = spec.resolve().unwrap();
        assert_eq!(k.get((0, 0)), 0.5);
        assert!(ma.is_some());

        let spec: KernelSpec =
            serde_json::from_str(r#"{"type":"ma","coeffs":[[0,0,1.0],[1,0,1.0]]}"#).unwrap();
        assert_eq!(spec.resolve().unwrap().0.total_sum(), 4.0);

        assert!(
            serde_json::from_str::<KernelSpec>(r#"{"type":"wigner","eta2":1.0,"x":1}"#).is_err()
        );
        assert!(serde_json::from_str::<KernelSpec>(r#"{"type":"other"}"#).is_err());
        let spec: KernelSpec = serde_json::from_str(r#"{"type":"wigner","eta2":-1.0}"#).unwrap();
        assert!(spec.resolve().is_err());
    }

    #[test]
    fn theta_must_be_positive() {
        let k = kernel_explicit([((0, 0), 0.5)]).unwrap();
        assert!(FieldParams::new(0.0, k.clone(), None).is_err());
        assert!(FieldParams::new(f64::NAN, k.clone(), None).is_err());
        assert!(FieldParams::new(0.1, k, None).is_ok());
    }

    fn arb_filter() -> impl Strategy<Value = MaFilter> {
        prop::collection::btree_map((-3i64..=3, -3i64..=3), -2.0f64..2.0, 1..6)
            .prop_filter("some nonzero tap", |m| m.values().any(|&a| a != 0.0))
            .prop_map(|m| MaFilter::new(m).unwrap())
    }

    proptest! {
        #[test]
        fn ma_total_sum_is_square_of_coeff_sum(filter in arb_filter()) {
            let k = kernel_from_ma(&filter);
            let s = filter.coeff_sum();
            prop_assert!((k.total_sum() - s * s).abs() <= 1e-12 * k.abs_sum().max(1.0));
            prop_assert!(k.abs_sum() >= k.total_sum().abs());
            for (&(u, v), &r) in k.iter() {
                prop_assert_eq!(k.get((-u, -v)), r);
            }
        }

        #[test]
        fn ma_kernels_always_embeddable(filter in arb_filter(), exp in 4u32..7) {
            let k = kernel_from_ma(&filter);
            let rep = validate_kernel(&k, 1usize << exp).unwrap();
            prop_assert!(rep.valid, "min spectral {}", rep.min_spectral);
        }

        #[test]
        fn truncation_keeps_symmetry_and_is_monotone(filter in arb_filter(), e1 in 0.0f64..3.0, e2 in 0.0f64..3.0) {
            let k = kernel_from_ma(&filter);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = truncate_kernel(&k, lo);
            let b = truncate_kernel(&k, hi);
            prop_assert!(b.abs_sum() <= a.abs_sum());
            prop_assert!(k.abs_sum() - a.abs_sum() <= lo + 1e-12);
            prop_assert_eq!(a.origin_value(), k.origin_value());
            for (&(u, v), &r) in b.iter() {
                prop_assert_eq!(b.get((-u, -v)), r);
            }
        }

        #[test]
        fn explicit_serialization_round_trip(filter in arb_filter()) {
            let k = kernel_from_ma(&filter);
            let json = serde_json::to_string(&k.to_spec()).unwrap();
            let spec: KernelSpec = serde_json::from_str(&json).unwrap();
            let (back, ma) = spec.resolve().unwrap();
            prop_assert!(ma.is_none());
            prop_assert_eq!(back, k);
        }
    }
}
