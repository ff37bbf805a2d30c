//! Random architecture sampling and population statistics.
//!
//! Configurations are drawn uniformly per coordinate (stage count from
//! `n_choices`, each depth from [1, max_depth], each width from
//! [1, max_width]) on top of a template that fixes stem, block,
//! activation and head. Populations are summarized by empirical
//! distribution functions over errors and by the correlation between
//! WD ratio and error.

use crate::archspec::{count_params, wd_ratio, ArchitectureSpec, SpecError, StageSpec, WdRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("invalid sample bounds: {0}")]
    InvalidBounds(String),
    #[error("no configuration satisfied the parameter budget after {0} consecutive rejections")]
    BudgetInfeasible(usize),
    #[error("error value {0} outside [0, 1]")]
    Range(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// Bounds for uniform configuration sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBounds {
    pub n_choices: Vec<usize>,
    pub max_depth: usize,
    pub max_width: usize,
    /// Inclusive total-parameter window; draws outside are rejected and
    /// resampled.
    pub param_budget: Option<(u64, u64)>,
}

impl SampleBounds {
    /// The published sampling bounds: n in {3,4,5,6}, depths up to 60,
    /// widths up to 1000.
    pub fn defaults() -> Self {
        SampleBounds {
            n_choices: vec![3, 4, 5, 6],
            max_depth: 60,
            max_width: 1000,
            param_budget: None,
        }
    }

    fn check(&self) -> Result<(), DesignError> {
        if self.n_choices.is_empty() {
            return Err(DesignError::InvalidBounds("n_choices is empty".into()));
        }
        if self.n_choices.iter().any(|&n| n < 2) {
            return Err(DesignError::InvalidBounds(
                "stage counts below 2 cannot carry a WD ratio".into(),
            ));
        }
        if self.max_depth < 1 || self.max_width < 1 {
            return Err(DesignError::InvalidBounds(
                "max_depth and max_width must be >= 1".into(),
            ));
        }
        if let Some((lo, hi)) = self.param_budget {
            if lo > hi {
                return Err(DesignError::InvalidBounds(format!(
                    "parameter budget lo {lo} > hi {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// One sampled configuration with its analytic statistics; `error` is
/// populated later from a measured run (or supplied externally).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSample {
    pub spec: ArchitectureSpec,
    pub wd: f64,
    pub params: u64,
    pub error: Option<f64>,
}

const MAX_REJECTIONS: usize = 10_000;

/// Draws one configuration; deterministic for a fixed seed.
pub fn sample_config(
    seed: u64,
    bounds: &SampleBounds,
    template: &ArchitectureSpec,
) -> Result<DesignSample, DesignError> {
    bounds.check()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rejections = 0;
    loop {
        let n = bounds.n_choices[rng.random_range(0..bounds.n_choices.len())];
        let stages: Vec<StageSpec> = (0..n)
            .map(|_| {
                StageSpec::new(
                    rng.random_range(1..=bounds.max_depth),
                    rng.random_range(1..=bounds.max_width),
                )
            })
            .collect();
        let mut spec = template.clone();
        spec.stages = stages;
        spec.name = format!("{}-sample-{seed}", template.name);
        let params = count_params(&spec, 3)?;
        if let Some((lo, hi)) = bounds.param_budget {
            if params < lo || params > hi {
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(DesignError::BudgetInfeasible(rejections));
                }
                continue;
            }
        }
        let wd = wd_ratio(&spec)?;
        return Ok(DesignSample {
            spec,
            wd,
            params,
            error: None,
        });
    }
}

/// Empirical distribution function: sorted error values with cumulative
/// fractions (k+1)/N.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl EdfCurve {
    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Fraction of observations at or below `x` (right-continuous step).
    pub fn eval(&self, x: f64) -> f64 {
        match self.xs.iter().rposition(|&v| v <= x) {
            Some(i) => self.ys[i],
            None => 0.0,
        }
    }
}

/// Builds the EDF of a list of error values in [0, 1].
pub fn compute_edf(errors: &[f64]) -> Result<EdfCurve, DesignError> {
    if let Some(&bad) = errors.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DesignError::Range(bad));
    }
    let mut xs = errors.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("errors are finite"));
    let n = xs.len();
    let ys = (0..n).map(|k| (k + 1) as f64 / n as f64).collect();
    Ok(EdfCurve { xs, ys })
}

/// Sample Pearson correlation of two equally long, nonconstant series.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, DesignError> {
    if xs.len() != ys.len() {
        return Err(DesignError::DegenerateInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(DesignError::DegenerateInput(
            "need at least 2 points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(DesignError::DegenerateInput("constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Splits samples into (inside, outside) by WD-ratio range membership.
pub fn partition_by_range(
    samples: Vec<DesignSample>,
    range: WdRange,
) -> (Vec<DesignSample>, Vec<DesignSample>) {
    samples.into_iter().partition(|s| range.contains(s.wd))
}

/// Reporting helper behind the optimal-range methodology: keep the
/// lowest-error `top_frac` of the population and return the [min, max]
/// interval of their WD ratios. Samples without errors are ignored.
pub fn derive_range(samples: &[DesignSample], top_frac: f64) -> Option<WdRange> {
    let mut scored: Vec<(&DesignSample, f64)> = samples
        .iter()
        .filter_map(|s| s.error.map(|e| (s, e)))
        .collect();
    if scored.is_empty() || !(0.0..=1.0).contains(&top_frac) || top_frac == 0.0 {
        return None;
    }
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("errors are finite"));
    let keep = ((scored.len() as f64 * top_frac).ceil() as usize).max(1);
    let survivors = &scored[..keep.min(scored.len())];
    let lo = survivors
        .iter()
        .map(|(s, _)| s.wd)
        .fold(f64::INFINITY, f64::min);
    let hi = survivors
        .iter()
        .map(|(s, _)| s.wd)
        .fold(f64::NEG_INFINITY, f64::max);
    WdRange::new(lo, hi).ok()
}

/// CSV table of samples: one row per configuration, depth/width lists
/// space-joined inside their fields.
pub fn samples_to_csv(samples: &[DesignSample]) -> String {
    let mut out = String::from("name,n,depths,widths,wd,params,error\n");
    for s in samples {
        let join = |xs: Vec<usize>| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.spec.name,
            s.spec.stages.len(),
            join(s.spec.depths()),
            join(s.spec.widths()),
            s.wd,
            s.params,
            s.error.map(|e| e.to_string()).unwrap_or_default(),
        ));
    }
    out
}

pub fn edf_to_csv(curve: &EdfCurve) -> String {
    let mut out = String::from("x,y\n");
    for (x, y) in curve.xs.iter().zip(&curve.ys) {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::builtin_spec;
    use proptest::prelude::*;

    fn template() -> ArchitectureSpec {
        builtin_spec("ResNet-50").unwrap()
    }

    #[test]
    fn samples_respect_published_bounds_and_validate() {
        let bounds = SampleBounds::defaults();
        for seed in 0..50 {
            let s = sample_config(seed, &bounds, &template()).unwrap();
            let n = s.spec.stages.len();
            assert!((3..=6).contains(&n));
            for st in &s.spec.stages {
                assert!(st.depth >= 1 && st.depth <= 60);
                assert!(st.width >= 1 && st.width <= 1000);
            }
            assert!(crate::archspec::validate(&s.spec).is_empty());
            assert_eq!(s.params, count_params(&s.spec, 3).unwrap());
        }
    }

    #[test]
    fn degenerate_bounds_pin_the_unique_spec() {
        let bounds = SampleBounds {
            n_choices: vec![3],
            max_depth: 1,
            max_width: 1,
            param_budget: None,
        };
        let s = sample_config(123, &bounds, &template()).unwrap();
        assert_eq!(s.spec.depths(), vec![1, 1, 1]);
        assert_eq!(s.spec.widths(), vec![1, 1, 1]);
        assert_eq!(s.wd, 1.0);
    }

    #[test]
    fn same_seed_reproduces_the_sample() {
        let bounds = SampleBounds::defaults();
        let a = sample_config(7, &bounds, &template()).unwrap();
        let b = sample_config(7, &bounds, &template()).unwrap();
        assert_eq!(a, b);
        let c = sample_config(8, &bounds, &template()).unwrap();
        assert_ne!(a.spec.stages, c.spec.stages);
    }

    #[test]
    fn impossible_budget_reports_infeasible() {
        let bounds = SampleBounds {
            param_budget: Some((1, 2)),
            ..SampleBounds::defaults()
        };
        assert_eq!(
            sample_config(0, &bounds, &template()).unwrap_err(),
            DesignError::BudgetInfeasible(10_000)
        );
    }

    #[test]
    fn budget_window_is_honored() {
        let bounds = SampleBounds {
            n_choices: vec![3, 4],
            max_depth: 8,
            max_width: 64,
            param_budget: Some((500_000, 30_000_000)),
        };
        for seed in 0..10 {
            let s = sample_config(seed, &bounds, &template()).unwrap();
            assert!((500_000..=30_000_000).contains(&s.params), "{}", s.params);
        }
    }

    #[test]
    fn edf_counts_fractions() {
        let curve = compute_edf(&[0.3, 0.1, 0.2]).unwrap();
        assert_eq!(curve.xs, vec![0.1, 0.2, 0.3]);
        assert!((curve.eval(0.2) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(curve.eval(0.05), 0.0);
        assert_eq!(curve.eval(1.0), 1.0);

        let single = compute_edf(&[0.5]).unwrap();
        assert_eq!(single.xs, vec![0.5]);
        assert_eq!(single.ys, vec![1.0]);

        assert!(compute_edf(&[]).unwrap().is_empty());
        assert_eq!(compute_edf(&[1.5]).unwrap_err(), DesignError::Range(1.5));
    }

    #[test]
    fn edf_of_uniform_draws_tracks_the_diagonal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(20);
        let draws: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let curve = compute_edf(&draws).unwrap();
        // Kolmogorov-Smirnov: P(sup |EDF - x| >= 0.2) < 0.1% at n = 100
        let max_gap = curve
            .xs
            .iter()
            .zip(&curve.ys)
            .map(|(&x, &y)| (y - x).abs())
            .fold(0.0, f64::max);
        assert!(max_gap < 0.2, "KS statistic {max_gap}");
    }

    #[test]
    fn pearson_exact_lines() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let neg: Vec<f64> = xs.iter().map(|x| -2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_longhand_formula() {
        let xs = [1.0, 2.0, 4.0, 5.0, 8.0];
        let ys = [5.0, 4.0, 7.0, 9.0, 8.0];
        // longhand: r = (n*sxy - sx*sy) / sqrt((n*sxx - sx^2)(n*syy - sy^2))
        let n = 5.0;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let sxx: f64 = xs.iter().map(|a| a * a).sum();
        let syy: f64 = ys.iter().map(|a| a * a).sum();
        let longhand =
            (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((pearson(&xs, &ys).unwrap() - longhand).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_constant_series() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(DesignError::DegenerateInput(_))
        ));
    }

    fn sample_with(wd: f64, error: Option<f64>) -> DesignSample {
        DesignSample {
            spec: template(),
            wd,
            params: 0,
            error,
        }
    }

    #[test]
    fn partition_splits_by_range() {
        let samples = vec![sample_with(8.0, None), sample_with(20.0, None)];
        let (inside, outside) = partition_by_range(samples, WdRange::OPTIMAL);
        assert_eq!(inside.len(), 1);
        assert_eq!(inside[0].wd, 8.0);
        assert_eq!(outside[0].wd, 20.0);

        let (inside, outside) = partition_by_range(Vec::new(), WdRange::OPTIMAL);
        assert!(inside.is_empty() && outside.is_empty());

        let all = WdRange::new(0.0, f64::INFINITY).unwrap();
        let (inside, outside) =
            partition_by_range(vec![sample_with(8.0, None), sample_with(20.0, None)], all);
        assert_eq!(inside.len(), 2);
        assert!(outside.is_empty());
    }

    #[test]
    fn derived_range_covers_the_best_decile() {
        let samples: Vec<DesignSample> = (1..=20)
            .map(|i| sample_with(i as f64, Some(i as f64 / 40.0)))
            .collect();
        let range = derive_range(&samples, 0.1).unwrap();
        // lowest-error 10% are wd 1 and 2
        assert_eq!(range.lo, 1.0);
        assert_eq!(range.hi, 2.0);
        assert!(derive_range(&[sample_with(1.0, None)], 0.1).is_none());
    }

    proptest! {
        #[test]
        fn prop_pearson_affine_invariance(
            base in prop::collection::vec(-50.0f64..50.0, 3..20),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + (i as f64).sin()).collect();
            prop_assume!(pearson(&base, &ys).is_ok());
            let r = pearson(&base, &ys).unwrap();
            let xs2: Vec<f64> = base.iter().map(|v| scale * v + shift).collect();
            let r2 = pearson(&xs2, &ys).unwrap();
            prop_assert!((r - r2).abs() < 1e-9);
            let xs3: Vec<f64> = base.iter().map(|v| -scale * v + shift).collect();
            let r3 = pearson(&xs3, &ys).unwrap();
            prop_assert!((r + r3).abs() < 1e-9);
        }

        #[test]
        fn prop_partition_preserves_cardinality(
            wds in prop::collection::vec(0.0f64..40.0, 0..30),
            lo in 0.0f64..20.0,
            span in 0.0f64..20.0,
        ) {
            let samples: Vec<DesignSample> = wds.iter().map(|&w| sample_with(w, None)).collect();
            let total = samples.len();
            let range = WdRange::new(lo, lo + span).unwrap();
            let (inside, outside) = partition_by_range(samples, range);
            prop_assert_eq!(inside.len() + outside.len(), total);
            prop_assert!(inside.iter().all(|s| range.contains(s.wd)));
            prop_assert!(outside.iter().all(|s| !range.contains(s.wd)));
        }

        #[test]
        fn prop_edf_is_a_cdf(errors in prop::collection::vec(0.0f64..=1.0, 1..50)) {
            let curve = compute_edf(&errors).unwrap();
            prop_assert!(curve.xs.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(curve.ys.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(curve.ys.iter().all(|&y| y > 0.0 && y <= 1.0));
            prop_assert_eq!(*curve.ys.last().unwrap(), 1.0);
        }
    }
}
