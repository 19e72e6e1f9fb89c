use proptest::prelude::*;
use surrogacy_core::copula::{
    cdf, conditional_cdf_given_u, conditional_quantile_given_u, cross_ratio, sample_pair, CopulaParam,
};
use surrogacy_core::data::{PatientRecord, TrialDataset, TrialEffects};
use surrogacy_core::joint::loglik_trial;
use surrogacy_core::sim::metrics;
use surrogacy_core::trial_level::{fisher_z_interval, fit_dispersion, r2_copula, r2_weighted, wls, WeightScheme};
use surrogacy_core::verdict::{classify, Estimate, SurrogacyEstimates, VerdictClass};

fn theta() -> impl Strategy<Value = f64> {
    (-3.0f64..3.5).prop_map(f64::exp)
}

fn unit() -> impl Strategy<Value = f64> {
    0.01f64..0.99
}

proptest! {
    #[test]
    fn cross_ratio_is_theta(u in unit(), v in unit(), t in theta()) {
        let th = CopulaParam::new(t).unwrap();
        let cr = cross_ratio(u, v, th).unwrap();
        prop_assert!((cr / t - 1.0).abs() < 1e-8, "cr {} theta {}", cr, t);
    }

    #[test]
    fn frechet_bounds_and_reflection(u in unit(), v in unit(), t in theta()) {
        let th = CopulaParam::new(t).unwrap();
        let c = cdf(u, v, th).unwrap();
        prop_assert!(c >= (u + v - 1.0).max(0.0) - 1e-15 && c <= u.min(v) + 1e-15);
        // v − C_θ(u, v) = C_{1/θ}(1 − u, v)
        let m = cdf(1.0 - u, v, th.mirrored()).unwrap();
        prop_assert!((v - c - m).abs() < 1e-12);
        // radial symmetry
        let s = 1.0 - u - v + c;
        prop_assert!((cdf(1.0 - u, 1.0 - v, th).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn quantile_round_trip(u in unit(), p in 0.001f64..0.999, t in theta()) {
        let th = CopulaParam::new(t).unwrap();
        let v = conditional_quantile_given_u(u, p, th).unwrap();
        prop_assert!((conditional_cdf_given_u(u, v, th).unwrap() - p).abs() < 1e-9);
    }

    #[test]
    fn sampled_pairs_in_unit_square(v1 in 0.0001f64..0.9999, v2 in 0.0001f64..0.9999, t in theta()) {
        let (a, b) = sample_pair(v1, v2, CopulaParam::new(t).unwrap()).unwrap();
        prop_assert_eq!(a, v1);
        prop_assert!(b > 0.0 && b < 1.0);
    }

    #[test]
    fn outcome_totals(
        t in 0.01f64..5.0,
        a in -2.0f64..2.0,
        b in -2.0f64..1.0,
        th in theta(),
    ) {
        // One control patient per outcome category plus a treated filler.
        let filler = PatientRecord { time: 1.0, event: false, surrogate: 0, treatment: 1 };
        let contribution = |event: bool, surrogate: u8| {
            let rec = PatientRecord { time: t, event, surrogate, treatment: 0 };
            let with = TrialDataset::new("x", vec![rec, filler]).unwrap();
            let e = TrialEffects::new(a, b, 0.0, 0.0).unwrap();
            let filler_only = {
                let d = TrialDataset::new("y", vec![filler, filler]).unwrap();
                loglik_trial(&e, CopulaParam::new(th).unwrap(), &d).unwrap() / 2.0
            };
            (loglik_trial(&e, CopulaParam::new(th).unwrap(), &with).unwrap() - filler_only).exp()
        };
        let h = b.exp();
        let surv = (-h * t).exp();
        let dens = h * surv;
        let d = contribution(true, 0) + contribution(true, 1);
        let s = contribution(false, 0) + contribution(false, 1);
        prop_assert!((d - dens).abs() < 1e-12 * dens.max(1.0));
        prop_assert!((s - surv).abs() < 1e-12);
    }

    #[test]
    fn r2_copula_is_squared_pearson(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..25)) {
        let effects: Vec<TrialEffects> =
            pairs.iter().map(|&(a, b)| TrialEffects::new(0.0, 0.0, a, b).unwrap()).collect();
        let Ok(d) = fit_dispersion(&effects) else { return Ok(()) };
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
        prop_assume!(sxx > 1e-6 && syy > 1e-6);
        let pearson2 = sxy * sxy / (sxx * syy);
        prop_assert!((r2_copula(&d).unwrap() - pearson2).abs() < 1e-12);
    }

    #[test]
    fn r2_affine_invariance(
        pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 50usize..2000), 4..20),
        scale in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 7.0]),
        shift in -5.0f64..5.0,
    ) {
        let mk = |f: &dyn Fn(f64) -> f64| -> Vec<TrialEffects> {
            pairs
                .iter()
                .map(|&(a, b, _)| {
                    let mut e = TrialEffects::new(0.0, 0.0, f(a), b).unwrap();
                    e.se_alpha = Some(0.1 + a.abs() / 10.0);
                    e
                })
                .collect()
        };
        let ns: Vec<usize> = pairs.iter().map(|p| p.2).collect();
        let base = mk(&|a| a);
        let moved = mk(&|a| scale * a + shift);
        if let (Ok(d0), Ok(d1)) = (fit_dispersion(&base), fit_dispersion(&moved)) {
            prop_assert!((r2_copula(&d0).unwrap() - r2_copula(&d1).unwrap()).abs() < 1e-10);
        }
        for scheme in [WeightScheme::SampleSize, WeightScheme::InverseSampleSize, WeightScheme::InverseVarLogOr] {
            if let (Ok(a), Ok(b)) = (r2_weighted(&base, &ns, scheme), r2_weighted(&moved, &ns, scheme)) {
                prop_assert!((a.r2 - b.r2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn orthogonal_and_collinear_extremes(
        xs in prop::collection::vec(-3.0f64..3.0, 4..15),
        ws in prop::collection::vec(0.1f64..10.0, 15),
        slope in -3.0f64..3.0,
    ) {
        let n = xs.len();
        let w = &ws[..n];
        let sw: f64 = w.iter().sum();
        let mx = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
        let sxx: f64 = w.iter().zip(&xs).map(|(w, x)| w * (x - mx).powi(2)).sum();
        prop_assume!(sxx > 1e-3);
        let collinear: Vec<f64> = xs.iter().map(|x| 0.5 + slope * x).collect();
        prop_assert!((wls(&xs, &collinear, w).unwrap().r2 - 1.0).abs() < 1e-10);
        // Residual orthogonal to (1, x) under the weighted inner product.
        let raw: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 5) as f64 - 2.0).collect();
        let my = w.iter().zip(&raw).map(|(w, y)| w * y).sum::<f64>() / sw;
        let sxy: f64 = w.iter().zip(&xs).zip(&raw).map(|((w, x), y)| w * (x - mx) * (y - my)).sum();
        let orth: Vec<f64> = xs.iter().zip(&raw).map(|(x, y)| y - my - sxy / sxx * (x - mx)).collect();
        if orth.iter().any(|y| y.abs() > 1e-6) {
            prop_assert!(wls(&xs, &orth, w).unwrap().r2.abs() < 1e-10);
        }
    }

    #[test]
    fn fisher_sign_equivariance(r2 in 0.0f64..0.999, n in 4usize..60) {
        let a = fisher_z_interval(r2, 1.0, n).unwrap().unwrap();
        let b = fisher_z_interval(r2, -1.0, n).unwrap().unwrap();
        prop_assert!((a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-14);
        prop_assert!(a.0 <= r2 + 1e-12 && r2 <= a.1 + 1e-12);
    }

    #[test]
    fn bias_variance_decomposition(est in prop::collection::vec(0.1f64..10.0, 1..50), truth in 0.5f64..5.0) {
        let m = metrics(&est, truth).unwrap();
        let n = est.len() as f64;
        let mean = est.iter().sum::<f64>() / n;
        let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let mse = (m.nrmse * m.mean).powi(2);
        prop_assert!((mse - (m.bias * m.bias + var)).abs() < 1e-10 * mse.max(1.0));
        prop_assert!(m.nrmse >= 0.0);
    }
}

fn record(v: &[f64; 7]) -> SurrogacyEstimates {
    SurrogacyEstimates {
        r2_wls: Estimate::new(v[0], v[1].min(v[0]), 1.0),
        r2_copula: Estimate::new(v[2], v[3].min(v[2]), 1.0),
        global_or: Estimate::new(v[4], v[5].min(v[4]), v[4] * 2.0 + 1.0),
        flags: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    /// Raising any point estimate or lower limit never demotes the verdict.
    #[test]
    fn verdict_monotone(
        base in prop::array::uniform7(0.0f64..1.0),
        field in 0usize..6,
        bump in 0.0f64..0.5,
    ) {
        let mut v = base;
        v[4] *= 6.0;
        v[5] *= 6.0;
        let before = classify(&record(&v)).unwrap();
        let mut raised = v;
        raised[field] += bump;
        // Keep each lower limit below its point estimate.
        if field % 2 == 0 { raised[field + 1] = raised[field + 1].min(raised[field]); }
        else { raised[field] = raised[field].min(raised[field - 1]); }
        let after = classify(&record(&raised)).unwrap();
        prop_assert!(after.class >= before.class, "{:?} -> {:?}", v, raised);
    }

    #[test]
    fn fvs_implies_rls_r2_branch(v in prop::array::uniform7(0.0f64..1.0)) {
        let mut v = v;
        v[4] *= 6.0;
        v[5] *= 6.0;
        let r = record(&v);
        let verdict = classify(&r).unwrap();
        if verdict.class == VerdictClass::Fvs {
            let mut masked = r.clone();
            masked.global_or = Estimate::new(0.5, 0.1, 1.0);
            prop_assert_eq!(classify(&masked).unwrap().class, VerdictClass::Rls);
        }
        prop_assert_eq!(classify(&r).unwrap(), verdict);
    }
}
