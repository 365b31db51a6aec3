use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use hubfair::design::{DesignMatrix, Term, TermKind};
use hubfair::diagnostics::gvif;
use hubfair::fairness::{aer, Moments};
use hubfair::glm::{fit_matrix, GlmOptions};
use hubfair::ingest::{parse_forecasts, write_forecasts, QuantileForecast, HUB_QUANTILES};
use hubfair::metrics::{mean_pbl, pinball_loss, trim_and_transform};
use hubfair::phases::PhaseConfig;

fn tau() -> impl Strategy<Value = f64> {
    prop::sample::select(HUB_QUANTILES.to_vec())
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    Moments {
        n,
        mean,
        m2: xs.iter().map(|x| (x - mean).powi(2)).sum(),
    }
}

fn labels(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

/// Intercept plus `k` columns built from a seed grid, as one control term
/// per column.
fn design(cols: &[Vec<f64>]) -> DesignMatrix {
    let n = cols[0].len();
    let p = cols.len() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { cols[j - 1][i] });
    let labels = labels(p);
    let terms = (0..p)
        .map(|j| Term {
            name: labels[j].clone(),
            kind: if j == 0 { TermKind::Intercept } else { TermKind::Control },
            columns: vec![j],
        })
        .collect();
    DesignMatrix::from_columns(x, DVector::from_element(n, 1.0), labels, terms).unwrap()
}

proptest! {
    #[test]
    fn pinball_is_non_negative_and_homogeneous(y in 0.0..1e5f64, f in 0.0..1e5f64, t in tau(), c in 0.01..100.0f64) {
        let l = pinball_loss(y, f, t).unwrap();
        prop_assert!(l >= 0.0);
        let scaled = pinball_loss(c * y, c * f, t).unwrap();
        prop_assert!((scaled - c * l).abs() <= 1e-9 * (c * l).max(1.0));
    }

    #[test]
    fn constant_offset_gives_half_the_offset(y in 0.0..1e5f64, d in 0.0..1e4f64, over in any::<bool>()) {
        let f = if over { y + d } else { y - d };
        let qs: Vec<(f64, f64)> = HUB_QUANTILES.iter().map(|&t| (t, f)).collect();
        let m = mean_pbl(y, &qs).unwrap();
        prop_assert!((m - d / 2.0).abs() <= 1e-9 * d.max(1.0));
    }

    #[test]
    fn trimming_keeps_the_smallest(values in prop::collection::vec(0.0..1e3f64, 1..300), frac in 0.0..0.49f64) {
        let t = trim_and_transform(&values, frac).unwrap();
        let removed = (values.len() as f64 * frac).floor() as usize;
        prop_assert_eq!(t.kept.len(), values.len() - removed);
        prop_assert_eq!(t.report.removed, removed);
        if let Some(th) = t.report.threshold {
            for &i in &t.kept {
                prop_assert!(values[i] <= th);
            }
        }
        for (&i, s) in t.kept.iter().zip(&t.sqrt_values) {
            prop_assert_eq!(*s, values[i].sqrt());
        }
    }

    #[test]
    fn forecasts_round_trip(rows in prop::collection::vec((1u32..=4, 0u32..60, 0.0..1e6f64), 1..20)) {
        let start = NaiveDate::from_ymd_opt(2020, 6, 1).unwrap();
        let mut records = Vec::new();
        for (k, (weeks, week, value)) in rows.iter().enumerate() {
            let forecast_date = start + Duration::days(7 * *week as i64);
            for (i, &q) in HUB_QUANTILES.iter().enumerate() {
                records.push(QuantileForecast {
                    team_id: "T".into(),
                    forecast_date,
                    lookahead_days: 7 * weeks,
                    target_end_date: hubfair::ingest::expected_target_end(forecast_date, *weeks),
                    fips: format!("01{:03}", k + 1),
                    quantile: q,
                    value: value + i as f64,
                });
            }
        }
        let mut buf = Vec::new();
        write_forecasts(&records, &mut buf).unwrap();
        let parsed = parse_forecasts(buf.as_slice(), "T", &HUB_QUANTILES).unwrap();
        prop_assert!(parsed.report.record_errors.is_empty());
        prop_assert_eq!(parsed.records, records);
    }

    #[test]
    fn phases_partition_their_span(offset in 0i64..900) {
        let cfg = PhaseConfig::default();
        let (start, end) = cfg.span();
        let date = start + Duration::days(offset);
        if date < end {
            let p = cfg.assign(date).unwrap();
            let hits = cfg.ranges().iter().filter(|r| r.start <= date && date < r.end).count();
            prop_assert_eq!(hits, 1);
            prop_assert_eq!(cfg.ranges()[p as usize].phase, p);
        } else {
            prop_assert!(cfg.assign(date).is_err());
        }
    }

    #[test]
    fn identity_fit_matches_normal_equations(
        seed in prop::collection::vec(-3.0..3.0f64, 60),
        noise in prop::collection::vec(-1.0..1.0f64, 30),
    ) {
        let n = 30;
        let x = DMatrix::from_fn(n, 3, |i, j| if j == 0 { 1.0 } else { seed[i + (j - 1) * n] });
        let y = DVector::from_fn(n, |i, _| 1.0 + 2.0 * x[(i, 1)] - x[(i, 2)] + noise[i]);
        let fit = fit_matrix(&x, &y, &labels(3), &GlmOptions::identity()).unwrap();
        let xtx = x.transpose() * &x;
        prop_assume!(xtx.determinant().abs() > 1e-3);
        let beta = xtx.lu().solve(&(x.transpose() * &y)).unwrap();
        prop_assert!((fit.beta - beta).amax() <= 1e-8);
    }

    #[test]
    fn rescaling_a_column_rescales_its_coefficient(
        seed in prop::collection::vec(0.0..2.0f64, 40),
        noise in prop::collection::vec(-0.05..0.05f64, 40),
        c in 0.1..10.0f64,
    ) {
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { seed[i] });
        let y = DVector::from_fn(n, |i, _| (0.3 + 0.4 * seed[i]).exp() * (1.0 + noise[i]));
        let base = fit_matrix(&x, &y, &labels(2), &GlmOptions::default()).unwrap();
        let mut xs = x.clone();
        xs.column_mut(1).scale_mut(c);
        let scaled = fit_matrix(&xs, &y, &labels(2), &GlmOptions::default()).unwrap();
        prop_assert!((scaled.beta[1] * c - base.beta[1]).abs() <= 1e-7 * base.beta[1].abs().max(1.0));
        prop_assert!((scaled.beta[0] - base.beta[0]).abs() <= 1e-7);
        prop_assert!((&scaled.fitted - &base.fitted).amax() <= 1e-7 * base.fitted.amax());
        prop_assert!((scaled.z[1] - base.z[1]).abs() <= 1e-5 * base.z[1].abs().max(1.0));
    }

    #[test]
    fn gvif_ignores_column_scale_and_shift(
        a in prop::collection::vec(-1.0..1.0f64, 25),
        b in prop::collection::vec(-1.0..1.0f64, 25),
        c in prop::collection::vec(-1.0..1.0f64, 25),
        scale in 0.1..50.0f64,
        shift in -20.0..20.0f64,
    ) {
        let x2: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + 0.5 * v).collect();
        let base = gvif(&design(&[a.clone(), x2.clone(), c.clone()]));
        prop_assume!(base.is_ok());
        let base = base.unwrap();
        let moved: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
        let other = gvif(&design(&[moved, x2, c])).unwrap();
        for (e, f) in base.entries.iter().zip(&other.entries) {
            prop_assert!((e.gvif - f.gvif).abs() <= 1e-8 * e.gvif);
        }
    }

    #[test]
    fn aer_is_scale_invariant(
        p in prop::collection::vec(0.01..100.0f64, 1..50),
        u in prop::collection::vec(0.01..100.0f64, 1..50),
        c in 0.001..1000.0f64,
    ) {
        let base = aer(&p, &u).unwrap();
        let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
        let us: Vec<f64> = u.iter().map(|v| v * c).collect();
        prop_assert!((aer(&ps, &us).unwrap() - base).abs() <= 1e-12 * base);
        prop_assert!((aer(&ps, &u).unwrap() - c * base).abs() <= 1e-12 * c * base);
    }

    #[test]
    fn pooled_moments_match_the_concatenation(parts in prop::collection::vec(prop::collection::vec(0.0..10.0f64, 1..20), 1..6)) {
        let each: Vec<Moments> = parts.iter().map(|p| moments(p)).collect();
        let pooled = Moments::pool(&each);
        let all: Vec<f64> = parts.concat();
        let direct = moments(&all);
        prop_assert_eq!(pooled.n, direct.n);
        prop_assert!((pooled.mean - direct.mean).abs() <= 1e-12 * direct.mean.abs().max(1.0));
        prop_assert!((pooled.m2 - direct.m2).abs() <= 1e-9 * direct.m2.max(1.0));
    }
}
