mod common;

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use usage_anomaly::detector::{flag, AnomalyClass, AnomalyFlag, CountryThreshold, DetectorParams, ResidualRecord, ResidualSeries};
use usage_anomaly::eval::{score_events, KnownEvent};
use usage_anomaly::ingest::{assemble_matrix, filter_countries, parse_userstats, write_userstats, CountryCode, UsageTable};
use usage_anomaly::pca::{fit_components, select_components, standardize, ComponentPolicy};
use usage_anomaly::ranking::rank_countries;
use usage_anomaly::stats::{median, median_and_mad};
use usage_anomaly::synth::{inject, judge_detection, InjectionSpec};

const CODES: [&str; 6] = ["de", "fr", "ir", "cn", "us", "tr"];

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()
}

fn code(i: usize) -> CountryCode {
    CODES[i].parse().unwrap()
}

fn table_from(cells: &BTreeMap<(usize, u64), f64>) -> UsageTable {
    let mut t = UsageTable::new();
    for (&(c, d), &u) in cells {
        t.insert(day0() + Days::new(d), code(c), u).unwrap();
    }
    t
}

fn cells(max_days: u64) -> impl Strategy<Value = BTreeMap<(usize, u64), f64>> {
    prop::collection::btree_map((0..CODES.len(), 0..max_days), 0.0f64..1e6, 1..200)
}

fn window_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=8).prop_flat_map(|(seed, n)| (Just(seed), Just(n), (n + 2)..=40))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_serialize_round_trip(cells in cells(40)) {
        let table = table_from(&cells);
        let mut bytes = Vec::new();
        write_userstats(&table, &mut bytes).unwrap();
        let parsed = parse_userstats(&bytes[..]).unwrap();
        prop_assert_eq!(&parsed.table, &table);
        let mut again = Vec::new();
        write_userstats(&parsed.table, &mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn filter_is_idempotent(cells in cells(40), min_users in 0.0f64..1e6) {
        let table = table_from(&cells);
        if let Ok(once) = filter_countries(&table, min_users) {
            prop_assert_eq!(filter_countries(&once, min_users).unwrap(), once);
        }
    }

    #[test]
    fn assembly_fills_within_neighbours(cells in cells(30), max_gap in 0usize..10) {
        let table = table_from(&cells);
        let Ok(asm) = assemble_matrix(&table, max_gap) else { return Ok(()) };
        let m = &asm.matrix;
        let (first, last) = table.date_range().unwrap();
        prop_assert_eq!(m.nrows() as i64, (last - first).num_days() + 1);
        prop_assert!(m.values().iter().all(|v| v.is_finite()));
        for (j, &c) in m.countries().iter().enumerate() {
            let series = table.country_series(c).unwrap();
            for (t, &date) in m.dates().iter().enumerate() {
                let v = m.values()[(t, j)];
                if let Some(&obs) = series.get(&date) {
                    prop_assert_eq!(v, obs);
                    continue;
                }
                let before = series.range(..date).next_back().map(|(_, &x)| x);
                let after = series.range(date..).next().map(|(_, &x)| x);
                match (before, after) {
                    (Some(a), Some(b)) => prop_assert!(v >= a.min(b) - 1e-9 && v <= a.max(b) + 1e-9),
                    (Some(a), None) | (None, Some(a)) => prop_assert_eq!(v, a),
                    (None, None) => unreachable!(),
                }
            }
        }
    }

    #[test]
    fn pca_basis_invariants((seed, n, w) in window_strategy(), flip in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, today) = common::random_window(&mut rng, w, n);
        let m = DMatrix::from_fn(w, n, |i, j| rows[i][j]);
        let std = standardize(m.as_view()).unwrap();
        let basis = fit_components(&std).unwrap();
        let q = basis.len();
        prop_assert_eq!(q, n);

        // Orthonormal components and trace equal to the dimension.
        let gram = basis.components.tr_mul(&basis.components);
        prop_assert!((gram - DMatrix::<f64>::identity(q, q)).amax() < 1e-9);
        prop_assert!((basis.eigenvalues.iter().sum::<f64>() - q as f64).abs() < 1e-6);
        prop_assert!(basis.eigenvalues.windows(2).all(|p| p[0] >= p[1]));

        // Full reconstruction of every window row.
        for i in 0..w {
            let row: DVector<f64> = std.values.row(i).transpose();
            prop_assert!(basis.residual_with_count(&row, q).unwrap().amax() < 1e-6);
        }

        let p = 1 + (seed as usize) % (q - 1);
        let selected = select_components(basis.clone(), ComponentPolicy::Fixed(p)).unwrap();
        let z = std.standardize_row(&today).unwrap();
        let residual = usage_anomaly::pca::residual_vector(&selected, &z).unwrap();

        // Orthogonal to the normal subspace, and Pythagoras.
        for i in 0..p {
            prop_assert!(selected.component(i).dot(&residual).abs() < 1e-9);
        }
        let projected = &z - &residual;
        prop_assert!((z.norm_squared() - projected.norm_squared() - residual.norm_squared()).abs() < 1e-8 * (1.0 + z.norm_squared()));

        // Flipping any component leaves the residual unchanged.
        let mut flipped = selected.clone();
        let k = flip % q;
        let negated = -flipped.components.column(k);
        flipped.components.set_column(k, &negated);
        let other = usage_anomaly::pca::residual_vector(&flipped, &z).unwrap();
        prop_assert!((other - &residual).amax() < 1e-12);
    }

    #[test]
    fn median_survives_one_corruption(
        history in prop::collection::vec(-100.0f64..100.0, 3..60),
        index in any::<prop::sample::Index>(),
        replacement in -1e9f64..1e9,
    ) {
        let (lo, hi) = history.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        let mut corrupted = history.clone();
        corrupted[index.index(history.len())] = replacement;
        let m = median(&corrupted).unwrap();
        prop_assert!(m >= lo && m <= hi);
    }

    #[test]
    fn mad_matches_sort_and_select(history in prop::collection::vec(-10.0f64..10.0, 1..80)) {
        let select = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
        };
        let med = select(&mut history.clone());
        let mad = select(&mut history.iter().map(|x| (x - med).abs()).collect());
        let (a, b) = median_and_mad(&history).unwrap();
        prop_assert_eq!((a, b), (med, mad));
    }

    #[test]
    fn flags_exactly_outside_band(
        history in prop::collection::vec(-1.0f64..1.0, 30..90),
        residual in -3.0f64..3.0,
    ) {
        let params = DetectorParams::default();
        let mut th = CountryThreshold::default();
        for &r in &history {
            th.push(r, params.history_len());
        }
        th.push(residual, params.history_len());
        let (low, high) = th.band(&params);
        let result = flag(day0(), code(0), residual, &th, &params);
        prop_assert_eq!(result.is_some(), residual < low || residual > high);
        if let Some(f) = result {
            prop_assert_eq!(f.class == AnomalyClass::Drop, residual > high);
            prop_assert_eq!((f.threshold_low, f.threshold_high), (low, high));
        }
    }

    #[test]
    fn ranking_respects_scale_permutation_and_range(
        scores in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 20), 3..6),
        target in 0usize..3,
        c in 1.0f64..10.0,
        shuffle_seed in any::<u64>(),
    ) {
        let build = |factor: f64| -> Vec<ResidualRecord> {
            scores.iter().enumerate().flat_map(|(j, vals)| {
                vals.iter().enumerate().map(move |(d, &v)| ResidualRecord {
                    date: day0() + Days::new(d as u64 + 1),
                    country: code(j),
                    usage: 1.0,
                    predicted: Some(1.0),
                    residual: Some(if j == target { v * factor } else { v }),
                })
            }).collect()
        };
        let (from, to) = (day0() + Days::new(1), day0() + Days::new(20));
        let base = rank_countries(&ResidualSeries::new(build(1.0)), from, to, 10, 5).unwrap();
        let scaled = rank_countries(&ResidualSeries::new(build(c)), from, to, 10, 5).unwrap();
        let score = |r: &usage_anomaly::ranking::Ranking, cc: CountryCode| r.ranks.iter().find(|x| x.country == cc).unwrap().score;
        let position = |r: &usage_anomaly::ranking::Ranking, cc: CountryCode| r.ranks.iter().position(|x| x.country == cc).unwrap();
        let t = code(target);
        prop_assert!((score(&scaled, t) - c * score(&base, t)).abs() <= 1e-12 * c);
        for j in (0..scores.len()).filter(|&j| j != target) {
            if position(&base, code(j)) > position(&base, t) {
                prop_assert!(position(&scaled, code(j)) > position(&scaled, t));
            }
        }

        let mut shuffled = build(1.0);
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        prop_assert_eq!(&rank_countries(&ResidualSeries::new(shuffled), from, to, 10, 5).unwrap(), &base);

        let mut outlier = build(1.0);
        outlier.push(ResidualRecord {
            date: day0(),
            country: code(0),
            usage: 1.0,
            predicted: Some(1.0),
            residual: Some(1e6),
        });
        prop_assert_eq!(&rank_countries(&ResidualSeries::new(outlier), from, to, 10, 5).unwrap(), &base);
    }

    #[test]
    fn injection_is_invertible(
        users in prop::collection::vec(1.0f64..1e5, 60),
        start in 0u64..20,
        ramp in 1usize..20,
        hold in 0usize..20,
        magnitude in -0.99f64..1.0,
    ) {
        let mut table = UsageTable::new();
        for (d, &u) in users.iter().enumerate() {
            table.insert(day0() + Days::new(d as u64), code(0), u).unwrap();
            table.insert(day0() + Days::new(d as u64), code(1), u * 2.0).unwrap();
        }
        let spec = InjectionSpec {
            country: code(0),
            start: day0() + Days::new(start),
            ramp_days: ramp,
            magnitude,
            hold_days: hold,
            seed: 0,
        };
        let injected = inject(&table, &spec).unwrap();
        for (date, c, value) in injected.iter() {
            let offset = (date - spec.start).num_days();
            let factor = if c == code(0) { spec.multiplier(offset) } else { 1.0 };
            let original = table.get(date, c).unwrap();
            prop_assert!((value / factor - original).abs() <= 1e-9 * original.max(1.0));
        }
    }

    #[test]
    fn judge_boundary_is_strict_majority(ramp in 1usize..30, hold in 0usize..30) {
        let spec = InjectionSpec {
            country: code(0),
            start: day0(),
            ramp_days: ramp,
            magnitude: 0.5,
            hold_days: hold,
            seed: 0,
        };
        let flags_for = |k: usize| -> Vec<AnomalyFlag> {
            spec.active_dates().take(k).map(|date| AnomalyFlag {
                date,
                country: code(0),
                class: AnomalyClass::Increase,
                residual: -1.0,
                threshold_low: -0.5,
                threshold_high: 0.5,
            }).collect()
        };
        let active = spec.active_days();
        let half = active / 2;
        prop_assert!(!judge_detection(&flags_for(half), &spec));
        prop_assert!(judge_detection(&flags_for(half + 1), &spec));
    }

    #[test]
    fn scorecard_counts_and_tolerance_monotone(
        events in prop::collection::vec((0usize..6, 0u64..100, any::<bool>()), 1..12),
        flags in prop::collection::vec((0usize..6, 0u64..100), 0..30),
        t1 in 0u32..10,
        extra in 0u32..10,
    ) {
        let events: Vec<KnownEvent> = events.iter().map(|&(c, d, applicable)| KnownEvent {
            date: day0() + Days::new(d),
            country: code(c),
            description: String::new(),
            applicable,
        }).collect();
        let flags: Vec<AnomalyFlag> = flags.iter().map(|&(c, d)| AnomalyFlag {
            date: day0() + Days::new(d),
            country: code(c),
            class: AnomalyClass::Drop,
            residual: 1.0,
            threshold_low: -0.5,
            threshold_high: 0.5,
        }).collect();
        let narrow = score_events(&flags, &events, t1);
        let wide = score_events(&flags, &events, t1 + extra);
        prop_assert_eq!(narrow.detected.len() + narrow.missed.len() + narrow.not_applicable.len(), events.len());
        prop_assert_eq!(narrow.total(), events.len());
        prop_assert!(wide.detected.len() >= narrow.detected.len());
    }
}
