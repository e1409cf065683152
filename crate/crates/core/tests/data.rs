use chrono::NaiveDate;
use hydrodiff::data::*;
use hydrodiff::Error;
use proptest::prelude::*;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn params(k: f64) -> SyntheticParams {
    SyntheticParams {
        k,
        rain_prob: 0.3,
        rain_scale: 8.0,
        rain_seasonality: 0.3,
        temp_mean: 10.0,
        temp_amplitude: 8.0,
        start: date(2000, 1, 1),
    }
}

#[test]
fn population_statistics() {
    assert_eq!(mean_std([1.0, 3.0].into_iter()), Some((2.0, 1.0)));
    assert_eq!(mean_std([4.0; 5].into_iter()), Some((4.0, STD_FLOOR)));
    assert_eq!(mean_std(std::iter::empty()), None);
}

#[test]
fn norm_stats_reject_empty_range() {
    let rec = synthetic_basin("a", 1, 400, &params(0.1)).unwrap();
    let range = DateRange::new(date(1990, 1, 1), date(1990, 12, 31)).unwrap();
    assert!(matches!(compute_norm_stats(&[rec], range), Err(Error::Argument(_))));
    assert!(DateRange::new(date(2000, 2, 1), date(2000, 1, 1)).is_err());
}

proptest! {
    #[test]
    fn normalize_denormalize_roundtrip(values in prop::collection::vec(-1e3f64..1e3, 2..50), probe in -1e3f64..1e3) {
        let (mean, std) = mean_std(values.iter().copied()).unwrap();
        let stats = NormStats {
            forcing_mean: vec![0.0; 5],
            forcing_std: vec![1.0; 5],
            static_mean: vec![],
            static_std: vec![],
            q_mean: mean,
            q_std: std,
        };
        let back = stats.denormalize_q(stats.normalize_q(probe));
        prop_assert!((back - probe).abs() <= 1e-12 * probe.abs().max(1.0));
    }
}

#[test]
fn constant_series_roundtrips_through_floor() {
    let (mean, std) = mean_std([2.5; 10].into_iter()).unwrap();
    let stats = NormStats {
        forcing_mean: vec![],
        forcing_std: vec![],
        static_mean: vec![],
        static_std: vec![],
        q_mean: mean,
        q_std: std,
    };
    assert_eq!(stats.normalize_q(2.5), 0.0);
    assert_eq!(stats.denormalize_q(stats.normalize_q(2.5)), 2.5);
}

#[test]
fn four_hundred_days_give_29_windows() {
    let rec = synthetic_basin("a", 3, 400, &params(0.2)).unwrap();
    let all = DateRange::new(rec.dates[0], rec.dates[399]).unwrap();
    let set = make_windows(&rec, all, &SeqDims::default(), true);
    assert_eq!(set.indices.len(), 29);
    assert_eq!(set.indices[0], 364);
    assert_eq!(set.skipped_history, 400 - 29);
}

#[test]
fn windows_align_and_respect_splits() {
    let cfg = SyntheticConfig {
        n_basins: 2,
        n_days: 3650,
        ..SyntheticConfig::default()
    };
    let records = synthetic_dataset(&cfg, 5).unwrap();
    let splits = Splits::by_years(records[0].dates[0], 6, 1, 3).unwrap();
    assert_eq!(splits.test.end, records[0].dates[3649]);
    let ds = Dataset::prepare(&records, splits.train, NormMode::Pooled, SeqDims::default()).unwrap();
    for range in [splits.train, splits.validation, splits.test] {
        let (windows, _) = ds.windows(range, true);
        assert!(!windows.is_empty());
        for w in windows {
            let dates = &ds.basins[w.basin].dates;
            assert!(range.contains(dates[w.index]) && range.contains(dates[w.index + 7]));
            let tuple = ds.tuple(w);
            let b = &ds.basins[w.basin];
            // Day-0 forcings sit in the last past row; future rows are Day-1..Day-7.
            assert_eq!(tuple.past.row(364), &b.forcings[w.index * 5..w.index * 5 + 5]);
            assert_eq!(tuple.future.row(0), &b.forcings[(w.index + 1) * 5..(w.index + 2) * 5]);
            assert_eq!(tuple.future.row(6), &b.forcings[(w.index + 7) * 5..(w.index + 8) * 5]);
            assert_eq!(ds.target(w).unwrap()[0], b.streamflow[w.index].unwrap());
        }
    }
    let (train, _) = ds.windows(splits.train, true);
    assert_eq!(train.len(), 2 * (6 * 365 - 364 - 7));
}

#[test]
fn missing_targets_are_excluded_from_training_windows() {
    let mut rec = synthetic_basin("a", 3, 500, &params(0.2)).unwrap();
    rec.streamflow[400] = None;
    let all = DateRange::new(rec.dates[0], rec.dates[499]).unwrap();
    let strict = make_windows(&rec, all, &SeqDims::default(), true);
    let loose = make_windows(&rec, all, &SeqDims::default(), false);
    assert_eq!(loose.indices.len() - strict.indices.len(), 8);
    assert_eq!(strict.skipped_missing, 8);
}

#[test]
fn recession_is_exponential_without_rain() {
    let mut precip = vec![5.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    precip.extend([0.0; 5]);
    let k = 0.15;
    let (q, _) = linear_reservoir(&precip, k, 10.0);
    for t in 3..q.len() - 1 {
        assert!((q[t + 1] / q[t] - (1.0 - k)).abs() < 1e-12);
    }
}

#[test]
fn generator_conserves_mass_and_is_seeded() {
    let p = params(0.12);
    let rec = synthetic_basin("a", 42, 2000, &p).unwrap();
    let precip: Vec<f64> = rec.forcings.iter().map(|f| f[0]).collect();
    let s0 = p.rain_prob * p.rain_scale / p.k;
    let (q, s_end) = linear_reservoir(&precip, p.k, s0);
    let total_q: f64 = q.iter().sum();
    let total_p: f64 = precip.iter().sum();
    assert!(((s0 + total_p - total_q - s_end) / (s0 + total_p)).abs() < 1e-9);
    assert!(total_q <= s0 + total_p);
    let observed: Vec<f64> = rec.streamflow.iter().map(|v| v.unwrap()).collect();
    assert_eq!(observed, q);
    assert_eq!(rec, synthetic_basin("a", 42, 2000, &p).unwrap());
    assert_ne!(rec, synthetic_basin("a", 43, 2000, &p).unwrap());
    assert!(rec.validate().is_ok());
    assert_eq!(rec.statics.len(), 27);
}

#[test]
fn generator_rejects_bad_parameters() {
    let err = synthetic_basin("a", 1, 500, &params(1.0)).unwrap_err();
    assert!(err.to_string().contains('k'));
    assert!(synthetic_basin("a", 1, 399, &params(0.1)).is_err());
    let cfg = SyntheticConfig {
        k_max: 1.2,
        ..SyntheticConfig::default()
    };
    assert!(synthetic_dataset(&cfg, 1).unwrap_err().to_string().contains("k_min/k_max"));
}

#[test]
fn vapor_pressure_from_specific_humidity() {
    assert_eq!(derive_vapor_pressure(0.0, 1e5).unwrap(), 0.0);
    let e = derive_vapor_pressure(0.01, 100_000.0).unwrap();
    assert!((e - 1000.0 / 0.62578).abs() < 1e-9);
    assert!((e - 1598.0).abs() < 0.1);
    let mut prev = -1.0;
    for i in 0..100 {
        let v = derive_vapor_pressure(i as f64 * 0.0005, 90_000.0).unwrap();
        assert!(v > prev);
        prev = v;
    }
    assert!(derive_vapor_pressure(1.0, 1e5).is_err());
    assert!(derive_vapor_pressure(0.01, 0.0).is_err());
}

#[test]
fn basin_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rec = synthetic_basin("b7", 9, 450, &params(0.2)).unwrap();
    rec.streamflow[10] = None;
    let path = dir.path().join("b7.csv");
    write_basin_csv(&rec, &path).unwrap();
    let back = load_basin_csv(&path).unwrap();
    assert_eq!(back.basin_id, "b7");
    assert_eq!(back.dates, rec.dates);
    assert_eq!(back.forcings, rec.forcings);
    assert_eq!(back.streamflow, rec.streamflow);
    let again = dir.path().join("again.csv");
    write_basin_csv(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let statics = dir.path().join("statics.csv");
    write_static_csv(&[rec.clone()], &statics).unwrap();
    let table = load_static_csv(&statics).unwrap();
    assert_eq!(table, vec![("b7".to_string(), rec.statics.clone())]);
}

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn basin_csv_errors() {
    let dir = tempfile::tempdir().unwrap();
    let header = "date,prcp,tmax,tmin,srad,vp,qobs\n";
    let p = write(dir.path(), "empty.csv", header);
    assert!(matches!(load_basin_csv(&p), Err(Error::EmptyRecord(_))));

    let body = format!("{header}2000-01-01,1,2,3,4,5,6\n2000-01-01,1,2,3,4,5,6\n");
    let p = write(dir.path(), "dup.csv", &body);
    match load_basin_csv(&p) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("2000-01-01"));
        }
        other => panic!("{other:?}"),
    }

    let body = format!("{header}2000-01-01,1,2,3,4,5,6\n2000-13-02,1,2,3,4,5,6\n");
    let p = write(dir.path(), "bad_date.csv", &body);
    assert!(matches!(load_basin_csv(&p), Err(Error::Parse { line: 3, .. })));

    let body = format!("{header}2000-01-01,1,2,3,4,5\n");
    let p = write(dir.path(), "short.csv", &body);
    assert!(matches!(load_basin_csv(&p), Err(Error::Parse { line: 2, .. })));

    let p = write(dir.path(), "hdr.csv", "date,rain\n");
    assert!(matches!(load_basin_csv(&p), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn forecast_csv_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<ForecastRow> = (0..16)
        .map(|i| ForecastRow {
            basin_id: "x".into(),
            init_date: date(2001, 3, 4),
            lead_days: i % 8,
            member: i / 8,
            value: 0.1 * i as f64 - 0.3,
        })
        .collect();
    let path = dir.path().join("f.csv");
    write_forecast_csv(&rows, &path).unwrap();
    assert_eq!(read_forecast_csv(&path).unwrap(), rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("basin_id,init_date,lead_days,member,value\nx,2001-03-04,0,0,-0.3\n"));
}
