//! Pandemic phase tables: assignment of epi weeks to phases, and an optional
//! valley detector over a national case curve.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRange {
    pub phase: u8,
    /// Inclusive.
    pub start: NaiveDate,
    /// Exclusive.
    pub end: NaiveDate,
}

/// Ordered, contiguous phase table. Ids run 0..n in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseConfig {
    ranges: Vec<PhaseRange>,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar date")
}

impl Default for PhaseConfig {
    /// The seven-phase US timeline, June 2020 through October 2022.
    fn default() -> Self {
        let bounds = [
            ymd(2020, 6, 3),
            ymd(2020, 9, 9),
            ymd(2021, 3, 17),
            ymd(2021, 6, 23),
            ymd(2021, 11, 3),
            ymd(2022, 3, 30),
            ymd(2022, 6, 22),
            ymd(2022, 10, 20),
        ];
        let ranges = bounds
            .windows(2)
            .enumerate()
            .map(|(k, w)| PhaseRange {
                phase: k as u8,
                start: w[0],
                end: w[1],
            })
            .collect();
        Self { ranges }
    }
}

impl PhaseConfig {
    pub fn new(ranges: Vec<PhaseRange>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::InvalidInput("phase table is empty".into()));
        }
        for (k, r) in ranges.iter().enumerate() {
            if r.phase as usize != k {
                return Err(Error::InvalidInput(format!(
                    "phase ids must run 0..{} in order; found {} at position {k}",
                    ranges.len(),
                    r.phase
                )));
            }
            if r.start >= r.end {
                return Err(Error::InvalidInput(format!(
                    "phase {} has start {} not before end {}",
                    r.phase, r.start, r.end
                )));
            }
        }
        for w in ranges.windows(2) {
            if w[0].end != w[1].start {
                return Err(Error::InvalidInput(format!(
                    "phases {} and {} are not contiguous ({} vs {})",
                    w[0].phase, w[1].phase, w[0].end, w[1].start
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn ranges(&self) -> &[PhaseRange] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn span(&self) -> (NaiveDate, NaiveDate) {
        (self.ranges[0].start, self.ranges[self.ranges.len() - 1].end)
    }

    /// The unique phase whose `[start, end)` contains `date`.
    pub fn assign(&self, date: NaiveDate) -> Result<u8> {
        let (start, end) = self.span();
        if date < start || date >= end {
            return Err(Error::PhaseOutOfRange { date, start, end });
        }
        let idx = self.ranges.partition_point(|r| r.end <= date);
        Ok(self.ranges[idx].phase)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut ranges = Vec::new();
        for row in rdr.deserialize::<PhaseRow>() {
            let row = row?;
            ranges.push(PhaseRange {
                phase: row.phase,
                start: row.start,
                end: row.end,
            });
        }
        Self::new(ranges)
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        Self::read(crate::ingest::open(path)?)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.ranges {
            w.serialize(PhaseRow {
                phase: r.phase,
                start: r.start,
                end: r.end,
            })?;
        }
        w.flush().map_err(|e| Error::io("phase table", e))?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PhaseRow {
    phase: u8,
    start: NaiveDate,
    end: NaiveDate,
}

/// Convenience wrapper matching the free-function form used elsewhere.
pub fn assign_phase(week_end: NaiveDate, config: &PhaseConfig) -> Result<u8> {
    config.assign(week_end)
}

pub const SMOOTHING_WINDOW: usize = 5;

/// Centered moving average; the window is truncated at the series edges.
pub fn centered_moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Interior local minima of `s` with their prominence. A flat-bottomed
/// valley reports its first index.
pub fn valleys(s: &[f64]) -> Vec<(usize, f64)> {
    let n = s.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if s[i] < s[i - 1] {
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] > s[i] {
                out.push((i, prominence(s, i, j)));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

fn prominence(s: &[f64], first: usize, last: usize) -> f64 {
    let v = s[first];
    let mut left = v;
    for k in (0..first).rev() {
        if s[k] < v {
            break;
        }
        left = left.max(s[k]);
    }
    let mut right = v;
    for &x in &s[last + 1..] {
        if x < v {
            break;
        }
        right = right.max(x);
    }
    left.min(right) - v
}

/// Splits a weekly national series into `n_phases` phases at the
/// `n_phases - 1` most prominent valleys of its 5-week centered moving
/// average. Ties in prominence go to the earlier week.
pub fn detect_phases(series: &[(NaiveDate, f64)], n_phases: usize) -> Result<PhaseConfig> {
    if n_phases < 2 {
        return Err(Error::InvalidInput("need at least 2 phases".into()));
    }
    if series.len() < 2 * n_phases {
        return Err(Error::InvalidInput(format!(
            "series of length {} too short for {n_phases} phases",
            series.len()
        )));
    }
    if series.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidInput("series dates must be strictly increasing".into()));
    }
    let values: Vec<f64> = series.iter().map(|p| p.1).collect();
    let smooth = centered_moving_average(&values, SMOOTHING_WINDOW);
    let mut found = valleys(&smooth);
    let needed = n_phases - 1;
    if found.len() < needed {
        return Err(Error::NotEnoughValleys {
            found: found.len(),
            needed,
        });
    }
    found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cuts: Vec<usize> = found[..needed].iter().map(|v| v.0).collect();
    cuts.sort_unstable();

    let mut bounds = vec![series[0].0];
    bounds.extend(cuts.iter().map(|&i| series[i].0));
    bounds.push(series[series.len() - 1].0 + Duration::days(7));
    let ranges = bounds
        .windows(2)
        .enumerate()
        .map(|(k, w)| PhaseRange {
            phase: k as u8,
            start: w[0],
            end: w[1],
        })
        .collect();
    PhaseConfig::new(ranges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_timeline_examples() {
        let cfg = PhaseConfig::default();
        assert_eq!(cfg.len(), 7);
        assert_eq!(cfg.assign(ymd(2020, 7, 11)).unwrap(), 0);
        assert_eq!(cfg.assign(ymd(2022, 1, 8)).unwrap(), 4);
        assert_eq!(cfg.assign(ymd(2020, 9, 9)).unwrap(), 1);
        assert_eq!(cfg.assign(ymd(2022, 10, 19)).unwrap(), 6);
        assert!(cfg.assign(ymd(2022, 10, 20)).is_err());
        match cfg.assign(ymd(2020, 6, 2)) {
            Err(Error::PhaseOutOfRange { start, end, .. }) => {
                assert_eq!(start, ymd(2020, 6, 3));
                assert_eq!(end, ymd(2022, 10, 20));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_gaps_and_bad_ids() {
        let r = |phase, s, e| PhaseRange {
            phase,
            start: ymd(2020, 1, s),
            end: ymd(2020, 1, e),
        };
        assert!(PhaseConfig::new(vec![r(0, 1, 5), r(1, 6, 9)]).is_err());
        assert!(PhaseConfig::new(vec![r(0, 1, 5), r(2, 5, 9)]).is_err());
        assert!(PhaseConfig::new(vec![r(0, 5, 5)]).is_err());
        assert!(PhaseConfig::new(vec![r(0, 1, 5), r(1, 5, 9)]).is_ok());
    }

    #[test]
    fn table_round_trip() {
        let cfg = PhaseConfig::default();
        let mut buf = Vec::new();
        cfg.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("phase,start,end\n0,2020-06-03,2020-09-09\n"));
        assert_eq!(PhaseConfig::read(buf.as_slice()).unwrap(), cfg);
    }

    fn weekly(values: &[f64]) -> Vec<(NaiveDate, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| (ymd(2020, 6, 6) + Duration::days(7 * k as i64), v))
            .collect()
    }

    #[test]
    fn monotone_series_has_no_valley() {
        let s = weekly(&(0..30).map(|k| k as f64).collect::<Vec<_>>());
        assert!(matches!(
            detect_phases(&s, 2),
            Err(Error::NotEnoughValleys { found: 0, needed: 1 })
        ));
    }

    #[test]
    fn two_bump_valley_at_week_20() {
        let values: Vec<f64> = (0..40)
            .map(|k| {
                let x = k as f64;
                1000.0 * (-(x - 10.0).powi(2) / 18.0).exp() + 1200.0 * (-(x - 30.0).powi(2) / 18.0).exp()
            })
            .collect();
        let series = weekly(&values);
        // brute force: argmin of the smoothed curve between the two peaks
        let smooth: Vec<f64> = (0..40)
            .map(|i: usize| {
                let lo = i.saturating_sub(2);
                let hi = (i + 3).min(40);
                values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let oracle = (10..30).min_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).unwrap();
        assert_eq!(oracle, 20);
        let cfg = detect_phases(&series, 2).unwrap();
        assert_eq!(cfg.ranges()[1].start, series[20].0);
        for (date, _) in &series {
            let p = cfg.assign(*date).unwrap();
            let expected = if *date < series[20].0 { 0 } else { 1 };
            assert_eq!(p, expected);
        }
    }

    #[test]
    fn plateau_that_keeps_falling_is_not_a_valley() {
        let s = [5.0, 4.0, 4.0, 3.0, 6.0];
        assert_eq!(valleys(&s), vec![(3, 2.0)]);
    }
}
