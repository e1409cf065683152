use chrono::{Datelike, NaiveDate};

use crate::data::DateRange;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Half-width (days) of the calendar window around the target day.
pub const CLIMATOLOGY_HALF_WINDOW: i64 = 7;

fn circular_day_distance(a: NaiveDate, b: NaiveDate) -> i64 {
    let d = (a.ordinal0() as i64 - b.ordinal0() as i64).abs();
    d.min(365 - d)
}

/// Historical observations within `CLIMATOLOGY_HALF_WINDOW` calendar days of
/// `target` (wrapping across the year end), restricted to `history`.
pub fn climatology_pool(dates: &[NaiveDate], obs: &[Option<f64>], history: DateRange, target: NaiveDate) -> Vec<f64> {
    dates
        .iter()
        .zip(obs)
        .filter(|(d, _)| history.contains(**d) && circular_day_distance(**d, target) <= CLIMATOLOGY_HALF_WINDOW)
        .filter_map(|(_, q)| *q)
        .collect()
}

/// `members` draws with replacement from the climatology pool of `target`.
pub fn climatology_members(pool: &[f64], members: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::arg("no historical observations near the target day"));
    }
    Ok((0..members).map(|_| pool[rng.below(pool.len())]).collect())
}
