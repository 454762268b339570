//! ISO-8601 week identifiers and contiguous week ranges.
//!
//! All weekly series in this crate are keyed by ISO week (Monday start).
//! `WeekId` wraps an (ISO year, ISO week) pair and orders chronologically;
//! arithmetic goes through the week's Monday so 53-week years are handled
//! by the calendar, not by hand.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::WeekError;

/// An ISO-8601 week: year plus week number (1..=52 or 53).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WeekId {
    pub year: i32,
    pub week: u32,
}

impl WeekId {
    /// Builds a week id, rejecting week numbers that do not exist in `year`.
    pub fn new(year: i32, week: u32) -> Result<Self, WeekError> {
        match NaiveDate::from_isoywd_opt(year, week, Weekday::Mon) {
            Some(_) => Ok(WeekId { year, week }),
            None => Err(WeekError::InvalidWeek { year, week }),
        }
    }

    /// The ISO week containing `date`.
    pub fn from_date(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        WeekId {
            year: iso.year(),
            week: iso.week(),
        }
    }

    /// Monday of this week.
    pub fn monday(&self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
            .expect("validated on construction")
    }

    /// Sunday of this week.
    pub fn sunday(&self) -> NaiveDate {
        self.monday() + Duration::days(6)
    }

    /// The week `n` weeks after this one (negative `n` steps back).
    pub fn add_weeks(&self, n: i64) -> Self {
        WeekId::from_date(self.monday() + Duration::weeks(n))
    }

    pub fn next(&self) -> Self {
        self.add_weeks(1)
    }

    pub fn prev(&self) -> Self {
        self.add_weeks(-1)
    }

    /// Signed distance in weeks: `self - other`.
    pub fn weeks_since(&self, other: &WeekId) -> i64 {
        (self.monday() - other.monday()).num_days() / 7
    }
}

impl fmt::Display for WeekId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-W{:02}", self.year, self.week)
    }
}

impl FromStr for WeekId {
    type Err = WeekError;

    /// Parses `"2004-W53"`.
    fn from_str(s: &str) -> Result<Self, WeekError> {
        let bad = || WeekError::UnparseableWeek(s.to_string());
        let (y, w) = s.split_once("-W").ok_or_else(bad)?;
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        WeekId::new(year, week)
    }
}

/// An inclusive, contiguous range of ISO weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekRange {
    pub start: WeekId,
    pub end: WeekId,
}

impl WeekRange {
    pub fn new(start: WeekId, end: WeekId) -> Result<Self, WeekError> {
        if start > end {
            return Err(WeekError::EmptyRange { start, end });
        }
        Ok(WeekRange { start, end })
    }

    /// Number of weeks in the range (inclusive of both ends).
    pub fn len(&self) -> usize {
        (self.end.weeks_since(&self.start) + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees start <= end
    }

    pub fn contains(&self, week: &WeekId) -> bool {
        *week >= self.start && *week <= self.end
    }

    /// All weeks of the range in chronological order.
    pub fn iter(&self) -> impl Iterator<Item = WeekId> {
        let start = self.start;
        let n = self.len();
        (0..n).map(move |i| start.add_weeks(i as i64))
    }

    /// The overlap of two ranges, if any.
    pub fn intersect(&self, other: &WeekRange) -> Option<WeekRange> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        if start <= end {
            Some(WeekRange { start, end })
        } else {
            None
        }
    }
}

impl fmt::Display for WeekRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}
