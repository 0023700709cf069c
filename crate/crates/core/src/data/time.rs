use chrono::{NaiveDateTime, Timelike};

use crate::error::{Error, Result};

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Parses an ISO-8601 local timestamp. Accepts `T` or a space as the
/// separator, optional seconds, and a trailing `Z`.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t);
        }
    }
    Err(Error::data(format!("unparseable timestamp `{s}`")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn is_whole_hour(t: &NaiveDateTime) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

pub fn floor_hour(t: &NaiveDateTime) -> NaiveDateTime {
    t.with_minute(0)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("zero minute/second is always valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats() {
        let a = parse_timestamp("2019-05-05T13:00:00").unwrap();
        assert_eq!(parse_timestamp("2019-05-05 13:00").unwrap(), a);
        assert_eq!(parse_timestamp("2019-05-05T13:00:00Z").unwrap(), a);
        assert_eq!(format_timestamp(&a), "2019-05-05T13:00:00");
        assert!(parse_timestamp("yesterday").is_err());
        let b = parse_timestamp("2019-05-05T13:55:00").unwrap();
        assert!(!is_whole_hour(&b));
        assert_eq!(floor_hour(&b), a);
    }
}
