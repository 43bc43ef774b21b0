//! Lexical rules for cell values shared by the dictionary, table and
//! de-identification code.

use chrono::{NaiveDate, NaiveDateTime};

fn all_digits(s: &[u8]) -> bool {
    !s.is_empty() && s.iter().all(u8::is_ascii_digit)
}

fn strip_sign(s: &str) -> &[u8] {
    let b = s.as_bytes();
    match b.first() {
        Some(b'+') | Some(b'-') => &b[1..],
        _ => b,
    }
}

/// `[+-]?digits`, representable as i64.
pub fn parse_integer(s: &str) -> Option<i64> {
    if !all_digits(strip_sign(s)) {
        return None;
    }
    s.parse().ok()
}

/// Period radix only: `[+-]?(digits[.digits*] | .digits)`. No exponents, no
/// thousands separators.
pub fn parse_decimal(s: &str) -> Option<f64> {
    let body = strip_sign(s);
    let ok = match body.iter().position(|&c| c == b'.') {
        None => all_digits(body),
        Some(dot) => {
            let (int, frac) = (&body[..dot], &body[dot + 1..]);
            let int_ok = int.is_empty() || all_digits(int);
            let frac_ok = frac.is_empty() || all_digits(frac);
            int_ok && frac_ok && !(int.is_empty() && frac.is_empty())
        }
    };
    if !ok {
        return None;
    }
    s.parse().ok()
}

/// ISO-8601 calendar date, `YYYY-MM-DD`.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    if !(all_digits(&b[..4]) && all_digits(&b[5..7]) && all_digits(&b[8..])) {
        return None;
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

/// `YYYY-MM-DDThh:mm:ss`.
pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let b = s.as_bytes();
    if b.len() != 19 || b[10] != b'T' || b[13] != b':' || b[16] != b':' {
        return None;
    }
    parse_date(&s[..10])?;
    if !(all_digits(&b[11..13]) && all_digits(&b[14..16]) && all_digits(&b[17..])) {
        return None;
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok()
}

/// `true`/`false`, case-insensitive.
pub fn parse_bool(s: &str) -> Option<bool> {
    if s.eq_ignore_ascii_case("true") {
        Some(true)
    } else if s.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

pub const DATE_FORMAT: &str = "%Y-%m-%d";
pub const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers() {
        assert_eq!(parse_integer("42"), Some(42));
        assert_eq!(parse_integer("-7"), Some(-7));
        assert_eq!(parse_integer("+3"), Some(3));
        for bad in ["", "-", "1.0", "1e3", " 1", "1,000", "abc"] {
            assert_eq!(parse_integer(bad), None, "{bad:?}");
        }
    }

    #[test]
    fn decimals() {
        assert_eq!(parse_decimal("3.5"), Some(3.5));
        assert_eq!(parse_decimal(".5"), Some(0.5));
        assert_eq!(parse_decimal("5."), Some(5.0));
        assert_eq!(parse_decimal("-12"), Some(-12.0));
        for bad in ["", ".", "1,5", "1e3", "NaN", "inf", "1.2.3", "1 000"] {
            assert_eq!(parse_decimal(bad), None, "{bad:?}");
        }
    }

    #[test]
    fn dates() {
        assert!(parse_date("2020-02-29").is_some());
        assert!(parse_date("2021-02-29").is_none());
        assert!(parse_date("2021-3-10").is_none());
        assert!(parse_date("03/10/2021").is_none());
        assert!(parse_datetime("2021-03-10T08:15:00").is_some());
        assert!(parse_datetime("2021-03-10 08:15:00").is_none());
        assert!(parse_datetime("2021-03-10T25:15:00").is_none());
    }

    #[test]
    fn booleans() {
        assert_eq!(parse_bool("TRUE"), Some(true));
        assert_eq!(parse_bool("False"), Some(false));
        assert_eq!(parse_bool("1"), None);
    }
}
