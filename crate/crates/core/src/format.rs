//! Number formatting shared by the CSV writers.

use crate::error::Error;

/// Rounds to 12 significant digits and prints the shortest representation.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    if rounded == 0.0 {
        return "0".to_string();
    }
    rounded.to_string()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_float;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_float(0.1 + 0.2), "0.3");
        assert_eq!(fmt_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_float(-0.0), "0");
        assert_eq!(fmt_float(14.0), "14");
        assert_eq!(fmt_float(123_456_789.123_456_7), "123456789.123");
    }
}
