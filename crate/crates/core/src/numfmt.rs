//! Fixed 17-significant-digit float formatting for text outputs.

use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serializer};
use serde_json::value::RawValue;

/// `v` in scientific notation with 17 significant digits; non-finite values
/// become `inf`, `-inf` or `nan`.
pub fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

/// Serializes a float list as JSON numbers with 17 significant digits.
pub fn serialize_vec17<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for &v in values {
        if !v.is_finite() {
            return Err(serde::ser::Error::custom("non-finite value in signature"));
        }
        let raw = RawValue::from_string(fmt17(v)).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

pub fn deserialize_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    Vec::<f64>::deserialize(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [std::f64::consts::SQRT_2, -1.0 / 3.0, 0.0, 1e-300, 6.02e23] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let mantissa = s.split('e').next().unwrap();
            let digits = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
            assert_eq!(digits, 17);
        }
        assert_eq!(fmt17(f64::INFINITY), "inf");
    }
}
