//! Number formatting for CSV output.

/// `%g`-style rendering with six significant digits and no trailing zeros.
pub fn probability(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

/// Grid values: shortest representation that round-trips.
pub fn value(x: f64) -> String {
    format!("{x}")
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(probability(0.0), "0");
        assert_eq!(probability(0.044), "0.044");
        assert_eq!(probability(0.04400000000000001), "0.044");
        assert_eq!(probability(0.0010000000000000002), "0.001");
        assert_eq!(probability(0.8), "0.8");
        assert_eq!(probability(1.0), "1");
        assert_eq!(probability(0.0203995), "0.0203995");
        assert_eq!(probability(1.3498980316301e-3), "0.0013499");
        assert_eq!(probability(2.5e-6), "2.5e-6");
        assert_eq!(probability(9.9999996e-5), "0.0001");
        assert_eq!(probability(123456789.0), "1.23457e8");
        assert_eq!(probability(0.123456789), "0.123457");
    }

    #[test]
    fn grid_values() {
        assert_eq!(value(0.5), "0.5");
        assert_eq!(value(32.5), "32.5");
        assert_eq!(value(2.0), "2");
    }
}
