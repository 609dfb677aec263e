//! Number formatting shared by the CSV writers.

/// Formats `v` like C's `%.9g`: nine significant digits, trailing zeros
/// stripped, scientific notation outside `[1e-4, 1e9)`.
pub fn sig9(v: f64) -> String {
    const P: i32 = 9;
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-0.5, "-0.5"),
            (1.0 / 3.0, "0.333333333"),
            (2.0f64.sqrt(), "1.41421356"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (1.5e-7, "1.5e-07"),
            (0.0001, "0.0001"),
            (0.000012345, "1.2345e-05"),
            (0.025, "0.025"),
            (2.9875, "2.9875"),
        ];
        for (v, want) in cases {
            assert_eq!(sig9(v), want, "{v}");
        }
    }
}
