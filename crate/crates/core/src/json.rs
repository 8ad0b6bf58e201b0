//! Float formatting for hand-written JSON records.

/// Formats a finite float like C's `%.17g`: 17 significant digits, trailing
/// zeros stripped, scientific notation outside `[1e-4, 1e17)`.
///
/// Panics on non-finite input; JSON has no representation for it.
pub fn fmt_g17(v: f64) -> String {
    assert!(v.is_finite(), "cannot write non-finite {v} as JSON");
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // `{:.16e}` is correctly rounded to 17 significant digits.
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp) as usize;
    strip_zeros(&format!("{v:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
