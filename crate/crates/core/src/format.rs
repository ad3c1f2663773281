//! Float formatting shared by every text output.

/// Scientific notation with 17 significant digits; parsing the result
/// recovers the exact `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::fmt17;

    #[test]
    fn round_trips_bits() {
        for &x in &[0.0, -0.0, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, -2.5] {
            let back: f64 = fmt17(x).parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
