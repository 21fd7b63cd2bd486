/// Parses an inclusive `start:stop:step` range of degrees.
pub fn parse_angles(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, stop, step] = parts.as_slice() else {
        return Err(format!("angle spec `{spec}` is not start:stop:step"));
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("`{s}` in angle spec `{spec}` is not a number"))
    };
    let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
    if step <= 0.0 {
        return Err(format!("angle step must be positive in `{spec}`"));
    }
    if stop < start {
        return Err(format!("angle stop precedes start in `{spec}`"));
    }
    if start < 0.0 || stop >= 360.0 {
        return Err(format!("angles in `{spec}` must lie in [0, 360)"));
    }
    // Count from the integer index so accumulated rounding cannot drop the
    // last angle.
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        let a = parse_angles("0:350:10").unwrap();
        assert_eq!(a.len(), 36);
        assert_eq!(a[35], 350.0);
        assert_eq!(parse_angles("0:0:1").unwrap(), [0.0]);
        assert_eq!(parse_angles("0:270:90").unwrap(), [0.0, 90.0, 180.0, 270.0]);
        assert_eq!(parse_angles("0:1:0.1").unwrap().len(), 11);
    }

    #[test]
    fn malformed() {
        for bad in [
            "", "0:10", "0:10:0", "10:0:5", "a:10:1", "0:360:10", "-10:0:5", "0:10:1:2",
        ] {
            assert!(parse_angles(bad).is_err(), "{bad}");
        }
    }
}
