//! Value lists for `remix-prob`.

use crate::CliError;

/// Parses `a,b,c` or an inclusive `start:stop:step` range.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = |m: &str| CliError::Usage(format!("invalid grid {s:?}: {m}"));
    let s = s.trim();
    if s.is_empty() {
        return Err(bad("empty"));
    }
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step"));
        };
        if !(step > 0.0) || stop < start {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Rounded to 12 decimals so 0.1 + 0.2 prints as 0.3.
        Ok((0..count)
            .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
            .collect())
    } else {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect()
    }
}
