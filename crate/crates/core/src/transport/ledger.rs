use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::path::PathOutcome;
use super::Direction;
use crate::error::{Error, Result};

/// Valid path works per direction, with dropped-path counts and
/// provenance (model hashes, grid, sigma).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkLedger {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub invalid_forward: usize,
    pub invalid_backward: usize,
    pub meta: BTreeMap<String, String>,
}

impl WorkLedger {
    pub fn from_outcomes(forward: &[PathOutcome], backward: &[PathOutcome]) -> Self {
        let split = |o: &[PathOutcome]| {
            let works: Vec<f64> = o.iter().filter(|p| p.valid).map(|p| p.work).collect();
            let bad = o.len() - works.len();
            (works, bad)
        };
        let (forward, invalid_forward) = split(forward);
        let (backward, invalid_backward) = split(backward);
        WorkLedger {
            forward,
            backward,
            invalid_forward,
            invalid_backward,
            meta: BTreeMap::new(),
        }
    }

    pub fn works(&self, direction: Direction) -> &[f64] {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty() && self.backward.is_empty()
    }

    /// Fraction of simulated paths that were dropped.
    pub fn drop_rate(&self) -> f64 {
        let bad = self.invalid_forward + self.invalid_backward;
        let total = bad + self.forward.len() + self.backward.len();
        if total == 0 {
            0.0
        } else {
            bad as f64 / total as f64
        }
    }
}

pub fn format_works_csv(ledger: &WorkLedger) -> String {
    let mut out = String::from("direction,work,valid\n");
    for (dir, works, bad) in [
        (Direction::Forward, &ledger.forward, ledger.invalid_forward),
        (Direction::Backward, &ledger.backward, ledger.invalid_backward),
    ] {
        for w in works {
            let _ = writeln!(out, "{},{w:.16e},1", dir.name());
        }
        for _ in 0..bad {
            let _ = writeln!(out, "{},NaN,0", dir.name());
        }
    }
    out
}

pub fn parse_works_csv(text: &str, path: &Path) -> Result<WorkLedger> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("direction,work,valid") => {}
        _ => return Err(err(1, "expected header `direction,work,valid`".into())),
    }
    let mut ledger = WorkLedger::default();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let valid = match fields[2] {
            "1" => true,
            "0" => false,
            other => return Err(err(line_no, format!("valid must be 0 or 1, got `{other}`"))),
        };
        let forward = match fields[0] {
            "forward" => true,
            "backward" => false,
            other => return Err(err(line_no, format!("unknown direction `{other}`"))),
        };
        if !valid {
            if forward {
                ledger.invalid_forward += 1;
            } else {
                ledger.invalid_backward += 1;
            }
            continue;
        }
        let w: f64 = fields[1]
            .parse()
            .map_err(|_| err(line_no, format!("not a number: `{}`", fields[1])))?;
        if !w.is_finite() {
            return Err(err(line_no, "row marked valid has a non-finite work".into()));
        }
        if forward {
            ledger.forward.push(w);
        } else {
            ledger.backward.push(w);
        }
    }
    Ok(ledger)
}

pub fn format_meta(meta: &BTreeMap<String, String>) -> String {
    meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_meta(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Writes `works.csv`; provenance goes to a sibling `<name>.meta` file of
/// `key=value` lines when present.
pub fn write_works_csv(path: &Path, ledger: &WorkLedger) -> Result<()> {
    crate::io::write_atomic(path, format_works_csv(ledger).as_bytes())?;
    if !ledger.meta.is_empty() {
        crate::io::write_atomic(&path.with_extension("meta"), format_meta(&ledger.meta).as_bytes())?;
    }
    Ok(())
}

pub fn read_works_csv(path: &Path) -> Result<WorkLedger> {
    let text = std::fs::read_to_string(path)?;
    let mut ledger = parse_works_csv(&text, path)?;
    if let Ok(meta) = std::fs::read_to_string(path.with_extension("meta")) {
        ledger.meta = parse_meta(&meta);
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_invalid_counts() {
        let outcomes = |w: &[f64]| -> Vec<PathOutcome> {
            w.iter()
                .map(|&work| PathOutcome {
                    work,
                    valid: work.is_finite(),
                })
                .collect()
        };
        let ledger = WorkLedger::from_outcomes(&outcomes(&[0.1, f64::NAN, -0.3]), &outcomes(&[1.0 / 3.0]));
        assert_eq!(ledger.invalid_forward, 1);
        assert!((ledger.drop_rate() - 0.25).abs() < 1e-15);
        let text = format_works_csv(&ledger);
        let back = parse_works_csv(&text, Path::new("w")).unwrap();
        assert_eq!(back, ledger);
    }

    #[test]
    fn malformed_rows() {
        assert!(parse_works_csv("dir,work\n", Path::new("w")).is_err());
        let bad = "direction,work,valid\nforward,abc,1\n";
        assert!(matches!(parse_works_csv(bad, Path::new("w")), Err(Error::Parse { line: 2, .. })));
        let empty = parse_works_csv("direction,work,valid\n", Path::new("w")).unwrap();
        assert!(empty.is_empty());
    }
}
