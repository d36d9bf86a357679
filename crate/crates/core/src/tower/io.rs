//! Plain-text tower files.
//!
//! ```text
//! # comment
//! xi = 5.0000000000000000e-1
//! truncated_mass = 0e0
//! symbol,weight,roof
//! 1,5.0000000000000000e-1,1
//! ```
//!
//! Floats are written with 17 significant digits, so a round trip is
//! bit-exact.

use std::fmt::Write as _;

use super::{Symbol, TowerError, TowerSpec};

const HEADER: &str = "symbol,weight,roof";

impl TowerSpec {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "xi = {:.16e}", self.xi());
        let _ = writeln!(out, "truncated_mass = {:.16e}", self.truncated_mass());
        out.push_str(HEADER);
        out.push('\n');
        for s in self.symbols() {
            let _ = writeln!(out, "{},{:.16e},{}", s.id, s.weight, s.roof);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TowerError> {
        let err = |line: usize, message: String| TowerError::Parse { line, message };
        let mut xi = None;
        let mut truncated = 0.0;
        let mut in_table = false;
        let mut symbols = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !in_table {
                if line == HEADER {
                    in_table = true;
                    continue;
                }
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| err(line_no, format!("expected `key = value` or `{HEADER}`")))?;
                let value: f64 = value
                    .trim()
                    .parse()
                    .map_err(|e| err(line_no, format!("bad number: {e}")))?;
                match key.trim() {
                    "xi" => xi = Some(value),
                    "truncated_mass" => truncated = value,
                    other => return Err(err(line_no, format!("unknown key `{other}`"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(line_no, format!("expected 3 fields, found {}", fields.len())));
            }
            let id = fields[0]
                .parse()
                .map_err(|e| err(line_no, format!("bad symbol id: {e}")))?;
            let weight = fields[1]
                .parse()
                .map_err(|e| err(line_no, format!("bad weight: {e}")))?;
            let roof = fields[2]
                .parse()
                .map_err(|e| err(line_no, format!("bad roof: {e}")))?;
            symbols.push(Symbol { id, weight, roof });
        }
        if !in_table {
            return Err(err(0, format!("missing `{HEADER}` table")));
        }
        let xi = xi.ok_or_else(|| err(0, "missing `xi`".into()))?;
        TowerSpec::with_truncation(symbols, xi, truncated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::fixtures::spec;
    use proptest::prelude::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let text = "# a tower\n\nxi = 0.25\nsymbol,weight,roof\n 7, 0.5 , 1\n9,0.5,3\n";
        let t = TowerSpec::from_text(text).unwrap();
        assert_eq!(t.xi(), 0.25);
        assert_eq!(t.symbols()[1], Symbol { id: 9, weight: 0.5, roof: 3 });
    }

    #[test]
    fn reports_line_numbers() {
        let text = "xi = 0.5\nsymbol,weight,roof\n1,0.5\n";
        assert!(matches!(TowerSpec::from_text(text), Err(TowerError::Parse { line: 3, .. })));
        assert!(matches!(
            TowerSpec::from_text("xi = 0.5\n"),
            Err(TowerError::Parse { line: 0, .. })
        ));
    }

    #[test]
    fn validation_applies_after_parsing() {
        let text = "xi = 0.5\nsymbol,weight,roof\n1,0.4,1\n";
        assert!(matches!(TowerSpec::from_text(text), Err(TowerError::WeightSum { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(raw in prop::collection::vec((1e-6f64..1.0, 1u32..50), 1..20),
                               xi in 0.01f64..0.99) {
            let total: f64 = raw.iter().map(|r| r.0).sum();
            let entries: Vec<(f64, u32)> = raw.iter().map(|&(w, h)| (w / total, h)).collect();
            let sum: f64 = crate::tower::neumaier_sum(entries.iter().map(|e| e.0));
            prop_assume!((sum - 1.0).abs() <= 1e-12);
            let t = spec(&entries, xi);
            let back = TowerSpec::from_text(&t.to_text()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
