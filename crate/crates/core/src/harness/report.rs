//! Accuracy CSV parsing, per-client summaries and gnuplot data.

use std::collections::BTreeMap;

use super::experiment::{BASELINE_CLIENT, CSV_HEADER};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub round: u32,
    pub client: String,
    pub accuracy: f64,
    pub mode: String,
    pub scheme: String,
}

/// Parses rows; blank input and a lone header both give no rows.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| HarnessError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |msg: &str| HarnessError::Parse {
            line,
            msg: msg.to_string(),
        };
        if record.iter().eq(CSV_HEADER.split(',')) {
            continue;
        }
        let (Some(round), Some(client), Some(acc), Some(mode), Some(scheme), None) = (
            record.get(0),
            record.get(1),
            record.get(2),
            record.get(3),
            record.get(4),
            record.get(5),
        ) else {
            return Err(err("expected 5 comma-separated fields"));
        };
        let accuracy: f64 = acc.parse().map_err(|_| err("bad accuracy"))?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(err("accuracy outside [0, 1]"));
        }
        out.push(CsvRow {
            round: round.parse().map_err(|_| err("bad round"))?,
            client: client.to_string(),
            accuracy,
            mode: mode.to_string(),
            scheme: scheme.to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientCurve {
    pub client: String,
    /// `(round, accuracy)` in round order.
    pub points: Vec<(u32, f64)>,
    pub final_accuracy: f64,
    pub max_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub curves: Vec<ClientCurve>,
    pub baseline: Option<f64>,
}

pub fn summarize(rows: &[CsvRow]) -> Summary {
    let mut by_client: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
    let mut baseline = None;
    for r in rows {
        if r.client == BASELINE_CLIENT {
            baseline = Some(r.accuracy);
        } else {
            by_client.entry(&r.client).or_default().push((r.round, r.accuracy));
        }
    }
    let curves = by_client
        .into_iter()
        .map(|(client, mut points)| {
            points.sort_by_key(|p| p.0);
            ClientCurve {
                client: client.to_string(),
                final_accuracy: points.last().expect("non-empty").1,
                max_accuracy: points.iter().map(|p| p.1).fold(f64::MIN, f64::max),
                points,
            }
        })
        .collect();
    Summary { curves, baseline }
}

pub fn report(csv: &str) -> Result<Summary, HarnessError> {
    Ok(summarize(&parse_csv(csv)?))
}

impl Summary {
    pub fn is_empty(&self) -> bool {
        self.curves.is_empty() && self.baseline.is_none()
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>8} {:>8}\n", "client", "rounds", "final", "max");
        for c in &self.curves {
            out.push_str(&format!(
                "{:<10} {:>8} {:>8.4} {:>8.4}\n",
                c.client,
                c.points.len(),
                c.final_accuracy,
                c.max_accuracy
            ));
        }
        if let Some(b) = self.baseline {
            out.push_str(&format!("{:<10} {:>8} {:>8.4} {:>8.4}\n", BASELINE_CLIENT, "-", b, b));
        }
        out
    }

    /// Whitespace-separated columns: round, one per client, then the
    /// constant baseline. Missing points are `NaN`.
    pub fn gnuplot_data(&self) -> String {
        let mut out = String::from("# round");
        for c in &self.curves {
            out.push(' ');
            out.push_str(&c.client);
        }
        if self.baseline.is_some() {
            out.push(' ');
            out.push_str(BASELINE_CLIENT);
        }
        out.push('\n');
        let rounds: std::collections::BTreeSet<u32> =
            self.curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).collect();
        for r in rounds {
            out.push_str(&r.to_string());
            for c in &self.curves {
                match c.points.iter().find(|p| p.0 == r) {
                    Some(p) => out.push_str(&format!(" {}", p.1)),
                    None => out.push_str(" NaN"),
                }
            }
            if let Some(b) = self.baseline {
                out.push_str(&format!(" {b}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_empty_csv_gives_empty_summary() {
        assert!(report("").unwrap().is_empty());
        assert!(report(&format!("{CSV_HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn test_single_round_three_clients() {
        let csv = "round,client,accuracy,mode,scheme\n0,central,0.9,full,homogeneous\n\
                   1,1,0.5,full,homogeneous\n1,2,0.6,full,homogeneous\n1,3,0.7,full,homogeneous\n";
        let s = report(csv).unwrap();
        assert_eq!(s.curves.len(), 3);
        assert!(s.curves.iter().all(|c| c.points.len() == 1));
        assert_eq!(s.baseline, Some(0.9));
        let data = s.gnuplot_data();
        assert_eq!(data.lines().next().unwrap(), "# round 1 2 3 central");
        assert_eq!(data.lines().nth(1).unwrap(), "1 0.5 0.6 0.7 0.9");
    }

    #[test]
    fn test_parse_errors() {
        assert!(matches!(report("1,1,0.5\n"), Err(HarnessError::Parse { line: 1, .. })));
        assert!(matches!(report("1,1,1.5,full,x\n"), Err(HarnessError::Parse { .. })));
        assert!(matches!(report("x,1,0.5,full,x\n"), Err(HarnessError::Parse { .. })));
    }

    #[test]
    fn test_missing_point_is_nan() {
        let csv = "1,1,0.5,full,h\n2,1,0.6,full,h\n2,2,0.4,full,h\n";
        let s = report(csv).unwrap();
        assert!(s.gnuplot_data().contains("1 0.5 NaN"));
        assert!(s.baseline.is_none());
    }
}
