//! Trajectory CSV files and `key=value` report blocks.

use std::fmt::Display;
use std::io::{self, Read, Write};

use timebarrier::sweep::fmt_f64;
use timebarrier::TrajectorySample;

/// One parsed row of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Option<f64>,
    pub w: Option<f64>,
}

pub fn trajectory_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|i| format!("x_{i}")));
    h.push("V".into());
    h.push("W".into());
    h
}

/// Writes `t,x_1..x_n,V,W` with 17 significant digits; missing `V` or `W`
/// become empty fields.
pub fn write_trajectory<W: Write>(out: W, samples: &[TrajectorySample]) -> Result<(), csv::Error> {
    let dim = samples.first().map_or(1, |s| s.x.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(dim))?;
    for s in samples {
        let mut rec = Vec::with_capacity(dim + 3);
        rec.push(fmt_f64(s.t));
        rec.extend(s.x.iter().map(|v| fmt_f64(*v)));
        rec.push(s.v.map(fmt_f64).unwrap_or_default());
        rec.push(s.w.map(fmt_f64).unwrap_or_default());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field(field: &str, line: u64) -> Result<Option<f64>, String> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| format!("line {line}: bad number `{field}`"))
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Vec<TrajectoryRow>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    let n = header.len();
    if n < 4 || header.get(0) != Some("t") || header.get(n - 2) != Some("V") || header.get(n - 1) != Some("W") {
        return Err(format!("unexpected header: {:?}", header.iter().collect::<Vec<_>>()));
    }
    let dim = n - 3;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = rec.position().map_or(0, |p| p.line());
        let value = |i: usize| parse_field(rec.get(i).unwrap_or(""), line);
        let t = value(0)?.ok_or_else(|| format!("line {line}: missing t"))?;
        let x = (1..=dim)
            .map(|i| value(i)?.ok_or_else(|| format!("line {line}: missing x_{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(TrajectoryRow { t, x, v: value(dim + 1)?, w: value(dim + 2)? });
    }
    Ok(rows)
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.set(key, fmt_f64(value))
    }

    pub fn set_opt_f64(&mut self, key: &str, value: Option<f64>) -> &mut Self {
        match value {
            Some(v) => self.set_f64(key, v),
            None => self.set(key, "none"),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write_to(&self, out: &mut dyn Write) -> io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k}={v}")?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Self { entries }
    }
}
