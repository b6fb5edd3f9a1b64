//! Trace CSV export and import.
//!
//! Floats are written with `Display`, which emits the shortest decimal
//! that parses back to the same bits, so export followed by import is
//! lossless. Missing optional values are empty cells.

use std::io::{Read, Write};

use rollrc::multi::MultiStepRecord;
use rollrc::StepRecord;

use crate::error::{Result, StreamError};

pub const TRACE_COLUMNS: [&str; 12] = [
    "step",
    "loss",
    "theta_pre",
    "theta_post",
    "set_lo",
    "set_hi",
    "set_size",
    "covered",
    "adjustment",
    "score",
    "label",
    "group",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn field<'a>(record: &'a csv::StringRecord, idx: usize, row: usize, columns: &[String]) -> Result<&'a str> {
    record.get(idx).ok_or_else(|| StreamError::Missing {
        row,
        column: columns.get(idx).cloned().unwrap_or_default(),
    })
}

fn parse<T: std::str::FromStr>(raw: &str, row: usize, column: &str) -> Result<T> {
    raw.parse().map_err(|_| StreamError::Parse {
        row,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

fn parse_opt<T: std::str::FromStr>(raw: &str, row: usize, column: &str) -> Result<Option<T>> {
    if raw.is_empty() {
        Ok(None)
    } else {
        parse(raw, row, column).map(Some)
    }
}

/// Writes one row per record; `groups`, when given, must match in length.
pub fn write_trace<W: Write>(writer: W, records: &[StepRecord<f64>], groups: Option<&[u32]>) -> Result<()> {
    if let Some(g) = groups {
        if g.len() != records.len() {
            return Err(StreamError::Config(format!("{} groups for {} records", g.len(), records.len())));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_COLUMNS)?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            r.step.to_string(),
            r.loss.to_string(),
            r.theta_pre.to_string(),
            r.theta_post.to_string(),
            opt(r.set_lo),
            opt(r.set_hi),
            r.set_size.to_string(),
            u8::from(r.covered).to_string(),
            r.adjustment.to_string(),
            opt(r.score),
            opt(r.label),
            opt(groups.map(|g| g[i])),
        ])?;
    }
    w.flush().map_err(|e| StreamError::Csv(e.into()))?;
    Ok(())
}

/// Inverse of [`write_trace`]; returns the records and, if every row has
/// one, the group column.
pub fn read_trace<R: Read>(reader: R) -> Result<(Vec<StepRecord<f64>>, Option<Vec<u32>>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_COLUMNS {
        return Err(StreamError::Config(format!("unexpected trace header {header:?}")));
    }
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut all_grouped = true;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let f = |idx: usize| field(&rec, idx, row, &header);
        let covered = match f(7)? {
            "1" => true,
            "0" => false,
            other => return Err(parse::<bool>(other, row, "covered").unwrap_err()),
        };
        records.push(StepRecord {
            step: parse(f(0)?, row, "step")?,
            loss: parse(f(1)?, row, "loss")?,
            theta_pre: parse(f(2)?, row, "theta_pre")?,
            theta_post: parse(f(3)?, row, "theta_post")?,
            set_lo: parse_opt(f(4)?, row, "set_lo")?,
            set_hi: parse_opt(f(5)?, row, "set_hi")?,
            set_size: parse(f(6)?, row, "set_size")?,
            covered,
            adjustment: parse(f(8)?, row, "adjustment")?,
            score: parse_opt(f(9)?, row, "score")?,
            label: parse_opt(f(10)?, row, "label")?,
        });
        match parse_opt::<u32>(f(11)?, row, "group")? {
            Some(g) => groups.push(g),
            None => all_grouped = false,
        }
    }
    let groups = (all_grouped && !records.is_empty()).then_some(groups);
    Ok((records, groups))
}

/// Column names for a multi-risk trace with `k` risks.
pub fn multi_trace_columns(k: usize) -> Vec<String> {
    let mut cols = vec!["step".to_string()];
    for name in ["loss", "theta_pre", "theta_post"] {
        cols.extend((1..=k).map(|i| format!("{name}_{i}")));
    }
    cols.extend(["adjustment", "set_size", "covered"].map(String::from));
    cols
}

pub fn write_multi_trace<W: Write>(writer: W, records: &[MultiStepRecord<f64>]) -> Result<()> {
    let k = records.first().map_or(0, |r| r.losses.len());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(multi_trace_columns(k))?;
    for r in records {
        if r.losses.len() != k || r.theta_pre.len() != k || r.theta_post.len() != k {
            return Err(StreamError::Config(format!("record {} has inconsistent risk count", r.step)));
        }
        let mut row = vec![r.step.to_string()];
        for v in r.losses.iter().chain(&r.theta_pre).chain(&r.theta_post) {
            row.push(v.to_string());
        }
        row.push(r.adjustment.to_string());
        row.push(r.set_size.to_string());
        row.push(u8::from(r.covered).to_string());
        w.write_record(row)?;
    }
    w.flush().map_err(|e| StreamError::Csv(e.into()))?;
    Ok(())
}

pub fn read_multi_trace<R: Read>(reader: R) -> Result<Vec<MultiStepRecord<f64>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || (header.len() - 4) % 3 != 0 {
        return Err(StreamError::Config(format!("unexpected multi-risk trace header {header:?}")));
    }
    let k = (header.len() - 4) / 3;
    if header != multi_trace_columns(k) {
        return Err(StreamError::Config(format!("unexpected multi-risk trace header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let num = |idx: usize| -> Result<f64> { parse(field(&rec, idx, row, &header)?, row, &header[idx]) };
        let block = |start: usize| -> Result<Vec<f64>> { (start..start + k).map(&num).collect() };
        let covered = match field(&rec, 3 * k + 3, row, &header)? {
            "1" => true,
            "0" => false,
            other => return Err(parse::<bool>(other, row, "covered").unwrap_err()),
        };
        out.push(MultiStepRecord {
            step: parse(field(&rec, 0, row, &header)?, row, "step")?,
            losses: block(1)?,
            theta_pre: block(1 + k)?,
            theta_post: block(1 + 2 * k)?,
            adjustment: num(1 + 3 * k)?,
            set_size: num(2 + 3 * k)?,
            covered,
        });
    }
    Ok(out)
}
