//! Simulation trace records and their CSV form.
//!
//! A trace file starts with `#` comment lines carrying the schema version and
//! the graph the run used, followed by a header row and one row per event.
//! Floats are written with 9 significant digits; missing values are empty.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use crate::ddm::Decision;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Enqueue,
    Allocate,
    Decide,
    Detect,
    Rest,
    Route,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enqueue => "enqueue",
            EventKind::Allocate => "allocate",
            EventKind::Decide => "decide",
            EventKind::Detect => "detect",
            EventKind::Rest => "rest",
            EventKind::Route => "route",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "enqueue" => EventKind::Enqueue,
            "allocate" => EventKind::Allocate,
            "decide" => EventKind::Decide,
            "detect" => EventKind::Detect,
            "rest" => EventKind::Rest,
            "route" => EventKind::Route,
            other => return Err(Error::Trace(format!("unknown event kind {other:?}"))),
        })
    }
}

/// One row of the trace. Regions are 0-based here and 1-based on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub event: EventKind,
    pub region: Option<usize>,
    pub allocation: Option<f64>,
    pub decision: Option<Decision>,
    /// Tasks waiting, counting one that is being allocated.
    pub queue_len: usize,
    pub utilization: Option<f64>,
    pub task_effectiveness: Option<f64>,
    pub motor_time: Option<f64>,
    pub rest: Option<f64>,
    pub dp_value: Option<f64>,
    pub statistics: Vec<f64>,
    pub routing: Vec<f64>,
    pub beliefs: Vec<f64>,
    pub retained: Vec<f64>,
}

/// A trace plus the graph echoed in its preamble.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub travel: Vec<Vec<f64>>,
    pub collection: Vec<f64>,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn region_count(&self) -> usize {
        self.collection.len()
    }
}

/// `%g`-style formatting with 9 significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-5..9).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let fixed = format!("{:.*}", (8 - exp) as usize, x);
    trim_zeros(&fixed).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

pub fn header(regions: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "time",
        "event",
        "region",
        "allocation",
        "decision",
        "queue_len",
        "utilization",
        "task_effectiveness",
        "motor_time",
        "rest",
        "dp_value",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["stat", "q", "belief", "retained"] {
        h.extend((1..=regions).map(|k| format!("{prefix}_{k}")));
    }
    h
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|&x| format_sig(x))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_trace<W: Write>(out: W, trace: &Trace) -> Result<()> {
    let m = trace.region_count();
    let mut out = out;
    writeln!(out, "# cams-trace schema={SCHEMA_VERSION}")?;
    writeln!(out, "# collection={}", join(&trace.collection))?;
    for row in &trace.travel {
        writeln!(out, "# travel={}", join(row))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(m))?;
    for r in &trace.records {
        if [&r.statistics, &r.routing, &r.beliefs, &r.retained]
            .iter()
            .any(|v| v.len() != m)
        {
            return Err(Error::Trace(format!(
                "record at time {} does not have {m} per-region values",
                r.time
            )));
        }
        let mut row = vec![
            format_sig(r.time),
            r.event.to_string(),
            r.region.map(|k| (k + 1).to_string()).unwrap_or_default(),
            opt(r.allocation),
            r.decision
                .map(|d| d.as_u8().to_string())
                .unwrap_or_default(),
            r.queue_len.to_string(),
            opt(r.utilization),
            opt(r.task_effectiveness),
            opt(r.motor_time),
            opt(r.rest),
            opt(r.dp_value),
        ];
        for v in [&r.statistics, &r.routing, &r.beliefs, &r.retained] {
            row.extend(v.iter().map(|&x| format_sig(x)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| Error::Trace(format!("bad number {x:?}: {e}")))
        })
        .collect()
}

fn field<T: FromStr>(row: &csv::StringRecord, i: usize, name: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    let s = row.get(i).unwrap_or("");
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|e| Error::Trace(format!("column {name}: cannot parse {s:?}: {e}")))
}

pub fn read_trace<R: Read>(input: R) -> Result<Trace> {
    let mut reader = BufReader::new(input);
    let mut schema = None;
    let mut collection = None;
    let mut travel = Vec::new();
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let Some(meta) = line.strip_prefix('#') else {
            body.push_str(&line);
            reader.read_to_string(&mut body)?;
            break;
        };
        let meta = meta.trim();
        if let Some(v) = meta.strip_prefix("cams-trace schema=") {
            schema = Some(
                v.parse::<u32>()
                    .map_err(|e| Error::Trace(format!("bad schema version: {e}")))?,
            );
        } else if let Some(v) = meta.strip_prefix("collection=") {
            collection = Some(parse_list(v)?);
        } else if let Some(v) = meta.strip_prefix("travel=") {
            travel.push(parse_list(v)?);
        }
    }
    match schema {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Trace(format!(
                "trace schema version {v} is not supported (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(Error::Trace("missing schema version line".into())),
    }
    let collection = collection.ok_or_else(|| Error::Trace("missing collection line".into()))?;
    let m = collection.len();

    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header(m) {
        return Err(Error::Trace(format!(
            "column layout does not match schema {SCHEMA_VERSION} for {m} regions"
        )));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let per_region = |block: usize| -> Result<Vec<f64>> {
            (0..m)
                .map(|k| {
                    let i = 11 + block * m + k;
                    field::<f64>(&row, i, &found[i])?
                        .ok_or_else(|| Error::Trace(format!("column {} is empty", found[i])))
                })
                .collect()
        };
        let time =
            field::<f64>(&row, 0, "time")?.ok_or_else(|| Error::Trace("empty time".into()))?;
        let event: EventKind = row.get(1).unwrap_or("").parse()?;
        let region = field::<usize>(&row, 2, "region")?
            .map(|k| {
                k.checked_sub(1)
                    .filter(|&k| k < m)
                    .ok_or_else(|| Error::Trace(format!("region {k} out of range")))
            })
            .transpose()?;
        let decision = field::<u8>(&row, 4, "decision")?
            .map(|d| Decision::from_u8(d).ok_or_else(|| Error::Trace(format!("bad decision {d}"))))
            .transpose()?;
        records.push(TraceRecord {
            time,
            event,
            region,
            allocation: field(&row, 3, "allocation")?,
            decision,
            queue_len: field(&row, 5, "queue_len")?.unwrap_or(0),
            utilization: field(&row, 6, "utilization")?,
            task_effectiveness: field(&row, 7, "task_effectiveness")?,
            motor_time: field(&row, 8, "motor_time")?,
            rest: field(&row, 9, "rest")?,
            dp_value: field(&row, 10, "dp_value")?,
            statistics: per_region(0)?,
            routing: per_region(1)?,
            beliefs: per_region(2)?,
            retained: per_region(3)?,
        });
    }
    Ok(Trace {
        travel,
        collection,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(25.636_511_25), "25.6365113");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(-2.5e-7), "-2.5e-7");
        assert_eq!(format_sig(123_456_789_012.0), "1.23456789e11");
        assert_eq!(format_sig(9.999_999_999_6), "10");
        assert_eq!(format_sig(0.000_012_345), "0.000012345");
    }

    fn record(m: usize) -> TraceRecord {
        TraceRecord {
            time: 12.5,
            event: EventKind::Decide,
            region: Some(2),
            allocation: Some(7.25),
            decision: Some(Decision::Anomalous),
            queue_len: 3,
            utilization: None,
            task_effectiveness: None,
            motor_time: None,
            rest: None,
            dp_value: Some(-0.125),
            statistics: vec![0.0; m],
            routing: vec![0.25; m],
            beliefs: vec![0.5; m],
            retained: vec![0.5; m],
        }
    }

    #[test]
    fn write_then_read() {
        let t = Trace {
            travel: vec![
                vec![0.0, 1.5, 2.0],
                vec![1.5, 0.0, 1.0],
                vec![2.0, 1.0, 0.0],
            ],
            collection: vec![10.0; 3],
            records: vec![
                record(3),
                TraceRecord {
                    event: EventKind::Route,
                    region: None,
                    decision: None,
                    ..record(3)
                },
            ],
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_other_schema_versions() {
        let t = Trace {
            travel: vec![vec![0.0]],
            collection: vec![1.0],
            records: vec![record(1)],
        };
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf)
            .unwrap()
            .replace("schema=1", "schema=7");
        let err = read_trace(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("schema version 7"), "{err}");
    }
}
