//! Poll-trace CSV and SWF job-trace ingestion and emission.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use log::warn;

use crate::metrics::PollRecord;
use crate::simcore::SimTime;
use crate::workload::BackgroundJob;

use super::HarnessError;

pub const POLL_HEADER: [&str; 3] = ["timestamp_s", "nodes", "walltime_s"];

/// Parsed records plus the normalizations applied to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Ingested<T> {
    fn new(records: Vec<T>, warnings: Vec<String>, path: &Path) -> Self {
        for w in &warnings {
            warn!("{}: {w}", path.display());
        }
        Ingested { records, warnings }
    }
}

fn trace_err(path: &Path, line: u64, msg: impl Into<String>) -> HarnessError {
    HarnessError::Trace {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parse a poll trace. `path` only labels errors.
pub fn read_poll_trace<R: Read>(input: R, path: &Path) -> Result<Ingested<PollRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(|e| trace_err(path, 1, e.to_string()))?;
    if header.iter().ne(POLL_HEADER) {
        return Err(trace_err(
            path,
            1,
            format!("expected header `{}`", POLL_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            trace_err(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 3 {
            return Err(trace_err(path, line, format!("expected 3 fields, found {}", row.len())));
        }
        let field = |i: usize| -> Result<u64, HarnessError> {
            row[i].parse::<u64>().map_err(|_| {
                trace_err(
                    path,
                    line,
                    format!("{} must be a non-negative integer, got `{}`", POLL_HEADER[i], &row[i]),
                )
            })
        };
        let nodes = field(1)?;
        let nodes = u32::try_from(nodes).map_err(|_| trace_err(path, line, "nodes out of range"))?;
        records.push(PollRecord {
            observed_at: SimTime::from_secs(field(0)?),
            nodes,
            walltime_s: field(2)?,
        });
    }
    let mut warnings = Vec::new();
    if records.windows(2).any(|w| w[1].observed_at < w[0].observed_at) {
        warnings.push("timestamps are not monotone; records sorted by time".to_string());
        records.sort_by_key(|r| r.observed_at);
    }
    Ok(Ingested::new(records, warnings, path))
}

pub fn ingest_poll_trace(path: &Path) -> Result<Ingested<PollRecord>, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_poll_trace(f, path)
}

pub fn write_poll_trace<W: Write>(out: W, records: &[PollRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POLL_HEADER)?;
    for r in records {
        w.write_record(&[
            r.observed_at.secs().to_string(),
            r.nodes.to_string(),
            r.walltime_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Count and means of a poll trace, over every record and over the non-empty
/// ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollStats {
    pub count: usize,
    pub mean_nodes: f64,
    pub mean_walltime_s: f64,
    pub nonzero: usize,
    pub nonzero_mean_nodes: f64,
    pub nonzero_mean_walltime_s: f64,
}

pub fn poll_stats(records: &[PollRecord]) -> PollStats {
    let means = |rs: &mut dyn Iterator<Item = &PollRecord>| {
        let (mut n, mut nodes, mut wall) = (0usize, 0f64, 0f64);
        for r in rs {
            n += 1;
            nodes += f64::from(r.nodes);
            wall += r.walltime_s as f64;
        }
        let d = n.max(1) as f64;
        (n, nodes / d, wall / d)
    };
    let (count, mean_nodes, mean_walltime_s) = means(&mut records.iter());
    let (nonzero, nonzero_mean_nodes, nonzero_mean_walltime_s) =
        means(&mut records.iter().filter(|r| r.nodes > 0 && r.walltime_s > 0));
    PollStats {
        count,
        mean_nodes,
        mean_walltime_s,
        nonzero,
        nonzero_mean_nodes,
        nonzero_mean_walltime_s,
    }
}

const SWF_FIELDS: usize = 18;
// 0-based positions of the SWF columns used here.
const SWF_SUBMIT: usize = 1;
const SWF_RUNTIME: usize = 3;
const SWF_ALLOC: usize = 4;
const SWF_REQ_PROCS: usize = 7;
const SWF_REQ_TIME: usize = 8;

/// Parse an SWF trace into capability jobs. Processor counts are taken as
/// node counts (requested, else allocated). Jobs without a runtime or a size
/// are skipped; runtimes beyond the walltime are clipped to it.
pub fn read_swf<R: Read>(input: R, path: &Path) -> Result<Ingested<BackgroundJob>, HarnessError> {
    let mut records = Vec::new();
    let (mut clipped, mut skipped) = (0usize, 0usize);
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|e| trace_err(path, lineno, e.to_string()))?;
        let body = line.split(';').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields = body
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| trace_err(path, lineno, format!("`{f}` is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if fields.len() != SWF_FIELDS {
            return Err(trace_err(
                path,
                lineno,
                format!("expected {SWF_FIELDS} fields, found {}", fields.len()),
            ));
        }
        let present = |v: f64| (v >= 0.0).then_some(v.round() as u64);
        let Some(submit) = present(fields[SWF_SUBMIT]) else {
            return Err(trace_err(path, lineno, "submit time missing"));
        };
        let nodes = present(fields[SWF_REQ_PROCS])
            .filter(|n| *n > 0)
            .or(present(fields[SWF_ALLOC]).filter(|n| *n > 0));
        let runtime = present(fields[SWF_RUNTIME]);
        let (Some(nodes), Some(runtime)) = (nodes, runtime) else {
            skipped += 1;
            continue;
        };
        let nodes = u32::try_from(nodes).map_err(|_| trace_err(path, lineno, "size out of range"))?;
        let walltime_s = present(fields[SWF_REQ_TIME]).filter(|w| *w > 0).unwrap_or(runtime.max(1));
        let runtime_s = if runtime > walltime_s {
            clipped += 1;
            walltime_s
        } else {
            runtime
        };
        records.push(BackgroundJob {
            submit: SimTime::from_secs(submit),
            nodes,
            walltime_s,
            runtime_s,
        });
    }
    let mut warnings = Vec::new();
    if clipped > 0 {
        warnings.push(format!("{clipped} job(s) ran past their walltime; runtime clipped"));
    }
    if skipped > 0 {
        warnings.push(format!("{skipped} job(s) without runtime or size skipped"));
    }
    if records.windows(2).any(|w| w[1].submit < w[0].submit) {
        warnings.push("submit times are not monotone; jobs sorted by submit".to_string());
        records.sort_by_key(|j| j.submit);
    }
    Ok(Ingested::new(records, warnings, path))
}

pub fn ingest_swf(path: &Path) -> Result<Ingested<BackgroundJob>, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_swf(f, path)
}

pub fn write_swf<W: Write>(mut out: W, jobs: &[BackgroundJob]) -> std::io::Result<()> {
    writeln!(out, "; capability jobs, one node per processor")?;
    for (i, j) in jobs.iter().enumerate() {
        let mut f = [-1i64; SWF_FIELDS];
        f[0] = i as i64 + 1;
        f[SWF_SUBMIT] = j.submit.secs() as i64;
        f[SWF_RUNTIME] = j.runtime_s as i64;
        f[SWF_ALLOC] = i64::from(j.nodes);
        f[SWF_REQ_PROCS] = i64::from(j.nodes);
        f[SWF_REQ_TIME] = j.walltime_s as i64;
        f[10] = 1; // status: completed
        let line = f.iter().map(i64::to_string).collect::<Vec<_>>().join(" ");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Sniff the format by extension: `.csv` is a poll trace, anything else SWF.
pub fn is_poll_trace(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn polls(text: &str) -> Result<Ingested<PollRecord>, HarnessError> {
        read_poll_trace(text.as_bytes(), Path::new("t.csv"))
    }

    fn swf(text: &str) -> Result<Ingested<BackgroundJob>, HarnessError> {
        read_swf(text.as_bytes(), Path::new("t.swf"))
    }

    fn line_of(e: HarnessError) -> u64 {
        match e {
            HarnessError::Trace { line, .. } => line,
            other => panic!("not a trace error: {other}"),
        }
    }

    #[test]
    fn header_only_poll_trace_is_empty() {
        let got = polls("timestamp_s,nodes,walltime_s\n").unwrap();
        assert!(got.records.is_empty() && got.warnings.is_empty());
    }

    #[test]
    fn negative_nodes_report_their_line() {
        let e = polls("timestamp_s,nodes,walltime_s\n0,5,60\n60,-3,60\n").unwrap_err();
        assert_eq!(line_of(e), 3);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert_eq!(line_of(polls("t,nodes,walltime_s\n").unwrap_err()), 1);
    }

    #[test]
    fn unsorted_poll_trace_is_sorted_with_a_warning() {
        let got = polls("timestamp_s,nodes,walltime_s\n60,1,10\n0,2,20\n").unwrap();
        assert_eq!(got.records[0].nodes, 2);
        assert_eq!(got.warnings.len(), 1);
    }

    #[test]
    fn poll_stats_on_a_known_trace() {
        let got = polls("timestamp_s,nodes,walltime_s\n0,0,0\n60,100,3000\n120,300,9000\n").unwrap();
        let s = poll_stats(&got.records);
        assert_eq!((s.count, s.nonzero), (3, 2));
        assert!((s.mean_nodes - 400.0 / 3.0).abs() < 1e-9);
        assert_eq!((s.nonzero_mean_nodes, s.nonzero_mean_walltime_s), (200.0, 6000.0));
    }

    #[test]
    fn comment_only_swf_is_empty() {
        assert!(swf("; Version: 2.2\n;\n\n").unwrap().records.is_empty());
    }

    #[test]
    fn one_job_swf_maps_directly() {
        let got = swf("1 0 -1 100 4 -1 -1 4 200 -1 1 -1 -1 -1 -1 -1 -1 -1\n").unwrap();
        let j = got.records[0];
        assert_eq!(
            (j.submit.secs(), j.nodes, j.runtime_s, j.walltime_s),
            (0, 4, 100, 200)
        );
    }

    #[test]
    fn overlong_runtime_is_clipped_with_a_warning() {
        let got = swf("1 0 -1 500 4 -1 -1 4 200 -1 1 -1 -1 -1 -1 -1 -1 -1\n").unwrap();
        assert_eq!(got.records[0].runtime_s, 200);
        assert!(got.warnings[0].contains("clipped"));
        // Clipping is a fixed point: emitting and re-reading changes nothing.
        let mut buf = Vec::new();
        write_swf(&mut buf, &got.records).unwrap();
        let again = read_swf(buf.as_slice(), Path::new("t.swf")).unwrap();
        assert_eq!(again.records, got.records);
        assert!(again.warnings.is_empty());
    }

    #[test]
    fn bad_swf_lines_report_their_number() {
        assert_eq!(line_of(swf("; c\n1 2 3\n").unwrap_err()), 2);
        let bad = "; c\n\n1 0 -1 x 4 -1 -1 4 200 -1 1 -1 -1 -1 -1 -1 -1 -1\n";
        assert_eq!(line_of(swf(bad).unwrap_err()), 3);
    }

    fn poll_record() -> impl Strategy<Value = PollRecord> {
        (0u64..10_000_000, 0u32..20_000, 0u64..200_000).prop_map(|(t, n, w)| PollRecord {
            observed_at: SimTime::from_secs(t),
            nodes: n,
            walltime_s: w,
        })
    }

    fn job() -> impl Strategy<Value = BackgroundJob> {
        (0u64..10_000_000, 1u32..20_000, 1u64..200_000, 0.0f64..=1.0).prop_map(|(t, n, w, f)| {
            BackgroundJob {
                submit: SimTime::from_secs(t),
                nodes: n,
                walltime_s: w,
                runtime_s: (w as f64 * f) as u64,
            }
        })
    }

    proptest! {
        #[test]
        fn traces_round_trip(
            mut ps in proptest::collection::vec(poll_record(), 0..40),
            mut js in proptest::collection::vec(job(), 0..40),
        ) {
            ps.sort_by_key(|p| p.observed_at);
            js.sort_by_key(|j| j.submit);
            let mut buf = Vec::new();
            write_poll_trace(&mut buf, &ps).unwrap();
            prop_assert_eq!(read_poll_trace(buf.as_slice(), Path::new("p")).unwrap().records, ps);
            let mut buf = Vec::new();
            write_swf(&mut buf, &js).unwrap();
            prop_assert_eq!(read_swf(buf.as_slice(), Path::new("j")).unwrap().records, js);
        }
    }
}
