//! CSV rendering of a [`MetricsSeries`].
//!
//! One row per node per snapshot followed by a `GLOBAL` row. In node rows
//! `n_l`, `n_c`, `llr_hit`, `n_b` and `r_hit` describe the node and `n_g`,
//! `n_gc`, `glr_hit` the whole network; in `GLOBAL` rows every column is
//! network-wide. Counts are integers, times and ratios carry six decimals.
//! The file ends with a commented terminal block.

use super::{llr_hit, Confusion, MetricsSeries, NodeSnapshot, Snapshot, Terminal};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CSV_HEADER: &str = "t,node,n_l,n_c,llr_hit,n_g,n_gc,glr_hit,n_b,r_hit,overhead_bytes";
pub const TERMINAL_HEADER: &str = "# terminal,scheme,latency_s,accuracy,tp,fp,fn,tn";
const GLOBAL: &str = "GLOBAL";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn ratio_or_zero(part: u64, total: u64) -> f64 {
    llr_hit(part.min(total), total).unwrap_or(0.0)
}

pub fn render_csv(series: &MetricsSeries) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in &series.snapshots {
        let (n_g, n_gc, n_b) = (s.n_g(), s.n_gc(), s.n_b());
        let glr = ratio_or_zero(n_g, n_gc);
        for n in &s.nodes {
            let _ = writeln!(
                out,
                "{:.6},{},{},{},{:.6},{},{},{:.6},{},{:.6},{}",
                s.t,
                n.node,
                n.n_l,
                n.n_c,
                ratio_or_zero(n.n_l, n.n_c),
                n_g,
                n_gc,
                glr,
                n.n_b,
                ratio_or_zero(n.n_b, n.n_c),
                s.overhead_bytes
            );
        }
        let _ = writeln!(
            out,
            "{:.6},{GLOBAL},{},{},{:.6},{},{},{:.6},{},{:.6},{}",
            s.t,
            n_g,
            n_gc,
            glr,
            n_g,
            n_gc,
            glr,
            n_b,
            ratio_or_zero(n_b, n_gc),
            s.overhead_bytes
        );
    }
    out.push_str(TERMINAL_HEADER);
    out.push('\n');
    if let Some(t) = &series.terminal {
        let c = &t.confusion;
        let _ = writeln!(
            out,
            "# terminal,{},{:.6},{:.6},{},{},{},{}",
            t.scheme, t.latency_s, t.accuracy, c.tp, c.fp, c.fn_, c.tn
        );
    }
    out
}

pub fn write_csv(series: &MetricsSeries, path: &Path) -> Result<(), CsvError> {
    std::fs::write(path, render_csv(series)).map_err(|source| CsvError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Row<'a> {
    t: f64,
    node: &'a str,
    n_l: u64,
    n_c: u64,
    n_g: u64,
    n_gc: u64,
    n_b: u64,
    overhead: u64,
}

/// Parses a rendered series. Every ratio column is checked against the
/// counts on its row, and each `GLOBAL` row against the sum of its node
/// rows.
pub fn parse_csv(text: &str) -> Result<MetricsSeries, CsvError> {
    let err = |line: usize, reason: String| CsvError::Parse { line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(err(1, "missing header".into())),
    }
    let mut series = MetricsSeries::default();
    let mut pending: Vec<NodeSnapshot> = Vec::new();
    let mut pending_t: Option<f64> = None;
    let mut saw_terminal_header = false;

    for (no, line) in lines {
        if let Some(rest) = line.strip_prefix("# terminal,") {
            if !pending.is_empty() {
                return Err(err(no, "snapshot without GLOBAL row".into()));
            }
            if line == TERMINAL_HEADER {
                saw_terminal_header = true;
                continue;
            }
            if !saw_terminal_header || series.terminal.is_some() {
                return Err(err(no, "unexpected terminal row".into()));
            }
            series.terminal = Some(parse_terminal(rest).map_err(|r| err(no, r))?);
            continue;
        }
        if saw_terminal_header {
            return Err(err(no, "data after terminal block".into()));
        }
        let row = parse_row(line).map_err(|r| err(no, r))?;
        if let Some(t) = pending_t {
            if row.t != t {
                return Err(err(no, format!("time {} inside snapshot at {t}", row.t)));
            }
        }
        pending_t = Some(row.t);
        if row.node == GLOBAL {
            let snap = Snapshot {
                t: row.t,
                nodes: std::mem::take(&mut pending),
                overhead_bytes: row.overhead,
            };
            if (snap.n_g(), snap.n_gc(), snap.n_b()) != (row.n_l, row.n_c, row.n_b)
                || (row.n_g, row.n_gc) != (row.n_l, row.n_c)
            {
                return Err(err(no, "GLOBAL row disagrees with node rows".into()));
            }
            if series.snapshots.last().is_some_and(|s| s.t >= snap.t) {
                return Err(err(no, "snapshot times not increasing".into()));
            }
            series.snapshots.push(snap);
            pending_t = None;
        } else {
            pending.push(NodeSnapshot {
                node: row.node.to_string(),
                n_l: row.n_l,
                n_c: row.n_c,
                n_b: row.n_b,
            });
        }
    }
    if !pending.is_empty() {
        return Err(err(0, "trailing snapshot without GLOBAL row".into()));
    }
    if !saw_terminal_header {
        return Err(err(0, "missing terminal block".into()));
    }
    Ok(series)
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what}: {s:?}"))
}

fn parse_row(line: &str) -> Result<Row<'_>, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 11 {
        return Err(format!("expected 11 fields, found {}", f.len()));
    }
    let row = Row {
        t: num(f[0], "t")?,
        node: f[1],
        n_l: num(f[2], "n_l")?,
        n_c: num(f[3], "n_c")?,
        n_g: num(f[5], "n_g")?,
        n_gc: num(f[6], "n_gc")?,
        n_b: num(f[8], "n_b")?,
        overhead: num(f[10], "overhead_bytes")?,
    };
    for (idx, part, total) in [
        (4, row.n_l, row.n_c),
        (7, row.n_g, row.n_gc),
        (9, row.n_b, row.n_c),
    ] {
        if part > total {
            return Err(format!("count {part} exceeds total {total}"));
        }
        let want = format!("{:.6}", ratio_or_zero(part, total));
        if f[idx] != want {
            return Err(format!(
                "ratio column {idx} is {} but counts give {want}",
                f[idx]
            ));
        }
    }
    if row.n_l + row.n_b > row.n_c {
        return Err("n_l + n_b exceeds n_c".into());
    }
    Ok(row)
}

fn parse_terminal(rest: &str) -> Result<Terminal, String> {
    let f: Vec<&str> = rest.split(',').collect();
    if f.len() != 7 {
        return Err(format!("expected 7 terminal fields, found {}", f.len()));
    }
    Ok(Terminal {
        scheme: f[0].to_string(),
        latency_s: num(f[1], "latency_s")?,
        accuracy: num(f[2], "accuracy")?,
        confusion: Confusion {
            tp: num(f[3], "tp")?,
            fp: num(f[4], "fp")?,
            fn_: num(f[5], "fn")?,
            tn: num(f[6], "tn")?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_series() -> MetricsSeries {
        let snap = |t: f64, a: (u64, u64, u64), b: (u64, u64, u64), o| Snapshot {
            t,
            nodes: vec![
                NodeSnapshot {
                    node: "edge0".into(),
                    n_l: a.0,
                    n_c: a.1,
                    n_b: a.2,
                },
                NodeSnapshot {
                    node: "edge1".into(),
                    n_l: b.0,
                    n_c: b.1,
                    n_b: b.2,
                },
            ],
            overhead_bytes: o,
        };
        MetricsSeries {
            snapshots: vec![
                snap(0.0, (0, 0, 0), (0, 0, 0), 0),
                snap(10.0, (30, 100, 70), (1, 3, 2), 4096),
            ],
            terminal: Some(Terminal {
                scheme: "ccache".into(),
                latency_s: 1234.5,
                accuracy: 0.912345,
                confusion: Confusion {
                    tp: 1,
                    fp: 2,
                    fn_: 3,
                    tn: 4,
                },
            }),
        }
    }

    #[test]
    fn empty_series_is_header_and_terminal_block() {
        let text = render_csv(&MetricsSeries::default());
        assert_eq!(text, format!("{CSV_HEADER}\n{TERMINAL_HEADER}\n"));
        assert_eq!(parse_csv(&text).unwrap(), MetricsSeries::default());
    }

    #[test]
    fn golden_rendering() {
        let text = render_csv(&sample_series());
        let expected = "\
t,node,n_l,n_c,llr_hit,n_g,n_gc,glr_hit,n_b,r_hit,overhead_bytes
0.000000,edge0,0,0,0.000000,0,0,0.000000,0,0.000000,0
0.000000,edge1,0,0,0.000000,0,0,0.000000,0,0.000000,0
0.000000,GLOBAL,0,0,0.000000,0,0,0.000000,0,0.000000,0
10.000000,edge0,30,100,0.300000,31,103,0.300971,70,0.700000,4096
10.000000,edge1,1,3,0.333333,31,103,0.300971,2,0.666667,4096
10.000000,GLOBAL,31,103,0.300971,31,103,0.300971,72,0.699029,4096
# terminal,scheme,latency_s,accuracy,tp,fp,fn,tn
# terminal,ccache,1234.500000,0.912345,1,2,3,4
";
        assert_eq!(text, expected);
    }

    #[test]
    fn roundtrip() {
        let s = sample_series();
        assert_eq!(parse_csv(&render_csv(&s)).unwrap(), s);
    }

    #[test]
    fn tampered_ratio_is_rejected() {
        let text = render_csv(&sample_series()).replace("0.300000", "0.300001");
        assert!(matches!(
            parse_csv(&text),
            Err(CsvError::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn io_error_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("x.csv");
        let e = write_csv(&sample_series(), &path).unwrap_err();
        assert!(e.to_string().contains("missing"));
    }
}
