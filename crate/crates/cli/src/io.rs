//! Design and level files.
//!
//! Both are CSV with a 1-based `slice` column followed by one column per
//! factor (`x1..xq` for coordinates, `m1..mq` for levels), rows slice-major.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use fslhd::design::{DesignMatrix, LevelMatrix, SliceSpec};
use serde::Serialize;

use crate::CliError;

/// `x` with 12 significant digits in plain decimal notation.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.11e}", x);
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let decimals = (11 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}

fn header(prefix: &str, q: usize) -> Vec<String> {
    std::iter::once("slice".to_string())
        .chain((1..=q).map(|k| format!("{prefix}{k}")))
        .collect()
}

fn write_rows<W: Write>(
    out: W,
    prefix: &str,
    spec: &SliceSpec,
    cell: impl Fn(usize, usize) -> String,
) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(prefix, spec.factors()))?;
    for row in 0..spec.runs() {
        let slice = spec.slice_of_row(row).expect("row within spec") + 1;
        let mut rec = vec![slice.to_string()];
        rec.extend((0..spec.factors()).map(|c| cell(row, c)));
        w.write_record(&rec)?;
    }
    w.flush()
}

pub fn write_design<W: Write>(out: W, d: &DesignMatrix) -> io::Result<()> {
    write_rows(out, "x", d.spec(), |r, c| format_sig12(d.get(r, c)))
}

pub fn write_levels<W: Write>(out: W, m: &LevelMatrix) -> io::Result<()> {
    write_rows(out, "m", m.spec(), |r, c| m.get(r, c).to_string())
}

/// Parsed table: slice spec inferred from the labels and row-major cells in
/// slice-major order.
struct Table {
    spec: SliceSpec,
    cells: Vec<String>,
}

fn read_table<R: Read>(input: R, prefix: &str) -> Result<Table, CliError> {
    let bad = |msg: String| CliError::Format(msg);
    let mut rdr = csv::Reader::from_reader(input);
    let head = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let q = head.len().saturating_sub(1);
    if q == 0 || head.iter().collect::<Vec<_>>() != header(prefix, q) {
        return Err(bad(format!(
            "expected header slice,{prefix}1,...,{prefix}q, found {}",
            head.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let slice: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: bad slice label {:?}", line + 1, &rec[0])))?;
        if slice == 0 {
            return Err(bad(format!("row {}: slice labels start at 1", line + 1)));
        }
        rows.push((
            slice,
            rec.iter().skip(1).map(|s| s.trim().to_string()).collect(),
        ));
    }
    let u = rows
        .iter()
        .map(|r| r.0)
        .max()
        .ok_or_else(|| bad("no data rows".into()))?;
    let mut sizes = vec![0usize; u];
    for (s, _) in &rows {
        sizes[s - 1] += 1;
    }
    if let Some(i) = sizes.iter().position(|&c| c == 0) {
        return Err(bad(format!("slice {} has no rows", i + 1)));
    }
    // Stable, so rows keep their order within a slice.
    rows.sort_by_key(|r| r.0);
    let spec = SliceSpec::new(sizes, q).map_err(|e| bad(e.to_string()))?;
    Ok(Table {
        spec,
        cells: rows.into_iter().flat_map(|r| r.1).collect(),
    })
}

pub fn read_design<R: Read>(input: R) -> Result<DesignMatrix, CliError> {
    let t = read_table(input, "x")?;
    let points = t
        .cells
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::Format(format!("bad coordinate {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    DesignMatrix::from_points(t.spec, points).map_err(|e| CliError::Format(e.to_string()))
}

pub fn read_levels<R: Read>(input: R) -> Result<LevelMatrix, CliError> {
    let t = read_table(input, "m")?;
    let levels = t
        .cells
        .iter()
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| CliError::Format(format!("bad level {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    LevelMatrix::new(t.spec, levels).map_err(|e| CliError::Format(e.to_string()))
}

pub fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

pub fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::io(path, e))
}

/// Writes through `f` to `path`, or to stdout when `path` is `None`.
pub fn emit(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut file = io::BufWriter::new(create(p)?);
            f(&mut file)
                .and_then(|_| file.flush())
                .map_err(|e| CliError::io(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| CliError::Io {
                path: "<stdout>".into(),
                source: e,
            })
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    emit(Some(path), |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    emit(Some(path), |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            writeln!(w)?;
        }
        Ok(())
    })
}
