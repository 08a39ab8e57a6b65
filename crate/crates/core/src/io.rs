//! File formats: cube, query, history CSV, PMV CSV and the posterior sidecar.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! written here parses back to identical bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{InferenceMethod, Posterior};
use crate::model::{self, CountCube, HistoryRow, LinearQuery, QueryHistory, QuerySpec};
use crate::pmv::ProbabilityMassVector;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line() as usize);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io("<csv stream>", e),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Annotates stream-level I/O errors with the file they came from.
fn with_path(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

pub fn read_cube(path: &Path) -> Result<CountCube> {
    model::load_cube(open(path)?).map_err(|e| with_path(e, path))
}

pub fn write_cube<W: Write>(cube: &CountCube, mut out: W) -> std::io::Result<()> {
    for c in cube.counts() {
        writeln!(out, "{c}")?;
    }
    out.flush()
}

pub fn read_query(path: &Path) -> Result<QuerySpec> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    model::parse_query_spec(&text)
}

fn parse_field(field: &str, line: usize, name: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("{name}: not a number: {field:?}"),
    })
}

/// Parses a history CSV with header `alpha,sensitivity,y,q_0,...`. The stored
/// sensitivity must equal the largest absolute coefficient of its row.
pub fn parse_history<R: Read>(source: R) -> Result<QueryHistory> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(csv_error)?.clone();
    let fixed = ["alpha", "sensitivity", "y"];
    if header.len() < 4 || header.iter().take(3).ne(fixed) {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with alpha,sensitivity,y and name at least one q column"
                .into(),
        });
    }
    let cells = header.len() - 3;
    let mut history = QueryHistory::new(cells);
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let alpha = parse_field(&record[0], line, "alpha")?;
        let sensitivity = parse_field(&record[1], line, "sensitivity")?;
        let y = parse_field(&record[2], line, "y")?;
        let coefficients = (3..record.len())
            .map(|i| parse_field(&record[i], line, &header[i]))
            .collect::<Result<Vec<_>>>()?;
        let parse = |e: Error| Error::Parse {
            line,
            message: e.to_string(),
        };
        let query = LinearQuery::new(coefficients).map_err(parse)?;
        if query.sensitivity() != sensitivity {
            return Err(Error::Parse {
                line,
                message: format!(
                    "sensitivity {sensitivity} does not equal max |coefficient| {}",
                    query.sensitivity()
                ),
            });
        }
        history
            .push(HistoryRow::new(query, y, alpha).map_err(parse)?)
            .map_err(parse)?;
    }
    Ok(history)
}

pub fn read_history(path: &Path) -> Result<QueryHistory> {
    parse_history(open(path)?).map_err(|e| with_path(e, path))
}

pub fn write_history_to<W: Write>(history: &QueryHistory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["alpha".to_string(), "sensitivity".into(), "y".into()];
    header.extend((0..history.cells()).map(|j| format!("q_{j}")));
    w.write_record(&header).map_err(csv_error)?;
    for row in history.rows() {
        let mut fields = vec![
            row.alpha.to_string(),
            row.sensitivity.to_string(),
            row.noisy_answer.to_string(),
        ];
        fields.extend(row.query.coefficients().iter().map(f64::to_string));
        w.write_record(&fields).map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<csv stream>", e))
}

pub fn write_history(history: &QueryHistory, path: &Path) -> Result<()> {
    write_history_to(history, create(path)?).map_err(|e| with_path(e, path))
}

/// PMV CSV: header `offset,mass`, offsets ascending with the centre at 0.
pub fn write_pmv_to<W: Write>(u: &ProbabilityMassVector, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["offset", "mass"]).map_err(csv_error)?;
    for (i, m) in u.masses().iter().enumerate() {
        w.write_record([u.offset_of(i).to_string(), m.to_string()])
            .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("<csv stream>", e))
}

pub fn parse_pmv<R: Read>(source: R) -> Result<ProbabilityMassVector> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = reader.headers().map_err(csv_error)?;
    if header.iter().ne(["offset", "mass"]) {
        return Err(Error::Parse {
            line: 1,
            message: "header must be offset,mass".into(),
        });
    }
    let mut masses = Vec::new();
    let mut first = None;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let offset: i64 = record[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("offset: not an integer: {:?}", &record[0]),
        })?;
        let start = *first.get_or_insert(offset);
        if offset != start + masses.len() as i64 {
            return Err(Error::Parse {
                line,
                message: "offsets must be consecutive and ascending".into(),
            });
        }
        masses.push(parse_field(&record[1], line, "mass")?);
    }
    let half = masses.len() / 2;
    if first != Some(-(half as i64)) || masses.len() % 2 == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "offsets must run symmetrically around 0".into(),
        });
    }
    ProbabilityMassVector::new(masses)
}

pub fn read_pmv(path: &Path) -> Result<ProbabilityMassVector> {
    parse_pmv(open(path)?).map_err(|e| with_path(e, path))
}

/// JSON sidecar written next to a posterior PMV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSidecar {
    pub center: f64,
    #[serde(flatten)]
    pub method: InferenceMethod,
    pub loss: f64,
}

impl From<&Posterior> for PosteriorSidecar {
    fn from(p: &Posterior) -> Self {
        Self {
            center: p.center_value,
            method: p.method,
            loss: p.loss,
        }
    }
}

/// Sidecar path for a PMV file: `p.csv` becomes `p.json`.
pub fn sidecar_path(pmv_path: &Path) -> std::path::PathBuf {
    pmv_path.with_extension("json")
}

/// Writes the posterior PMV to `path` and its sidecar next to it.
pub fn write_posterior(posterior: &Posterior, path: &Path) -> Result<()> {
    write_pmv_to(&posterior.mass, create(path)?).map_err(|e| with_path(e, path))?;
    let side = sidecar_path(path);
    let mut out = create(&side)?;
    serde_json::to_writer_pretty(&mut out, &PosteriorSidecar::from(posterior))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&side, e))
}

pub fn read_posterior(path: &Path) -> Result<Posterior> {
    let mass = read_pmv(path)?;
    let side = sidecar_path(path);
    let meta: PosteriorSidecar = serde_json::from_reader(open(&side)?)?;
    let mut p = Posterior::new(mass, meta.center, meta.method);
    p.loss = meta.loss;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn history_round_trip_is_bitwise() {
        let rows = vec![
            HistoryRow::new(
                LinearQuery::new(vec![0.1, -2.0, 1.0 / 3.0]).unwrap(),
                12.345678901234567,
                0.05,
            )
            .unwrap(),
            HistoryRow::new(
                LinearQuery::new(vec![0.0, 1e-300, 7.0]).unwrap(),
                -1e17,
                1.0 / 7.0,
            )
            .unwrap(),
        ];
        let h = QueryHistory::from_rows(3, rows).unwrap();
        let mut buf = Vec::new();
        write_history_to(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("alpha,sensitivity,y,q_0,q_1,q_2\n"));
        assert_eq!(parse_history(&buf[..]).unwrap(), h);
    }

    #[test]
    fn history_rejects_bad_sensitivity() {
        let text = "alpha,sensitivity,y,q_0,q_1\n0.1,1,5,1,0\n0.1,3,5,2,1\n";
        match parse_history(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn history_rejects_bad_header_and_fields() {
        assert!(parse_history("a,b,c,d\n".as_bytes()).is_err());
        assert!(parse_history("alpha,sensitivity,y,q_0\n0.1,1,x,1\n".as_bytes()).is_err());
        assert!(parse_history("alpha,sensitivity,y,q_0\n0.1,1,2,0\n".as_bytes()).is_err());
    }

    #[test]
    fn pmv_round_trip() {
        let u = ProbabilityMassVector::new(vec![0.1, 0.25, 0.3, 0.2, 0.15]).unwrap();
        let mut buf = Vec::new();
        write_pmv_to(&u, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("offset,mass\n-2,0.1\n"));
        assert_eq!(parse_pmv(&buf[..]).unwrap(), u);
        assert!(parse_pmv("offset,mass\n0,0.5\n1,0.5\n".as_bytes()).is_err());
    }

    #[test]
    fn posterior_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("post.csv");
        let u = ProbabilityMassVector::new(vec![0.2, 0.5, 0.25]).unwrap();
        let p = Posterior::new(
            u,
            41.5,
            InferenceMethod::ProbabilityCalculation { gamma: 0.01 },
        );
        write_posterior(&p, &path).unwrap();
        let side: serde_json::Value =
            serde_json::from_reader(File::open(dir.path().join("post.json")).unwrap()).unwrap();
        assert_eq!(side["center"], 41.5);
        assert_eq!(side["method"], "probability_calculation");
        assert_eq!(side["gamma"], 0.01);
        assert_eq!(read_posterior(&path).unwrap(), p);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_history(Path::new("/nonexistent/h.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/h.csv"));
    }

    proptest! {
        #[test]
        fn arbitrary_history_round_trips(rows in prop::collection::vec(
            (prop::collection::vec(-1e6..1e6f64, 2), -1e9..1e9f64, 1e-6..10.0f64), 1..10)) {
            let mut h = QueryHistory::new(2);
            for (q, y, a) in rows {
                let Ok(q) = LinearQuery::new(q) else { continue };
                h.push(HistoryRow::new(q, y, a).unwrap()).unwrap();
            }
            let mut buf = Vec::new();
            write_history_to(&h, &mut buf).unwrap();
            prop_assert_eq!(parse_history(&buf[..]).unwrap(), h);
        }
    }
}
