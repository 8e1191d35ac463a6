//! Incidence series CSV: header `t,y`, one row per step, `t = 1, 2, ...`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidenceSeries {
    pub y: Vec<u64>,
}

#[derive(Deserialize)]
struct Row {
    t: i64,
    y: i64,
}

impl IncidenceSeries {
    pub fn new(y: Vec<u64>) -> Self {
        Self { y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Parses CSV text; time indices must run 1, 2, ... without gaps.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Validation(format!("series: {e}")))?
            .clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "y" {
            return Err(Error::Validation(format!(
                "series header must be 't,y', found '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut y = Vec::new();
        for (k, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Validation(format!("series: {e}")))?;
            let expected = k as i64 + 1;
            if row.t != expected {
                return Err(Error::Validation(format!(
                    "series: expected t = {expected}, found {}",
                    row.t
                )));
            }
            if row.y < 0 {
                return Err(Error::Validation(format!("series: negative count at t = {}", row.t)));
            }
            y.push(row.y as u64);
        }
        if y.is_empty() {
            return Err(Error::Validation("series is empty".into()));
        }
        Ok(Self { y })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,y")?;
        for (k, v) in self.y.iter().enumerate() {
            writeln!(w, "{},{}", k + 1, v)?;
        }
        Ok(())
    }
}

pub fn load_series(path: &Path) -> Result<IncidenceSeries> {
    let f = std::fs::File::open(path)?;
    IncidenceSeries::from_csv(std::io::BufReader::new(f))
}

pub fn save_series(path: &Path, series: &IncidenceSeries) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    series.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let s = IncidenceSeries::new(vec![0, 3, 17, 2]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(IncidenceSeries::from_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "t,y\n1,3\n3,4\n",
            "t,y\n1,-2\n",
            "t,y\n2,1\n",
            "time,count\n1,2\n",
            "t,y\n",
            "t,y\n1,abc\n",
        ] {
            assert!(
                matches!(IncidenceSeries::from_csv(text.as_bytes()), Err(Error::Validation(_))),
                "{text:?}"
            );
        }
    }

    #[test]
    fn tolerates_whitespace() {
        let s = IncidenceSeries::from_csv("t, y\n1, 4\n2 ,5\n".as_bytes()).unwrap();
        assert_eq!(s.y, vec![4, 5]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = IncidenceSeries::new(vec![1, 2, 3]);
        save_series(&p, &s).unwrap();
        assert_eq!(load_series(&p).unwrap(), s);
    }
}
