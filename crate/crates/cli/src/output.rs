//! Plain CSV/JSON writers. Floats are printed with 17 significant digits so
//! repeated runs can be compared byte for byte.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use lawpal::Result;
use serde::Serialize;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvWriter {
    w: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", header.join(","))?;
        Ok(Self { w })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        writeln!(self.w, "{}", cells.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `prefix_1, ..., prefix_m`.
pub fn indexed(prefix: &str, m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("{prefix}_{i}")).collect()
}

/// `prefix_1_1, prefix_1_2, ..., prefix_m_m` in row-major order.
pub fn pairs(prefix: &str, m: usize) -> Vec<String> {
    (1..=m)
        .flat_map(|i| (1..=m).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}
