//! Output files. Every file starts with `# config_hash=<hex> seed=<u64>`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use mfhmc::experiments::Series;

/// Columns written as integers when they come from a [`Series`].
const INTEGER_COLUMNS: &[&str] = &["step", "n", "particle", "coord", "coordinate", "replicas"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            // 17 significant digits round-trip every f64
            Self::Float(v) => write!(f, "{v:.16e}"),
        }
    }
}

#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    header: String,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: &str, seed: u64) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), header: format!("# config_hash={config_hash} seed={seed}"), written: Vec::new() })
    }

    pub fn header(&self) -> &str {
        &self.header
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn open(&mut self, name: &str) -> io::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", self.header)?;
        self.written.push(path);
        Ok(w)
    }

    pub fn write_csv<I, R>(&mut self, name: &str, columns: &[&str], rows: I) -> io::Result<()>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[Cell]>,
    {
        let mut w = self.open(name)?;
        writeln!(w, "{}", columns.join(","))?;
        for row in rows {
            let mut first = true;
            for cell in row.as_ref() {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{cell}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// Writes `<series name>.csv`.
    pub fn write_series(&mut self, series: &Series) -> io::Result<()> {
        let integer: Vec<bool> = series.columns.iter().map(|c| INTEGER_COLUMNS.contains(&c.as_str())).collect();
        let columns: Vec<&str> = series.columns.iter().map(String::as_str).collect();
        let rows = series.rows.iter().map(|row| {
            row.iter()
                .zip(&integer)
                .map(|(&v, &int)| if int && v >= 0.0 && v.fract() == 0.0 { Cell::Int(v as u64) } else { Cell::Float(v) })
                .collect::<Vec<_>>()
        });
        self.write_csv(&format!("{}.csv", series.name), &columns, rows)
    }

    pub fn write_text(&mut self, name: &str, body: &str) -> io::Result<()> {
        let mut w = self.open(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()
    }
}

/// Six significant digits, trailing zeros dropped; scientific notation
/// outside `[1e-2, 1e6)`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-2..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
