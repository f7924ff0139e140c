//! Parsing of the NOAA Mauna Loa monthly CO2 file (`co2_mm_mlo.txt`).

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::Dataset;
use crate::points::Points;

/// Placeholder used by NOAA for months without a monthly average.
pub const MISSING_SENTINEL: f64 = -99.99;

/// The vendored snapshot shipped with the crate.
pub const VENDORED_CO2: &str = include_str!("../data/co2_mm_mlo.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct Co2Record {
    pub year: i32,
    pub month: u32,
    pub decimal_date: f64,
    pub average_ppm: Option<f64>,
    pub interpolated_ppm: f64,
    /// The average if present, otherwise the interpolated value.
    pub value_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        YearMonth { year, month }
    }

    fn index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_index(i: i64) -> Self {
        YearMonth {
            year: i.div_euclid(12) as i32,
            month: (i.rem_euclid(12) + 1) as u32,
        }
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<Co2Record> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 5 {
        return Err(malformed(line_no, format!("expected at least 5 columns, found {}", fields.len())));
    }
    let num = |i: usize, name: &str| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| malformed(line_no, format!("bad {name} `{}`", fields[i])))
    };
    let year: i32 = fields[0]
        .parse()
        .map_err(|_| malformed(line_no, format!("bad year `{}`", fields[0])))?;
    let month: u32 = fields[1]
        .parse()
        .map_err(|_| malformed(line_no, format!("bad month `{}`", fields[1])))?;
    if !(1950..=2100).contains(&year) {
        return Err(malformed(line_no, format!("year {year} out of range")));
    }
    if !(1..=12).contains(&month) {
        return Err(malformed(line_no, format!("month {month} out of range")));
    }
    let decimal_date = num(2, "decimal date")?;
    let average = num(3, "average")?;
    let interpolated_ppm = num(4, "interpolated value")?;
    if interpolated_ppm <= 0.0 {
        return Err(malformed(line_no, "interpolated value must be positive"));
    }
    // Some revisions use -99.99, older ones also -1 for a missing average.
    let average_ppm = (average > 0.0 && (average - MISSING_SENTINEL).abs() > 1e-9).then_some(average);
    Ok(Co2Record {
        year,
        month,
        decimal_date,
        average_ppm,
        interpolated_ppm,
        value_used: average_ppm.unwrap_or(interpolated_ppm),
    })
}

/// Parses the whitespace-delimited NOAA text format. Lines starting with `#`
/// and blank lines are skipped. Records come back sorted by decimal date.
pub fn parse_co2<R: BufRead>(reader: R) -> Result<Vec<Co2Record>> {
    let mut records = vec![];
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec = parse_row(i + 1, trimmed)?;
        if !seen.insert((rec.year, rec.month)) {
            return Err(Error::DuplicateMonth {
                year: rec.year,
                month: rec.month,
            });
        }
        records.push(rec);
    }
    records.sort_by(|a, b| a.decimal_date.total_cmp(&b.decimal_date));
    Ok(records)
}

pub fn parse_co2_str(text: &str) -> Result<Vec<Co2Record>> {
    parse_co2(text.as_bytes())
}

pub fn read_co2_file(path: impl AsRef<Path>) -> Result<Vec<Co2Record>> {
    let file = std::fs::File::open(path)?;
    parse_co2(std::io::BufReader::new(file))
}

/// Inclusive month window as a dataset with `x = decimal date`, `y = ppm`.
pub fn window(records: &[Co2Record], from: YearMonth, to: YearMonth) -> Result<Dataset> {
    if from > to {
        return Err(Error::ConfigInvalid(format!(
            "window start {}-{:02} is after its end {}-{:02}",
            from.year, from.month, to.year, to.month
        )));
    }
    let mut xs = vec![];
    let mut ys = vec![];
    for idx in from.index()..=to.index() {
        let ym = YearMonth::from_index(idx);
        let rec = records
            .iter()
            .find(|r| r.year == ym.year && r.month == ym.month)
            .ok_or(Error::DataGap {
                year: ym.year,
                month: ym.month,
            })?;
        xs.push(rec.decimal_date);
        ys.push(rec.value_used);
    }
    Dataset::new(Points::scalars(xs), ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub year: i32,
    pub month: u32,
    pub decimal_date: f64,
    pub ppm: f64,
}

impl From<&Co2Record> for NormalizedRow {
    fn from(r: &Co2Record) -> Self {
        NormalizedRow {
            year: r.year,
            month: r.month,
            decimal_date: r.decimal_date,
            ppm: r.value_used,
        }
    }
}

/// Writes the normalized CSV `year,month,decimal_date,ppm`.
pub fn write_normalized_csv<W: Write>(records: &[Co2Record], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(NormalizedRow::from(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the normalized CSV back. The average/interpolated distinction is not
/// stored there, so every record comes back with `average_ppm = Some(ppm)`.
pub fn read_normalized_csv<R: std::io::Read>(input: R) -> Result<Vec<Co2Record>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = vec![];
    for row in rdr.deserialize() {
        let row: NormalizedRow = row?;
        out.push(Co2Record {
            year: row.year,
            month: row.month,
            decimal_date: row.decimal_date,
            average_ppm: Some(row.ppm),
            interpolated_ppm: row.ppm,
            value_used: row.ppm,
        });
    }
    Ok(out)
}
