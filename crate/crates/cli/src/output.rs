//! Deterministic numeric output: 17 significant digits, `.` decimal
//! separator, `,` field separator, header rows.

use std::fmt::Write as _;

pub fn fmt(value: f64) -> String {
    format!("{value:.16e}")
}

pub struct CsvWriter {
    buffer: String,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> CsvWriter {
        let mut buffer = String::new();
        buffer.push_str(&header.join(","));
        buffer.push('\n');
        CsvWriter { buffer }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.buffer, "{}", fields.join(","));
    }

    pub fn numeric_row(&mut self, values: &[f64]) {
        let fields: Vec<String> = values.iter().map(|v| fmt(*v)).collect();
        self.row(&fields);
    }

    pub fn finish(self) -> String {
        self.buffer
    }
}

/// Parse one CSV line of floats (NaN-tolerant fields are not allowed).
pub fn parse_floats(line: &str) -> Result<Vec<f64>, String> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad number `{f}`: {e}"))
        })
        .collect()
}
