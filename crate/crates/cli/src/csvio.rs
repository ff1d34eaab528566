use std::io::Write;
use std::path::Path;

use hfu_core::sim::SamplePath;

use crate::CliError;

/// Writes `time,value` rows with 17 significant digits.
pub fn write_path(path: &SamplePath, out: &Path) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::compute("Io", format!("cannot write {}: {e}", out.display()));
    let file = std::fs::File::create(out).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "time,value").map_err(io)?;
    for (t, x) in path.grid.iter().zip(&path.x_values) {
        writeln!(w, "{t:.16e},{x:.16e}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads `time,value` rows; a non-numeric first row is taken as a header.
pub fn read_rows(input: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(input)
        .map_err(|e| CliError::config("Io", format!("cannot read {}: {e}", input.display())))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::config("Csv", e.to_string()))?;
        if rec.len() < 2 {
            return Err(CliError::config("Csv", format!("row {} has {} fields, need time,value", i + 1, rec.len())));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(t), Ok(x)) => rows.push((t, x)),
            _ if i == 0 => continue,
            _ => return Err(CliError::config("Csv", format!("row {}: cannot parse `{}`", i + 1, rec.as_slice()))),
        }
    }
    Ok(rows)
}
