use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

/// Prints the resolved configuration as the first line of stdout.
pub fn print_config<T: Serialize>(config: &T) -> io::Result<()> {
    let line = serde_json::to_string(config).map_err(io::Error::other)?;
    let mut out = io::stdout().lock();
    writeln!(out, "# config {line}")?;
    out.flush()
}

/// The file at `path`, or stdout.
pub fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// CSV writer that starts with a `# schema: <name>` comment line.
pub fn csv_with_schema(
    path: Option<&Path>,
    schema: &str,
) -> io::Result<csv::Writer<Box<dyn Write>>> {
    let mut w = sink(path)?;
    writeln!(w, "# schema: {schema}")?;
    Ok(csv::Writer::from_writer(w))
}

pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> io::Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::other)?;
    writeln!(w)?;
    w.flush()
}
