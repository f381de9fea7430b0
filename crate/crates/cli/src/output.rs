use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

/// `println!` that stops quietly when standard output is closed, as with
/// `fiberm2 modes | head -1`.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
pub(crate) use say;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

/// Effective parameters of one invocation.
#[derive(Debug, Serialize)]
pub struct RunConfig<'a, A: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub threads: Option<usize>,
    pub args: &'a A,
}

impl<'a, A: Serialize> RunConfig<'a, A> {
    pub fn new(subcommand: &'static str, threads: Option<usize>, args: &'a A) -> Self {
        RunConfig {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            threads,
            args,
        }
    }
}

fn io_error(path: &Path, source: io::Error) -> fiberm2::Error {
    fiberm2::Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(())
}

/// Creates the parent directory of `path` if it has one.
pub fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path).map_err(|e| io_error(path, e))?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(fiberm2::Error::from)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn print_json<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    say!(
        "{}",
        serde_json::to_string_pretty(value).map_err(fiberm2::Error::from)?
    );
    Ok(())
}

/// Audit-trail file for an output that is itself a file: `out.csv` gets
/// `out.run_config.json`.
pub fn run_config_beside(path: &Path) -> PathBuf {
    path.with_extension(RUN_CONFIG_FILE)
}

/// CSV to `path`, or to standard output when no path is given.
pub fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            create_parent(p)?;
            Box::new(fs::File::create(p).map_err(|e| io_error(p, e))?)
        }
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

/// Writes `rows` with a header row taken from the field names.
pub fn write_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
