use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// One logged scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: u64,
    pub name: String,
    pub value: f64,
}

pub const CSV_HEADER: &str = "step,epoch,name,value";

type Callback = Box<dyn FnMut(&MetricRecord) + Send>;

enum Sink {
    Stdout,
    Csv { path: PathBuf, out: BufWriter<File> },
    Callback(Callback),
}

/// Writes `(step, epoch, name, value)` records to one or more sinks, flushing
/// every `flush_every` records.
pub struct MetricsLogger {
    sinks: Vec<Sink>,
    flush_every: usize,
    pending: usize,
}

impl std::fmt::Debug for MetricsLogger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsLogger")
            .field("sinks", &self.sinks.len())
            .field("flush_every", &self.flush_every)
            .finish()
    }
}

impl MetricsLogger {
    pub fn new(flush_every: usize) -> Self {
        Self {
            sinks: Vec::new(),
            flush_every: flush_every.max(1),
            pending: 0,
        }
    }

    /// A logger that drops everything.
    pub fn null() -> Self {
        Self::new(1)
    }

    pub fn with_stdout(mut self) -> Self {
        self.sinks.push(Sink::Stdout);
        self
    }

    /// Appends to `path`, writing the header when the file is new or empty.
    pub fn with_csv(mut self, path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        self.sinks.push(Sink::Csv {
            path: path.to_path_buf(),
            out,
        });
        Ok(self)
    }

    pub fn with_callback(mut self, f: impl FnMut(&MetricRecord) + Send + 'static) -> Self {
        self.sinks.push(Sink::Callback(Box::new(f)));
        self
    }

    /// Adds a callback sink that collects records into the returned buffer.
    pub fn with_memory(self) -> (Self, Arc<Mutex<Vec<MetricRecord>>>) {
        let buf = Arc::new(Mutex::new(Vec::new()));
        let handle = Arc::clone(&buf);
        let logger = self.with_callback(move |r| buf.lock().expect("metrics buffer").push(r.clone()));
        (logger, handle)
    }

    pub fn log(&mut self, record: MetricRecord) -> Result<()> {
        for sink in &mut self.sinks {
            match sink {
                Sink::Stdout => println!(
                    "step {:>7} epoch {:>4} {:<12} {:.6}",
                    record.step, record.epoch, record.name, record.value
                ),
                Sink::Csv { path, out } => {
                    writeln!(out, "{},{},{},{}", record.step, record.epoch, record.name, record.value)
                        .map_err(|e| Error::io(path.as_path(), e))?;
                }
                Sink::Callback(f) => f(&record),
            }
        }
        self.pending += 1;
        if self.pending >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn log_all(&mut self, step: u64, epoch: u64, values: &[(String, f64)]) -> Result<()> {
        for (name, value) in values {
            self.log(MetricRecord {
                step,
                epoch,
                name: name.clone(),
                value: *value,
            })?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        for sink in &mut self.sinks {
            if let Sink::Csv { path, out } = sink {
                out.flush().map_err(|e| Error::io(path.as_path(), e))?;
            }
        }
        self.pending = 0;
        Ok(())
    }
}

impl Drop for MetricsLogger {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_row_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        {
            let mut log = MetricsLogger::new(2).with_csv(&path).unwrap();
            log.log_all(1, 0, &[("gan".into(), 0.5), ("total".into(), 1.25)]).unwrap();
            log.log_all(2, 0, &[("gan".into(), 0.25)]).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,epoch,name,value\n1,0,gan,0.5\n1,0,total,1.25\n2,0,gan,0.25\n");
        {
            let mut log = MetricsLogger::new(2).with_csv(&path).unwrap();
            log.log_all(3, 1, &[("gan".into(), 1.0)]).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("step,epoch").count(), 1);
    }

    #[test]
    fn memory_sink_collects_records() {
        let (mut log, buf) = MetricsLogger::null().with_memory();
        log.log_all(7, 3, &[("mse".into(), 0.1)]).unwrap();
        let recs = buf.lock().unwrap();
        assert_eq!(recs[0], MetricRecord { step: 7, epoch: 3, name: "mse".into(), value: 0.1 });
    }
}
