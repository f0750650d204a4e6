use std::path::Path;

use xgate::nanonet::TrainRecord;

/// Number of trailing records averaged in summaries.
pub const TAIL: usize = 5;

/// A CSV document with a `# xgate-<kind> v1` comment line ahead of the header row.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(kind: &str, columns: &[&str]) -> Table {
        let mut buf = Vec::new();
        buf.extend_from_slice(format!("# xgate-{kind} v1\n").as_bytes());
        let mut writer = csv::WriterBuilder::new().from_writer(buf);
        writer.write_record(columns).expect("in-memory write");
        Table { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }

    pub fn save(self, path: &Path) -> xgate::Result<()> {
        std::fs::write(path, self.into_bytes()).map_err(|e| xgate::Error::io(path, e))
    }
}

/// Shortest round-trip text for a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Mean and standard error (n - 1 denominator). The error is NaN below two samples.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Losses of the last [`TAIL`] records.
pub fn tail_losses(records: &[TrainRecord]) -> Vec<f64> {
    records[records.len().saturating_sub(TAIL)..]
        .iter()
        .map(|r| r.loss)
        .collect()
}

/// Mean, min and max of one block's range parameters.
pub fn alpha_stats(alpha: &[f64]) -> (f64, f64, f64) {
    if alpha.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
    let min = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}
