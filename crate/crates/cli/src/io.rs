//! Atomic file output and the dataset CSV format.

use std::fs;
use std::io::Write;
use std::path::Path;

use reweight_core::data::SplitDataset;
use reweight_core::objective::LabeledBatch;
use reweight_core::Matrix;

use crate::error::CliError;
use crate::fmt::sig;

/// Digits for dataset coordinates: enough to round-trip every f64.
pub const DATA_DIGITS: usize = 17;
/// Digits for metrics and other plotting output.
pub const OUT_DIGITS: usize = 9;

/// Writes through a sibling temp file and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

/// Builds CSV text in memory.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory flush")
    }
}

const SPLITS: [&str; 4] = ["labeled", "validation", "unlabeled", "test"];

/// `split,id,x0,x1,label`, one row per point. Unlabeled rows carry their
/// hidden label.
pub fn dataset_csv(data: &SplitDataset) -> Vec<u8> {
    let mut t = Table::new(&["split", "id", "x0", "x1", "label"]);
    let parts: [(&Matrix, &[usize]); 4] = [
        (&data.labeled().x, &data.labeled().labels),
        (&data.validation().x, &data.validation().labels),
        (data.unlabeled_points(), data.hidden_labels()),
        (&data.test().x, &data.test().labels),
    ];
    for (split, (x, y)) in SPLITS.iter().zip(parts) {
        for (id, (row, label)) in x.row_iter().zip(y).enumerate() {
            t.row([
                split.to_string(),
                id.to_string(),
                sig(row[0], DATA_DIGITS),
                sig(row[1], DATA_DIGITS),
                label.to_string(),
            ]);
        }
    }
    t.into_bytes()
}

pub fn read_dataset(path: &Path) -> Result<SplitDataset, CliError> {
    let bad = |m: String| CliError::Usage(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        k => bad(format!("{k:?}")),
    })?;
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["split", "id", "x0", "x1", "label"] {
        return Err(bad("expected header split,id,x0,x1,label".into()));
    }
    let mut parts: [(Vec<f64>, Vec<usize>); 4] = Default::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let at = |m: &str| bad(format!("row {}: {m}", line + 2));
        let k = SPLITS
            .iter()
            .position(|s| *s == &rec[0])
            .ok_or_else(|| at("unknown split"))?;
        let id: usize = rec[1].parse().map_err(|_| at("bad id"))?;
        if id != parts[k].1.len() {
            return Err(at("ids must count up from 0 within each split"));
        }
        let x0: f64 = rec[2].parse().map_err(|_| at("bad x0"))?;
        let x1: f64 = rec[3].parse().map_err(|_| at("bad x1"))?;
        let y: usize = rec[4].parse().map_err(|_| at("bad label"))?;
        parts[k].0.extend([x0, x1]);
        parts[k].1.push(y);
    }
    let [l, v, u, t] = parts;
    let batch = |(x, y): (Vec<f64>, Vec<usize>)| -> Result<LabeledBatch, CliError> {
        Ok(LabeledBatch::new(Matrix::from_vec(y.len(), 2, x)?, y)?)
    };
    let u = batch(u)?;
    Ok(SplitDataset::new(
        batch(l)?,
        batch(v)?,
        u.x,
        u.labels,
        batch(t)?,
    )?)
}
