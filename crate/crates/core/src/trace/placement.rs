use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of `placement.csv`: where a VM ran historically and, optionally, its mean CPU ready
/// fraction there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub vm_id: String,
    pub host_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_ready_fraction: Option<f64>,
}

pub fn read_placement_file(path: impl AsRef<Path>) -> Result<Vec<PlacementRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("vm_id") || headers.get(1) != Some("host_id") {
        return Err(Error::parse(path, 1, "expected header `vm_id,host_id[,cpu_ready_fraction]`"));
    }
    let mut records = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let (Some(vm_id), Some(host_id)) = (record.get(0), record.get(1)) else {
            return Err(Error::parse(path, line, "expected at least vm_id and host_id"));
        };
        let cpu_ready_fraction = match record.get(2).filter(|s| !s.is_empty()) {
            None => None,
            Some(raw) => {
                let f: f64 = raw
                    .parse()
                    .map_err(|_| Error::parse(path, line, format!("cannot parse cpu_ready_fraction `{raw}`")))?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::parse(path, line, format!("cpu_ready_fraction {f} outside [0, 1]")));
                }
                Some(f)
            }
        };
        records.push(PlacementRecord {
            vm_id: vm_id.to_owned(),
            host_id: host_id.to_owned(),
            cpu_ready_fraction,
        });
    }
    Ok(records)
}

pub fn write_placement_file(records: &[PlacementRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .flexible(true)
        .from_writer(file);
    let with_ready = records.iter().any(|r| r.cpu_ready_fraction.is_some());
    let io = |e: csv::Error| Error::io(path, e.into());
    if with_ready {
        w.write_record(["vm_id", "host_id", "cpu_ready_fraction"]).map_err(io)?;
    } else {
        w.write_record(["vm_id", "host_id"]).map_err(io)?;
    }
    for r in records {
        match (with_ready, r.cpu_ready_fraction) {
            (true, Some(f)) => w.write_record([r.vm_id.as_str(), &r.host_id, &f.to_string()]),
            (true, None) => w.write_record([r.vm_id.as_str(), &r.host_id, ""]),
            (false, _) => w.write_record([r.vm_id.as_str(), &r.host_id]),
        }
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
