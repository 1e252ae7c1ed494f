use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::Deserialize;

use super::{VmSliceUsage, VmSpec, Workload, SLICE_SECS};
use crate::error::{Error, Result};

const META_FILE: &str = "meta.csv";
const USAGE_FILE: &str = "usage.csv";
const META_HEADER: [&str; 4] = ["vm_id", "submit_time_s", "core_count", "memory_mb"];
const USAGE_HEADER: [&str; 3] = ["vm_id", "slice_start_s", "usage_mhz"];

#[derive(Debug, Deserialize)]
struct MetaRow {
    vm_id: String,
    submit_time_s: i64,
    core_count: u32,
    memory_mb: u64,
}

#[derive(Debug, Deserialize)]
struct UsageRow {
    vm_id: String,
    slice_start_s: i64,
    usage_mhz: f64,
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let found = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::parse(
            path,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(reader)
}

fn row_line(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// Loads a trace directory holding `meta.csv` and `usage.csv`.
pub fn load_private_trace(dir: impl AsRef<Path>) -> Result<Workload> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let usage_path = dir.join(USAGE_FILE);

    let mut vms: BTreeMap<String, VmSpec> = BTreeMap::new();
    let mut reader = open_csv(&meta_path, &META_HEADER)?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(&meta_path, 0, e.to_string()))?;
        let line = row_line(&record);
        let row: MetaRow = record
            .deserialize(None)
            .map_err(|e| Error::parse(&meta_path, line, e.to_string()))?;
        if row.core_count == 0 {
            return Err(Error::parse(&meta_path, line, format!("VM {}: core_count must be >= 1", row.vm_id)));
        }
        if vms.contains_key(&row.vm_id) {
            return Err(Error::parse(&meta_path, line, format!("duplicate vm_id {}", row.vm_id)));
        }
        vms.insert(
            row.vm_id.clone(),
            VmSpec {
                vm_id: row.vm_id,
                submit_time: row.submit_time_s,
                core_count: row.core_count,
                memory_mb: row.memory_mb,
                slice_usages: Vec::new(),
            },
        );
    }

    let mut reader = open_csv(&usage_path, &USAGE_HEADER)?;
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse(&usage_path, 0, e.to_string()))?;
        let line = row_line(&record);
        let row: UsageRow = record
            .deserialize(None)
            .map_err(|e| Error::parse(&usage_path, line, e.to_string()))?;
        let vm = vms.get_mut(&row.vm_id).ok_or_else(|| {
            Error::parse(&usage_path, line, format!("vm_id {} missing from {META_FILE}", row.vm_id))
        })?;
        if !(row.usage_mhz.is_finite() && row.usage_mhz >= 0.0) {
            return Err(Error::parse(&usage_path, line, format!("usage_mhz {} is negative or not finite", row.usage_mhz)));
        }
        let offset = row.slice_start_s - vm.submit_time;
        if offset < 0 || offset % SLICE_SECS != 0 {
            return Err(Error::parse(
                &usage_path,
                line,
                format!("slice_start_s {} is not on the {SLICE_SECS} s grid from submit time {}", row.slice_start_s, vm.submit_time),
            ));
        }
        if let Some(last) = vm.slice_usages.last() {
            if row.slice_start_s <= last.slice_start {
                return Err(Error::parse(
                    &usage_path,
                    line,
                    format!("non-monotone slice_start_s {} for VM {} (previous {})", row.slice_start_s, row.vm_id, last.slice_start),
                ));
            }
        }
        // Zero-fill gaps: an idle VM is still resident.
        let mut next = vm.slice_usages.last().map_or(vm.submit_time, |s| s.slice_start + SLICE_SECS);
        while next < row.slice_start_s {
            vm.slice_usages.push(VmSliceUsage { slice_start: next, usage_mhz: 0.0 });
            next += SLICE_SECS;
        }
        vm.slice_usages.push(VmSliceUsage { slice_start: row.slice_start_s, usage_mhz: row.usage_mhz });
    }

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "trace".to_owned());
    Workload::new(name, vms.into_values().collect())
}

/// Writes `workload` as a canonical trace directory, creating it if needed.
///
/// Every slice is written, including zero-demand ones.
pub fn write_canonical_trace(workload: &Workload, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let meta_path = dir.join(META_FILE);
    let mut meta = writer(&meta_path)?;
    let usage_path = dir.join(USAGE_FILE);
    let mut usage = writer(&usage_path)?;
    let csv_err = |path: &Path, e: csv::Error| Error::io(path, e.into());

    meta.write_record(META_HEADER).map_err(|e| csv_err(&meta_path, e))?;
    usage.write_record(USAGE_HEADER).map_err(|e| csv_err(&usage_path, e))?;
    for vm in workload.vms() {
        meta.write_record([
            vm.vm_id.as_str(),
            &vm.submit_time.to_string(),
            &vm.core_count.to_string(),
            &vm.memory_mb.to_string(),
        ])
        .map_err(|e| csv_err(&meta_path, e))?;
        for s in &vm.slice_usages {
            usage
                .write_record([vm.vm_id.as_str(), &s.slice_start.to_string(), &s.usage_mhz.to_string()])
                .map_err(|e| csv_err(&usage_path, e))?;
        }
    }
    meta.flush().map_err(|e| Error::io(&meta_path, e))?;
    usage.flush().map_err(|e| Error::io(&usage_path, e))?;
    Ok(())
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, meta: &str, usage: &str) {
        fs::write(dir.join(META_FILE), meta).unwrap();
        fs::write(dir.join(USAGE_FILE), usage).unwrap();
    }

    #[test]
    fn two_rows_give_expected_load() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,0,2,4096\n",
            "vm_id,slice_start_s,usage_mhz\nvm1,0,1000\nvm1,300,2000\n",
        );
        let w = load_private_trace(tmp.path()).unwrap();
        assert_eq!(w.total_load_mflop(), 900_000.0);
        assert_eq!(w.vms()[0].slice_usages.len(), 2);
    }

    #[test]
    fn empty_usage_keeps_vm_with_zero_slices() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,0,1,512\n",
            "vm_id,slice_start_s,usage_mhz\n",
        );
        let w = load_private_trace(tmp.path()).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w.vms()[0].slice_usages.is_empty());
        assert_eq!(w.total_load_mflop(), 0.0);
    }

    #[test]
    fn duplicate_vm_id_names_row() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,0,1,512\nvm1,0,1,512\n",
            "vm_id,slice_start_s,usage_mhz\n",
        );
        match load_private_trace(tmp.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("vm1"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_vm_in_usage_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,0,1,512\n",
            "vm_id,slice_start_s,usage_mhz\nvm2,0,5\n",
        );
        assert!(matches!(load_private_trace(tmp.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,0,1,512\n",
            "vm_id,slice_start_s,usage_mhz\nvm1,300,5\nvm1,0,5\n",
        );
        assert!(matches!(load_private_trace(tmp.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn gaps_are_zero_filled() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,600,1,512\n",
            "vm_id,slice_start_s,usage_mhz\nvm1,1200,7\n",
        );
        let w = load_private_trace(tmp.path()).unwrap();
        let usages: Vec<f64> = w.vms()[0].slice_usages.iter().map(|s| s.usage_mhz).collect();
        assert_eq!(usages, vec![0.0, 0.0, 7.0]);
    }

    #[test]
    fn off_grid_slice_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "vm_id,submit_time_s,core_count,memory_mb\nvm1,0,1,512\n",
            "vm_id,slice_start_s,usage_mhz\nvm1,150,5\n",
        );
        assert!(load_private_trace(tmp.path()).is_err());
    }

    #[test]
    fn wrong_header_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "id,submit,cores,mem\n", "vm_id,slice_start_s,usage_mhz\n");
        assert!(matches!(load_private_trace(tmp.path()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_directory_is_io_error() {
        let err = load_private_trace("/nonexistent/trace").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.is_validation());
    }
}
