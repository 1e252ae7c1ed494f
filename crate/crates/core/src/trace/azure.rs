//! Reader for the public Azure VM trace layout.
//!
//! The directory holds a headerless `vmtable.csv`
//! (`vmid,subscriptionid,deploymentid,vmcreated,vmdeleted,maxcpu,avgcpu,p95maxcpu,vmcategory,vmcorecount,vmmemory`)
//! and one or more headerless `vm_cpu_readings*.csv` files (`timestamp,vmid,mincpu,maxcpu,avgcpu`).
//! The `avgcpu` reading is a utilization in `[0, core_count]`; it is scaled by an assumed
//! maximum clock to obtain MHz and averaged per 300 s slice.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use super::{slice_floor, VmSliceUsage, VmSpec, Workload, SLICE_SECS};
use crate::error::{Error, Result};

pub const DEFAULT_ASSUMED_CLOCK_MHZ: f64 = 3000.0;

const VM_TABLE: &str = "vmtable.csv";
const READINGS_PREFIX: &str = "vm_cpu_readings";

struct Pending {
    spec: VmSpec,
    // slice_start -> (sum of readings, count)
    buckets: BTreeMap<i64, (f64, u32)>,
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str, path: &Path, line: u64) -> Result<&'r str> {
    record
        .get(idx)
        .ok_or_else(|| Error::parse(path, line, format!("missing column {name}")))
}

fn number<T: std::str::FromStr>(raw: &str, name: &str, path: &Path, line: u64) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(path, line, format!("column {name}: cannot parse `{raw}`")))
}

/// Bucketed values such as `>24` are read as their lower bound.
fn bucket_number(raw: &str, name: &str, path: &Path, line: u64) -> Result<f64> {
    number(raw.trim_start_matches('>'), name, path, line)
}

fn readings_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(READINGS_PREFIX) && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads an Azure-format trace directory.
pub fn load_azure_trace(dir: impl AsRef<Path>, assumed_clock_mhz: f64) -> Result<Workload> {
    let dir = dir.as_ref();
    if !(assumed_clock_mhz.is_finite() && assumed_clock_mhz > 0.0) {
        return Err(Error::Argument(format!("assumed clock {assumed_clock_mhz} MHz must be positive")));
    }

    let table_path = dir.join(VM_TABLE);
    let mut vms: BTreeMap<String, Pending> = BTreeMap::new();
    for record in reader(&table_path)?.records() {
        let record = record.map_err(|e| Error::parse(&table_path, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let p = &table_path;
        let vm_id = field(&record, 0, "vmid", p, line)?.to_owned();
        let created: i64 = number(field(&record, 3, "vmcreated", p, line)?, "vmcreated", p, line)?;
        let cores = bucket_number(field(&record, 9, "vmcorecount", p, line)?, "vmcorecount", p, line)?;
        let memory_gb = bucket_number(field(&record, 10, "vmmemory", p, line)?, "vmmemory", p, line)?;
        if cores < 1.0 || memory_gb < 0.0 {
            return Err(Error::parse(p, line, format!("VM {vm_id}: invalid core count or memory")));
        }
        if vms.contains_key(&vm_id) {
            return Err(Error::parse(p, line, format!("duplicate vm_id {vm_id}")));
        }
        let spec = VmSpec {
            vm_id: vm_id.clone(),
            submit_time: slice_floor(created),
            core_count: cores as u32,
            memory_mb: (memory_gb * 1024.0).round() as u64,
            slice_usages: Vec::new(),
        };
        vms.insert(vm_id, Pending { spec, buckets: BTreeMap::new() });
    }

    for path in readings_files(dir)? {
        for record in reader(&path)?.records() {
            let record = record.map_err(|e| Error::parse(&path, 0, e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            let ts: i64 = number(field(&record, 0, "timestamp", &path, line)?, "timestamp", &path, line)?;
            let vm_id = field(&record, 1, "vmid", &path, line)?;
            let util: f64 = number(field(&record, 4, "avgcpu", &path, line)?, "avgcpu", &path, line)?;
            let vm = vms
                .get_mut(vm_id)
                .ok_or_else(|| Error::parse(&path, line, format!("vm_id {vm_id} missing from {VM_TABLE}")))?;
            if !(0.0..=vm.spec.core_count as f64).contains(&util) {
                return Err(Error::parse(
                    &path,
                    line,
                    format!("utilization {util} outside [0, {}] for VM {vm_id}", vm.spec.core_count),
                ));
            }
            let slice = slice_floor(ts);
            if slice < vm.spec.submit_time {
                return Err(Error::parse(&path, line, format!("reading at {ts} precedes creation of VM {vm_id}")));
            }
            let bucket = vm.buckets.entry(slice).or_insert((0.0, 0));
            bucket.0 += util;
            bucket.1 += 1;
        }
    }

    let specs = vms
        .into_values()
        .map(|Pending { mut spec, buckets }| {
            if let Some((&last, _)) = buckets.last_key_value() {
                let mut t = spec.submit_time;
                while t <= last {
                    let usage_mhz = buckets
                        .get(&t)
                        .map_or(0.0, |&(sum, n)| sum / f64::from(n) * assumed_clock_mhz);
                    spec.slice_usages.push(VmSliceUsage { slice_start: t, usage_mhz });
                    t += SLICE_SECS;
                }
            }
            spec
        })
        .collect();

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "azure".to_owned());
    Workload::new(name, specs)
}
