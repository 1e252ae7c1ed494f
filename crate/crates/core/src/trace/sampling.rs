//! Load-fraction sampling of VM populations.

use rand::seq::index;
use rand::Rng;

use super::{VmSpec, Workload};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng, Stream};

/// Share of the public trace kept by the uniform pre-sampling step of the composite procedure.
pub const PUBLIC_PRESAMPLE_FRACTION: f64 = 0.01;

pub const PRIVATE_PREFIX: &str = "pri:";
pub const PUBLIC_PREFIX: &str = "pub:";

/// Relative slack on the load bound. Loads are summed in draw order while the reference total is
/// summed in id order, so a full selection can overshoot `1.0` by a few ulps.
pub(crate) const LOAD_BOUND_SLACK: f64 = 1e-9;

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Argument(format!("fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

/// Draws VMs uniformly without replacement, adding each one's whole load, and stops at the first
/// VM that would push the selected load above `fraction * total_load`.
///
/// The `i`-th draw removes `remaining[rng.random_range(0..len)]` with `swap_remove`, starting from
/// the id-sorted member list.
pub(crate) fn select(vms: &[VmSpec], fraction: f64, total_load: f64, rng: &mut SimRng) -> Vec<VmSpec> {
    let bound = fraction * (1.0 + LOAD_BOUND_SLACK);
    let mut remaining: Vec<&VmSpec> = vms.iter().collect();
    let mut selected = Vec::new();
    let mut load = 0.0;
    while !remaining.is_empty() {
        let idx = rng.random_range(0..remaining.len() as u64) as usize;
        let vm = remaining.swap_remove(idx);
        let vm_load = vm.total_load_mflop();
        if (load + vm_load) / total_load > bound {
            break;
        }
        load += vm_load;
        selected.push(vm.clone());
    }
    selected
}

/// Selects a random subset of `workload` whose load is at most `fraction` of `total_load`.
///
/// `total_load` is the reference load, normally that of the full trace the workload came from.
pub fn sample_trace(workload: &Workload, fraction: f64, total_load: f64, seed: u64) -> Result<Workload> {
    check_fraction(fraction)?;
    if !(total_load.is_finite() && total_load > 0.0) {
        return Err(Error::Argument(format!("reference load {total_load} must be positive")));
    }
    let mut rng = rng::stream(seed, Stream::Sampling);
    let selected = select(workload.vms(), fraction, total_load, &mut rng);
    Workload::new(format!("{}@{fraction}", workload.name), selected)
}

/// Combines samples of a private and a public trace, both relative to the private trace's load.
pub fn sample_multiple_traces(
    private: &Workload,
    frac_pri: f64,
    public: &Workload,
    frac_pub: f64,
    seed: u64,
) -> Result<Workload> {
    sample_multiple_traces_with(private, frac_pri, public, frac_pub, PUBLIC_PRESAMPLE_FRACTION, seed)
}

/// [`sample_multiple_traces`] with an explicit public pre-sampling share.
///
/// The pre-sample holds `ceil(presample_fraction * n)` public VMs.
pub fn sample_multiple_traces_with(
    private: &Workload,
    frac_pri: f64,
    public: &Workload,
    frac_pub: f64,
    presample_fraction: f64,
    seed: u64,
) -> Result<Workload> {
    check_fraction(frac_pri)?;
    check_fraction(frac_pub)?;
    check_fraction(presample_fraction)?;
    if private.end_time() != public.end_time() {
        return Err(Error::Argument(format!(
            "trace durations differ ({} s vs {} s); truncate both to the same length first",
            private.end_time(),
            public.end_time()
        )));
    }

    let n = public.len();
    let k = ((presample_fraction * n as f64).ceil() as usize).min(n);
    let mut rng = rng::stream(seed, Stream::PublicPresample);
    let mut picked = index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    let presample: Vec<VmSpec> = picked.into_iter().map(|i| public.vms()[i].clone()).collect();

    let total_load = private.total_load_mflop();
    let mut vms = Vec::new();
    if total_load > 0.0 {
        let mut rng = rng::stream(seed, Stream::Sampling);
        vms.extend(prefixed(select(private.vms(), frac_pri, total_load, &mut rng), PRIVATE_PREFIX));
        let mut rng = rng::stream(seed, Stream::PublicSampling);
        vms.extend(prefixed(select(&presample, frac_pub, total_load, &mut rng), PUBLIC_PREFIX));
    }
    Workload::new(format!("{}+{}", private.name, public.name), vms)
}

fn prefixed(vms: Vec<VmSpec>, prefix: &str) -> impl Iterator<Item = VmSpec> + '_ {
    vms.into_iter().map(move |mut vm| {
        vm.vm_id = format!("{prefix}{}", vm.vm_id);
        vm
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn vm(id: &str, load_slices: &[f64]) -> VmSpec {
        VmSpec::from_series(id, 0, 1, 1, load_slices.iter().copied())
    }

    fn ids(w: &Workload) -> BTreeSet<String> {
        w.vms().iter().map(|v| v.vm_id.clone()).collect()
    }

    fn workload() -> Workload {
        Workload::new(
            "w",
            (0..20).map(|i| vm(&format!("vm{i:02}"), &[100.0 * (i + 1) as f64, 50.0])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn fraction_one_selects_everything() {
        let w = workload();
        for seed in 0..16 {
            let s = sample_trace(&w, 1.0, w.total_load_mflop(), seed).unwrap();
            assert_eq!(ids(&s), ids(&w));
        }
    }

    #[test]
    fn fraction_zero_selects_nothing() {
        let w = workload();
        assert!(sample_trace(&w, 0.0, w.total_load_mflop(), 3).unwrap().is_empty());
    }

    #[test]
    fn fraction_out_of_range_rejected() {
        let w = workload();
        assert!(sample_trace(&w, 1.5, 1.0, 0).is_err());
        assert!(sample_trace(&w, -0.1, 1.0, 0).is_err());
    }

    /// Enumerates all six draw orders of {A:4, B:4, C:2} with fraction 0.5 and checks the guard.
    #[test]
    fn guard_fires_on_first_overflowing_vm() {
        let loads = [("A", 4.0), ("B", 4.0), ("C", 2.0)];
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in perms {
            let mut load = 0.0;
            let mut chosen = Vec::new();
            for &i in &perm {
                if (load + loads[i].1) / 10.0 > 0.5 {
                    break;
                }
                load += loads[i].1;
                chosen.push(loads[i].0);
            }
            // First VM always fits; the second never does.
            assert_eq!(chosen, vec![loads[perm[0]].0]);
        }

        // Find a seed whose draw order starts with C, then check `sample_trace` returns {C}.
        let w = Workload::new(
            "abc",
            vec![vm("A", &[4.0 / 300.0]), vm("B", &[4.0 / 300.0]), vm("C", &[2.0 / 300.0])],
        )
        .unwrap();
        let seed = (0..64u64)
            .find(|&s| {
                let mut rng = rng::stream(s, Stream::Sampling);
                rng.random_range(0..3u64) == 2
            })
            .unwrap();
        let s = sample_trace(&w, 0.5, 10.0, seed).unwrap();
        assert_eq!(ids(&s), BTreeSet::from(["C".to_owned()]));
    }

    #[test]
    fn multiple_traces_private_only() {
        let w = workload();
        let s = sample_multiple_traces(&w, 1.0, &w, 0.0, 9).unwrap();
        let expected: BTreeSet<String> = w.vms().iter().map(|v| format!("{PRIVATE_PREFIX}{}", v.vm_id)).collect();
        assert_eq!(ids(&s), expected);
    }

    #[test]
    fn multiple_traces_zero_fractions_empty() {
        let w = workload();
        assert!(sample_multiple_traces(&w, 0.0, &w, 0.0, 9).unwrap().is_empty());
    }

    #[test]
    fn multiple_traces_reject_duration_mismatch() {
        let a = workload();
        let b = Workload::new("b", vec![vm("x", &[1.0])]).unwrap();
        assert!(matches!(sample_multiple_traces(&a, 0.5, &b, 0.5, 0), Err(Error::Argument(_))));
    }
}
