use crate::error::{Error, Result};

/// Max-min fair division of `capacity` among `requests` (progressive water-filling).
///
/// Requests are visited in ascending order; each one either fits within an equal split of the
/// remaining capacity and is granted in full, or the remaining capacity is split equally among
/// it and all larger requests. The result depends only on the multiset of requests.
pub fn fair_share(capacity: f64, requests: &[f64]) -> Result<Vec<f64>> {
    if !(capacity.is_finite() && capacity >= 0.0) {
        return Err(Error::Argument(format!("capacity {capacity} must be finite and non-negative")));
    }
    if let Some(r) = requests.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::Argument(format!("request {r} must be finite and non-negative")));
    }
    Ok(water_fill(capacity, requests))
}

pub(crate) fn water_fill(capacity: f64, requests: &[f64]) -> Vec<f64> {
    let total: f64 = requests.iter().sum();
    if total <= capacity {
        return requests.to_vec();
    }
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| requests[a].total_cmp(&requests[b]));

    let mut granted = vec![0.0; requests.len()];
    let mut remaining = capacity;
    for (pos, &i) in order.iter().enumerate() {
        let share = remaining / (order.len() - pos) as f64;
        if requests[i] <= share {
            granted[i] = requests[i];
            remaining -= requests[i];
        } else {
            for &j in &order[pos..] {
                granted[j] = share;
            }
            break;
        }
    }
    granted
}
