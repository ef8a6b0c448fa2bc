//! Hard-label majority vote over three methods.

use crate::error::{Error, Result};
use crate::metrics::{DeviceResult, MethodReport};

pub fn majority_vote(votes: [u8; 3]) -> u8 {
    u8::from(votes.iter().filter(|&&v| v == 1).count() >= 2)
}

/// Per-frame majority vote of three reports that cover the same devices and
/// test frames in the same order.
pub fn run_ensemble(
    name: &str,
    members: [&MethodReport; 3],
    config_fingerprint: String,
    seed: u64,
) -> Result<MethodReport> {
    let [a, b, c] = members;
    let n = a.devices.len();
    if b.devices.len() != n || c.devices.len() != n {
        return Err(Error::protocol("ensemble members cover different device sets"));
    }
    let mut devices = Vec::with_capacity(n);
    for ((da, db), dc) in a.devices.iter().zip(&b.devices).zip(&c.devices) {
        if da.device_id != db.device_id || da.device_id != dc.device_id {
            return Err(Error::protocol(format!(
                "ensemble members disagree on device order: {} / {} / {}",
                da.device_id, db.device_id, dc.device_id
            )));
        }
        if da.labels != db.labels || da.labels != dc.labels {
            return Err(Error::protocol(format!(
                "ensemble members disagree on test frames of device {}",
                da.device_id
            )));
        }
        let votes = da
            .predictions
            .iter()
            .zip(&db.predictions)
            .zip(&dc.predictions)
            .map(|((&x, &y), &z)| majority_vote([x, y, z]))
            .collect();
        devices.push(DeviceResult::new(
            da.device_id.clone(),
            votes,
            da.labels.clone(),
            da.fallback || db.fallback || dc.fallback,
        )?);
    }
    Ok(MethodReport {
        method: name.to_string(),
        devices,
        config_fingerprint,
        seed,
    })
}
