//! Full synthetic training sets via SMOTE-style generation.
//!
//! For every class, a seed row `v` is drawn uniformly, one of its `k` nearest
//! same-class neighbours `w` is drawn uniformly, and a new row is produced
//! from `v`, `w` and `r ~ U[0, 1)`. The default direction extrapolates away
//! from the neighbour, `z = v + r (v - w)`; the textbook interpolation
//! `z = v + r (w - v)` is available as [`SmoteDirection::Interpolate`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Origin, Samples};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteDirection {
    /// `z = v + r (v - w)`
    #[default]
    AsWritten,
    /// `z = v + r (w - v)`
    Interpolate,
}

impl fmt::Display for SmoteDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmoteDirection::AsWritten => "as_written",
            SmoteDirection::Interpolate => "interpolate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCount {
    /// As many synthetic rows per class as the device has real ones.
    #[default]
    MatchReal,
    /// Fixed count for every class (balanced output).
    PerClass(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoteConfig {
    pub k: usize,
    pub samples_per_class: SampleCount,
    pub direction: SmoteDirection,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k: 5,
            samples_per_class: SampleCount::MatchReal,
            direction: SmoteDirection::AsWritten,
        }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("SMOTE k must be at least 1"));
        }
        if self.samples_per_class == SampleCount::PerClass(0) {
            return Err(Error::config("SMOTE samples per class must be positive"));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` rows nearest to row `query` (Euclidean), excluding the
/// query itself, ordered by distance with ties broken by index.
pub fn k_nearest_neighbors(points: &Matrix, query: usize, k: usize) -> Result<Vec<usize>> {
    let n = points.rows();
    if query >= n {
        return Err(Error::data(format!("query index {query} out of range for {n} points")));
    }
    if k == 0 || k >= n {
        return Err(Error::data(format!(
            "cannot pick {k} neighbours among {} other points",
            n - 1
        )));
    }
    let q = points.row(query);
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&i| i != query)
        .map(|i| (sq_dist(q, points.row(i)), i))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by);
    Ok(cand.into_iter().map(|(_, i)| i).collect())
}

pub fn generate_sample(v: &[f64], w: &[f64], r: f64, direction: SmoteDirection) -> Result<Vec<f64>> {
    if v.len() != w.len() {
        return Err(Error::shape(format!(
            "seed has {} features, neighbour has {}",
            v.len(),
            w.len()
        )));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(format!("interpolation factor {r} outside [0, 1]")));
    }
    Ok(match direction {
        SmoteDirection::AsWritten => v.iter().zip(w).map(|(a, b)| a + r * (a - b)).collect(),
        SmoteDirection::Interpolate => v.iter().zip(w).map(|(a, b)| a + r * (b - a)).collect(),
    })
}

/// How one synthetic row was produced; indices refer to the input rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub seed: usize,
    pub neighbor: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub samples: Samples,
    pub provenance: Vec<Provenance>,
    pub direction: SmoteDirection,
}

/// Generates a synthetic replacement for one device's training rows.
/// Generation is stratified by class and neighbours are searched within the
/// class only. Output rows are grouped by class, class 0 first.
pub fn generate_synthetic_dataset(
    device_id: &str,
    real: &Samples,
    cfg: &SmoteConfig,
    rng: &mut StreamRng,
) -> Result<SyntheticSet> {
    cfg.validate()?;
    let width = real.x.cols();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for class in 0..=1u8 {
        let members: Vec<usize> = (0..real.len()).filter(|&i| real.y[i] == class).collect();
        if members.len() <= cfg.k {
            return Err(Error::data(format!(
                "device {device_id}: class {class} has {} rows, SMOTE with k={} needs more than k",
                members.len(),
                cfg.k
            )));
        }
        let class_points = real.x.select_rows(&members);
        let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; members.len()];
        let count = match cfg.samples_per_class {
            SampleCount::MatchReal => members.len(),
            SampleCount::PerClass(n) => n,
        };
        for _ in 0..count {
            let local = rng.random_range(0..members.len());
            if neighbours[local].is_none() {
                neighbours[local] = Some(k_nearest_neighbors(&class_points, local, cfg.k)?);
            }
            let nn = neighbours[local].as_ref().unwrap();
            let pick = nn[rng.random_range(0..nn.len())];
            let r: f64 = rng.random();
            let z = generate_sample(class_points.row(local), class_points.row(pick), r, cfg.direction)?;
            rows.extend(z);
            labels.push(class);
            provenance.push(Provenance {
                seed: members[local],
                neighbor: members[pick],
                r,
            });
        }
    }
    let n = labels.len();
    Ok(SyntheticSet {
        samples: Samples::new(Matrix::from_vec(n, width, rows)?, labels, Origin::Synthetic)?,
        provenance,
        direction: cfg.direction,
    })
}

/// Recovers `r` from each coordinate of a generated row and returns the
/// recovered value plus the spread across coordinates. Coordinates where the
/// seed and neighbour coincide carry no information and are skipped.
pub fn recover_r(z: &[f64], v: &[f64], w: &[f64], direction: SmoteDirection) -> Option<(f64, f64)> {
    let mut rs = Vec::new();
    for ((zi, vi), wi) in z.iter().zip(v).zip(w) {
        let step = match direction {
            SmoteDirection::AsWritten => vi - wi,
            SmoteDirection::Interpolate => wi - vi,
        };
        if step.abs() > 1e-9 {
            rs.push((zi - vi) / step);
        }
    }
    if rs.is_empty() {
        return None;
    }
    let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((rs.iter().sum::<f64>() / rs.len() as f64, hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};

    fn line(vals: &[f64]) -> Matrix {
        Matrix::from_vec(vals.len(), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn knn_on_a_line() {
        let p = line(&[0.0, 1.0, 2.0, 10.0]);
        assert_eq!(k_nearest_neighbors(&p, 1, 2).unwrap(), vec![0, 2]);
        assert_eq!(k_nearest_neighbors(&p, 3, 3).unwrap(), vec![2, 1, 0]);
        assert!(matches!(k_nearest_neighbors(&p, 0, 4), Err(Error::Data(_))));
    }

    #[test]
    fn knn_ties_break_by_index() {
        let p = line(&[5.0, 4.0, 6.0, 3.0, 7.0]);
        assert_eq!(k_nearest_neighbors(&p, 0, 4).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn sample_formula() {
        let d = SmoteDirection::AsWritten;
        assert_eq!(generate_sample(&[1.0, 2.0], &[3.0, 4.0], 0.0, d).unwrap(), vec![1.0, 2.0]);
        assert_eq!(generate_sample(&[1.0, 2.0], &[3.0, 4.0], 1.0, d).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(generate_sample(&[0.0, 0.0], &[2.0, 2.0], 0.5, d).unwrap(), vec![-1.0, -1.0]);
        let i = SmoteDirection::Interpolate;
        assert_eq!(generate_sample(&[0.0, 0.0], &[2.0, 2.0], 0.5, i).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(generate_sample(&[0.0], &[1.0, 2.0], 0.5, d), Err(Error::Shape(_))));
    }

    fn device(n0: usize, n1: usize) -> Samples {
        let mut rng = Streams::new(4).stream(Purpose::ScenarioGen, 0, 0);
        let n = n0 + n1;
        let data = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|i| u8::from(i >= n0)).collect();
        Samples::new(Matrix::from_vec(n, 3, data).unwrap(), y, Origin::Real).unwrap()
    }

    #[test]
    fn match_real_preserves_class_counts() {
        let real = device(100, 100);
        let mut rng = Streams::new(1).stream(Purpose::Smote, 0, 0);
        let out = generate_synthetic_dataset("d", &real, &SmoteConfig::default(), &mut rng).unwrap();
        assert_eq!(out.samples.len(), 200);
        assert_eq!(out.samples.positives(), 100);
        assert_eq!(out.samples.origin, Origin::Synthetic);

        let real = device(30, 70);
        let out = generate_synthetic_dataset("d", &real, &SmoteConfig::default(), &mut rng).unwrap();
        assert_eq!((out.samples.len(), out.samples.positives()), (100, 70));
    }

    #[test]
    fn per_class_count_balances() {
        let real = device(30, 70);
        let cfg = SmoteConfig { samples_per_class: SampleCount::PerClass(50), ..SmoteConfig::default() };
        let mut rng = Streams::new(1).stream(Purpose::Smote, 0, 0);
        let out = generate_synthetic_dataset("d", &real, &cfg, &mut rng).unwrap();
        assert_eq!((out.samples.len(), out.samples.positives()), (100, 50));
    }

    #[test]
    fn degenerate_classes_are_data_errors() {
        let mut rng = Streams::new(1).stream(Purpose::Smote, 0, 0);
        let err = generate_synthetic_dataset("node7", &device(40, 0), &SmoteConfig::default(), &mut rng).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Data(_)));
        assert!(msg.contains("node7") && msg.contains("class 1"), "{msg}");
        assert!(generate_synthetic_dataset("d", &device(5, 40), &SmoteConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn provenance_is_consistent() {
        let real = device(60, 40);
        for direction in [SmoteDirection::AsWritten, SmoteDirection::Interpolate] {
            let cfg = SmoteConfig { direction, ..SmoteConfig::default() };
            let mut rng = Streams::new(9).stream(Purpose::Smote, 0, 0);
            let out = generate_synthetic_dataset("d", &real, &cfg, &mut rng).unwrap();
            for (i, p) in out.provenance.iter().enumerate() {
                assert_eq!(real.y[p.seed], out.samples.y[i]);
                assert_eq!(real.y[p.neighbor], out.samples.y[i]);
                let (r, spread) = recover_r(out.samples.x.row(i), real.x.row(p.seed), real.x.row(p.neighbor), direction).unwrap();
                assert!(spread < 1e-9);
                assert!((r - p.r).abs() < 1e-9 && (0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let real = device(50, 50);
        let run = |s| {
            let mut rng = Streams::new(s).stream(Purpose::Smote, 3, 0);
            generate_synthetic_dataset("d", &real, &SmoteConfig::default(), &mut rng).unwrap()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1).samples, run(2).samples);
    }
}
