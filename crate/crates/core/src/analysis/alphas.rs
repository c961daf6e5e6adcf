use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use ssdn_engine::{Real, Tape};

use crate::error::{contract, Error, Result};
use crate::model::Model;
use crate::shifts::ImageDataset;

/// Flattened `α^s` of one test sample and the shift it was drawn under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub alpha: Vec<f64>,
    pub shift: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// First two principal coordinates of each record.
    pub coords: Vec<[f64; 2]>,
    pub shifts: Vec<String>,
    pub sample_silhouette: Vec<f64>,
    /// Mean silhouette of each shift's records.
    pub per_shift: BTreeMap<String, f64>,
    pub mean_silhouette: f64,
    /// Share of standardized variance along each component.
    pub explained: [f64; 2],
}

/// Signals the model predicts for every image of `data`.
pub fn collect_alphas<T: Real>(model: &Model<T>, data: &ImageDataset, shift: &str) -> Result<Vec<AlphaRecord>> {
    if !model.bridge.is_enabled() {
        return Err(contract("alpha signals need a bridged model"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(64) {
        let tape = Tape::new();
        let p = model.bind(&tape, |_, _| false);
        let xv = tape.constant(data.batch::<T>(chunk)?);
        let alpha = model.forward_ss(&tape, &p, xv)?.alpha.expect("bridged model predicts alpha");
        for s in 0..chunk.len() {
            out.push(AlphaRecord { alpha: alpha.row(&tape, s)?, shift: shift.to_string() });
        }
    }
    Ok(out)
}

/// Per-point silhouette `(b − a) / max(a, b)` with Euclidean distance.
/// Points alone in their cluster score 0.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> Vec<f64> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&l| sizes[l] += 1);
    points
        .iter()
        .zip(labels)
        .map(|(p, &own)| {
            if sizes[own] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (q, &l) in points.iter().zip(labels) {
                sums[l] += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k).filter(|&c| c != own && sizes[c] > 0).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if !b.is_finite() || m == 0.0 { 0.0 } else { (b - a) / m }
        })
        .collect()
}

/// Standardizes each feature, projects onto the top two principal axes
/// and scores how well the shifts separate there.
pub fn alpha_projection(records: &[AlphaRecord]) -> Result<ClusterReport> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.shift.as_str()).or_default() += 1;
    }
    if counts.len() < 2 || counts.values().any(|&c| c < 10) {
        return Err(contract(format!("alpha projection needs ≥2 shifts with ≥10 records each, got {counts:?}")));
    }
    let d = records[0].alpha.len();
    if d == 0 || records.iter().any(|r| r.alpha.len() != d) {
        return Err(contract("alpha records must share one non-zero length"));
    }
    let n = records.len();
    let mut z = DMatrix::from_fn(n, d, |i, j| records[i].alpha[j]);
    let mut live = 0;
    for mut col in z.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / (n - 1) as f64).sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            col /= sd;
            live += 1;
        } else {
            col.fill(0.0);
        }
    }
    if live == 0 {
        return Err(Error::Degenerate("every alpha feature is constant".into()));
    }
    let cov = z.transpose() * &z / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut coords = vec![[0.0; 2]; n];
    let mut explained = [0.0; 2];
    for (c, &axis) in order.iter().take(2).enumerate() {
        let mut v = eig.eigenvectors.column(axis).into_owned();
        // Sign fixed by the largest-magnitude loading.
        let pivot = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        if pivot < 0.0 {
            v.neg_mut();
        }
        let proj = &z * v;
        for i in 0..n {
            coords[i][c] = proj[i];
        }
        explained[c] = eig.eigenvalues[axis].max(0.0) / total;
    }
    let names: Vec<&str> = counts.keys().copied().collect();
    let labels: Vec<usize> = records.iter().map(|r| names.binary_search(&r.shift.as_str()).unwrap()).collect();
    let sample_silhouette = silhouette(&coords, &labels);
    let per_shift = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let vals: Vec<f64> = sample_silhouette.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(s, _)| *s).collect();
            (name.to_string(), vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect();
    let mean_silhouette = sample_silhouette.iter().sum::<f64>() / n as f64;
    Ok(ClusterReport {
        coords,
        shifts: records.iter().map(|r| r.shift.clone()).collect(),
        sample_silhouette,
        per_shift,
        mean_silhouette,
        explained,
    })
}

impl ClusterReport {
    /// Mean silhouette of the records of shifts `a` and `b` alone, in the
    /// shared projection.
    pub fn pair_separation(&self, a: &str, b: &str) -> Result<f64> {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (p, s) in self.coords.iter().zip(&self.shifts) {
            if s == a || s == b {
                pts.push(*p);
                labels.push(usize::from(s == b));
            }
        }
        if !labels.contains(&0) || !labels.contains(&1) {
            return Err(contract(format!("no records for shift `{a}` or `{b}`")));
        }
        let s = silhouette(&pts, &labels);
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Rows `sample,pc1,pc2,shift,silhouette`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "pc1", "pc2", "shift", "silhouette"])?;
        for (i, ((p, s), sil)) in self.coords.iter().zip(&self.shifts).zip(&self.sample_silhouette).enumerate() {
            w.write_record([i.to_string(), format!("{:.6}", p[0]), format!("{:.6}", p[1]), s.clone(), format!("{sil:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}
