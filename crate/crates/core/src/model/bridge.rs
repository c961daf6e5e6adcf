use serde::{Deserialize, Serialize};
use ssdn_engine::{Real, Tape, Tensor, Var};

use crate::error::{contract, Result};

/// Which encoder stages are split into a self-supervised copy and a
/// bridge-synthesized main copy, and which bridges are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BridgeConfig {
    pub c0: bool,
    pub g1: bool,
    pub g2: bool,
    /// Static filter-mixing matrices learned over the training set.
    pub data: bool,
    /// Per-input mixing matrices predicted by the self-supervised head.
    pub signal: bool,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self::ssdn()
    }
}

impl BridgeConfig {
    /// No split: a single shared encoder.
    pub const fn none() -> Self {
        BridgeConfig { c0: false, g1: false, g2: false, data: false, signal: false }
    }

    /// G1 split with both bridges.
    pub const fn ssdn() -> Self {
        BridgeConfig { c0: false, g1: true, g2: false, data: true, signal: true }
    }

    pub const fn with_flags(c0: bool, g1: bool, g2: bool) -> Self {
        BridgeConfig { c0, g1, g2, data: true, signal: true }
    }

    /// The seven non-empty (C0, G1, G2) combinations, in ablation-table order.
    pub fn ablation_rows() -> Vec<BridgeConfig> {
        [(0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)]
            .into_iter()
            .map(|(a, b, c)| Self::with_flags(a == 1, b == 1, c == 1))
            .collect()
    }

    pub fn is_enabled(&self) -> bool {
        self.data || self.signal
    }

    pub fn any_flag(&self) -> bool {
        self.c0 || self.g1 || self.g2
    }

    /// `"010"` style encoding of the (C0, G1, G2) flags.
    pub fn flags_code(&self) -> String {
        [self.c0, self.g1, self.g2].iter().map(|&f| if f { '1' } else { '0' }).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_enabled() && !self.any_flag() {
            return Err(contract("bridge: a bridge is enabled but none of c0/g1/g2 is set"));
        }
        if !self.is_enabled() && self.any_flag() {
            return Err(contract("bridge: c0/g1/g2 set but neither data nor signal bridge is enabled"));
        }
        Ok(())
    }

    /// Whether encoder group `group` (0-based) is split.
    pub fn splits_group(&self, group: usize) -> bool {
        self.is_enabled() && ((group == 0 && self.g1) || (group == 1 && self.g2))
    }

    pub fn splits_stem(&self) -> bool {
        self.is_enabled() && self.c0
    }
}

/// One bridged convolution: the main-branch copy of `conv` is synthesized
/// from the self-supervised copy's filters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeLayer {
    /// Conv layer name, e.g. `g1.b0.conv1`.
    pub conv: String,
    /// Registry name of the source filters `[J,C,kH,kW]`.
    pub source_param: String,
    /// Registry name of the `[I,J]` data-bridge matrix, when enabled.
    pub alpha_d: Option<String>,
    /// Filters in the derived layer.
    pub out_filters: usize,
    /// Filters in the source layer.
    pub src_filters: usize,
    /// Start of this layer's block in the flattened signal vector.
    pub offset: usize,
}

impl BridgeLayer {
    pub fn alpha_len(&self) -> usize {
        self.out_filters * self.src_filters
    }
}

/// Per-input bridge matrices for a batch, as the flat `[N,D]` head output.
#[derive(Debug, Clone)]
pub struct AlphaSignal {
    pub values: Var,
    pub layers: Vec<BridgeLayer>,
}

impl AlphaSignal {
    /// `[I,J]` matrix of bridge layer `layer` for batch element `sample`.
    pub fn matrix<T: Real>(&self, tape: &Tape<T>, sample: usize, layer: usize) -> Result<Var> {
        let l = &self.layers[layer];
        let row = tape.slice(self.values, 0, sample, sample + 1)?;
        let block = tape.slice(row, 1, l.offset, l.offset + l.alpha_len())?;
        Ok(tape.reshape(block, &[l.out_filters, l.src_filters])?)
    }

    /// Flattened values of one batch element.
    pub fn row<T: Real>(&self, tape: &Tape<T>, sample: usize) -> Result<Vec<f64>> {
        let v = tape.value(self.values)?;
        let d = v.shape()[1];
        Ok(v.data()[sample * d..(sample + 1) * d].iter().map(|x| x.to_f64_lossy()).collect())
    }
}

/// `derived[i] = Σ_j (α^d[i,j] + α^s[i,j]) · source[j]`.
///
/// A missing `alpha_d` stands for the identity (data bridge disabled); a
/// missing `alpha_s` stands for zero (signal bridge disabled).
pub fn bridge_weights<T: Real>(
    tape: &Tape<T>,
    layer: &BridgeLayer,
    alpha_d: Option<Var>,
    alpha_s: Option<Var>,
    source: Var,
) -> Result<Var> {
    let src_shape = tape.shape_of(source)?;
    if src_shape.len() != 4 || src_shape[0] != layer.src_filters {
        return Err(contract(format!(
            "bridge {}: source filters {src_shape:?}, expected {} filters",
            layer.conv, layer.src_filters
        )));
    }
    let want = [layer.out_filters, layer.src_filters];
    for (label, a) in [("alpha_d", alpha_d), ("alpha_s", alpha_s)] {
        if let Some(a) = a {
            let s = tape.shape_of(a)?;
            if s != want {
                return Err(contract(format!("bridge {}: {label} {s:?}, expected {want:?}", layer.conv)));
            }
        }
    }
    let coeff = match (alpha_d, alpha_s) {
        (Some(d), Some(s)) => tape.add(d, s)?,
        (Some(d), None) => d,
        (None, s) => {
            let eye = tape.constant(Tensor::eye(layer.src_filters));
            match s {
                Some(s) => tape.add(eye, s)?,
                None => eye,
            }
        }
    };
    let rest: usize = src_shape[1..].iter().product();
    let bank = tape.reshape(source, &[layer.src_filters, rest])?;
    let mixed = tape.matmul(coeff, bank)?;
    Ok(tape.reshape(mixed, &[layer.out_filters, src_shape[1], src_shape[2], src_shape[3]])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(n: usize) -> BridgeLayer {
        BridgeLayer {
            conv: "test".into(),
            source_param: "test.weight".into(),
            alpha_d: Some("a".into()),
            out_filters: n,
            src_filters: n,
            offset: 0,
        }
    }

    fn filters(tape: &Tape<f64>) -> Var {
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| (i as f64 * 0.7).sin()).collect();
        tape.leaf(Tensor::new([2, 3, 2, 2], data).unwrap(), true)
    }

    #[test]
    fn identity_bridge_reproduces_source_bitwise() {
        let tape = Tape::<f64>::new();
        let src = filters(&tape);
        let ad = tape.leaf(Tensor::eye(2), true);
        let zero = tape.leaf(Tensor::zeros([2, 2]), true);
        let out = bridge_weights(&tape, &layer(2), Some(ad), Some(zero), src).unwrap();
        assert!(tape.value(out).unwrap().bitwise_eq(&tape.value(src).unwrap()));
        let out = bridge_weights(&tape, &layer(2), None, None, src).unwrap();
        assert!(tape.value(out).unwrap().bitwise_eq(&tape.value(src).unwrap()));
    }

    #[test]
    fn zero_bridge_annihilates() {
        let tape = Tape::<f64>::new();
        let src = filters(&tape);
        let zero = tape.leaf(Tensor::zeros([2, 2]), true);
        let out = bridge_weights(&tape, &layer(2), Some(zero), Some(zero), src).unwrap();
        assert!(tape.value(out).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mixing_matches_direct_summation() {
        let tape = Tape::<f64>::new();
        let src = filters(&tape);
        let ad = tape.leaf(Tensor::from_f64([2, 2], &[0.25, 0.5, 0.0, 1.0]).unwrap(), true);
        let asig = tape.leaf(Tensor::from_f64([2, 2], &[0.25, 0.0, 1.0, -1.0]).unwrap(), true);
        let out = bridge_weights(&tape, &layer(2), Some(ad), Some(asig), src).unwrap();
        let s = tape.value_of(src).unwrap();
        let (f1, f2) = s.data().split_at(12);
        let o = tape.value_of(out).unwrap();
        for k in 0..12 {
            assert!((o.data()[k] - (0.5 * f1[k] + 0.5 * f2[k])).abs() < 1e-15);
            assert!((o.data()[12 + k] - f1[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::<f64>::new();
        let src = filters(&tape);
        let bad = tape.leaf(Tensor::zeros([3, 2]), true);
        assert!(bridge_weights(&tape, &layer(2), Some(bad), None, src).is_err());
        assert!(bridge_weights(&tape, &layer(3), None, None, src).is_err());
    }

    #[test]
    fn ablation_rows_enumerate_all_nonempty_flag_sets() {
        let rows = BridgeConfig::ablation_rows();
        let codes: Vec<String> = rows.iter().map(|b| b.flags_code()).collect();
        assert_eq!(codes, ["001", "010", "011", "100", "101", "110", "111"]);
        assert!(rows.iter().all(|b| b.validate().is_ok()));
    }

    #[test]
    fn validation_requires_flags_with_bridges() {
        assert!(BridgeConfig { g1: false, ..BridgeConfig::ssdn() }.validate().is_err());
        assert!(BridgeConfig { g1: true, ..BridgeConfig::none() }.validate().is_err());
        assert!(BridgeConfig::none().validate().is_ok());
    }
}
