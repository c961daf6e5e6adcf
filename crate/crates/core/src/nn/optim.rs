use indexmap::IndexMap;
use ssdn_engine::{Real, Tensor};

use super::registry::{Group, ParamGrads, ParamRegistry};
use crate::error::{contract, Result};

/// SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Real> SgdState<T> {
    /// Zero momentum buffer for every registered parameter.
    pub fn new(registry: &ParamRegistry<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let buffers =
            registry.iter().map(|(name, p)| (name.to_string(), Tensor::zeros(p.value.shape().to_vec()))).collect();
        SgdState { lr, momentum, weight_decay, buffers }
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn bitwise_eq(&self, other: &SgdState<T>) -> bool {
        self.lr.to_bits() == other.lr.to_bits()
            && self.momentum.to_bits() == other.momentum.to_bits()
            && self.weight_decay.to_bits() == other.weight_decay.to_bits()
            && self.buffers.len() == other.buffers.len()
            && self.buffers.iter().zip(&other.buffers).all(|((a, x), (b, y))| a == b && x.bitwise_eq(y))
    }
}

/// One update of the parameters whose group is in `groups`.
///
/// `v ← μ·v + g + wd·p; p ← p − lr·v`. A selected parameter without a
/// gradient is updated as if its gradient were zero.
pub fn sgd_step<T: Real>(
    registry: &mut ParamRegistry<T>,
    grads: &ParamGrads<T>,
    state: &mut SgdState<T>,
    groups: &[Group],
) -> Result<()> {
    sgd_step_where(registry, grads, state, |_, g| groups.contains(&g))
}

/// [`sgd_step`] with an arbitrary name/group predicate.
pub fn sgd_step_where<T: Real>(
    registry: &mut ParamRegistry<T>,
    grads: &ParamGrads<T>,
    state: &mut SgdState<T>,
    select: impl Fn(&str, Group) -> bool,
) -> Result<()> {
    let lr = T::from_f64_lossy(state.lr);
    let mu = T::from_f64_lossy(state.momentum);
    let wd = T::from_f64_lossy(state.weight_decay);
    let selected: Vec<String> =
        registry.iter().filter(|(n, p)| select(n, p.group)).map(|(n, _)| n.to_string()).collect();
    for name in selected {
        let param = registry.get_mut(&name).expect("name taken from registry");
        let buf = state
            .buffers
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(param.shape().to_vec()));
        if buf.shape() != param.shape() {
            return Err(contract(format!("momentum buffer for `{name}` has shape {:?}", buf.shape())));
        }
        let grad = grads.get(&name);
        if let Some(g) = grad {
            if g.shape() != param.shape() {
                return Err(contract(format!("gradient for `{name}` has shape {:?}", g.shape())));
            }
        }
        let p = param.data_mut();
        let v = buf.data_mut();
        for i in 0..p.len() {
            let g = grad.map_or(T::zero(), |g| g.data()[i]);
            v[i] = mu * v[i] + g + wd * p[i];
            p[i] = p[i] - lr * v[i];
        }
    }
    Ok(())
}

/// `base · ½(1 + cos(π·step/total))`
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// Deep copy of selected registry entries and their momentum buffers.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    params: IndexMap<String, Tensor<T>>,
    buffers: Option<IndexMap<String, Tensor<T>>>,
}

impl<T: Real> Snapshot<T> {
    pub fn capture(registry: &ParamRegistry<T>, state: Option<&SgdState<T>>, groups: &[Group]) -> Self {
        let names = registry.names_in(groups);
        let params = names.iter().map(|n| (n.clone(), registry.get(n).unwrap().clone())).collect();
        let buffers = state.map(|s| {
            names.iter().filter_map(|n| s.buffers.get(n).map(|b| (n.clone(), b.clone()))).collect()
        });
        Snapshot { params, buffers }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Writes the copies back. Fails without modifying anything if a name is
    /// missing from the registry or a shape has changed.
    pub fn restore(&self, registry: &mut ParamRegistry<T>, state: Option<&mut SgdState<T>>) -> Result<()> {
        for (name, value) in &self.params {
            match registry.get(name) {
                None => return Err(contract(format!("snapshot entry `{name}` not in registry"))),
                Some(cur) if cur.shape() != value.shape() => {
                    return Err(contract(format!("snapshot entry `{name}` shape {:?} vs {:?}", value.shape(), cur.shape())))
                }
                Some(_) => {}
            }
        }
        for (name, value) in &self.params {
            *registry.get_mut(name).unwrap() = value.clone();
        }
        if let (Some(bufs), Some(state)) = (&self.buffers, state) {
            for (name, b) in bufs {
                state.buffers.insert(name.clone(), b.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> ParamRegistry<f64> {
        let mut r = ParamRegistry::new();
        r.insert("enc", Tensor::full([2], 1.0), Group::EncoderShared).unwrap();
        r.insert("ss", Tensor::full([3], 1.0), Group::SsHead).unwrap();
        r.insert("main", Tensor::full([1], -2.0), Group::MainHead).unwrap();
        r
    }

    fn grads(value: f64, r: &ParamRegistry<f64>) -> ParamGrads<f64> {
        ParamGrads(r.iter().map(|(n, p)| (n.to_string(), Tensor::full(p.value.shape().to_vec(), value))).collect())
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut r = registry();
        let before = r.clone();
        let mut s = SgdState::new(&r, 0.1, 0.9, 0.0);
        let g = grads(0.0, &r);
        for _ in 0..3 {
            sgd_step(&mut r, &g, &mut s, &Group::ALL).unwrap();
        }
        assert!(r.bitwise_eq(&before));
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        // v1 = 1, p1 = 0.9; v2 = 0.9 + 1 = 1.9, p2 = 0.9 - 0.19 = 0.71
        let mut r = ParamRegistry::new();
        r.insert("p", Tensor::scalar(1.0f64), Group::EncoderShared).unwrap();
        let mut s = SgdState::new(&r, 0.1, 0.9, 0.0);
        let g = ParamGrads([("p".to_string(), Tensor::scalar(1.0))].into_iter().collect());
        sgd_step(&mut r, &g, &mut s, &[Group::EncoderShared]).unwrap();
        sgd_step(&mut r, &g, &mut s, &[Group::EncoderShared]).unwrap();
        assert!((r.get("p").unwrap().item() - 0.71).abs() < 1e-12);
        assert!((s.buffer("p").unwrap().item() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_enters_the_velocity() {
        let mut r = ParamRegistry::new();
        r.insert("p", Tensor::scalar(2.0f64), Group::EncoderShared).unwrap();
        let mut s = SgdState::new(&r, 0.5, 0.0, 0.25);
        sgd_step(&mut r, &ParamGrads::default(), &mut s, &[Group::EncoderShared]).unwrap();
        assert!((r.get("p").unwrap().item() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn unselected_groups_are_untouched() {
        let mut r = registry();
        let before = r.clone();
        let mut s = SgdState::new(&r, 0.1, 0.9, 5e-4);
        let g = grads(0.3, &r);
        sgd_step(&mut r, &g, &mut s, &[Group::SsHead]).unwrap();
        for name in ["enc", "main"] {
            assert!(r.get(name).unwrap().bitwise_eq(before.get(name).unwrap()));
        }
        assert!(!r.get("ss").unwrap().bitwise_eq(before.get("ss").unwrap()));
    }

    #[test]
    fn snapshot_round_trip_includes_buffers() {
        let mut r = registry();
        let mut s = SgdState::new(&r, 0.1, 0.9, 0.0);
        let g = grads(0.5, &r);
        sgd_step(&mut r, &g, &mut s, &Group::ALL).unwrap();
        let (r0, s0) = (r.clone(), s.clone());
        let snap = Snapshot::capture(&r, Some(&s), &Group::ALL);
        let g = grads(-1.0, &r);
        sgd_step(&mut r, &g, &mut s, &Group::ALL).unwrap();
        assert!(!r.bitwise_eq(&r0));
        snap.restore(&mut r, Some(&mut s)).unwrap();
        assert!(r.bitwise_eq(&r0));
        assert!(s.bitwise_eq(&s0));

        // Restoring an untouched registry changes nothing.
        snap.restore(&mut r, Some(&mut s)).unwrap();
        assert!(r.bitwise_eq(&r0));
    }

    #[test]
    fn snapshot_selects_groups() {
        let r = registry();
        let snap = Snapshot::capture(&r, None, &[Group::SsHead]);
        assert!(snap.contains("ss"));
        assert!(!snap.contains("main"));
        assert!(!snap.contains("enc"));
    }

    #[test]
    fn restore_rejects_name_mismatch() {
        let r = registry();
        let snap = Snapshot::capture(&r, None, &[Group::MainHead]);
        let mut other = ParamRegistry::<f64>::new();
        other.insert("enc", Tensor::zeros([2]), Group::EncoderShared).unwrap();
        assert!(snap.restore(&mut other, None).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.01, 0, 100), 0.01);
        assert!((cosine_lr(0.01, 50, 100) - 0.005).abs() < 1e-15);
        assert!(cosine_lr(0.01, 100, 100).abs() < 1e-15);
    }
}
