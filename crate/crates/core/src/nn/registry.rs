use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use ssdn_engine::{Gradients, Real, Tape, Tensor, Var};

use crate::error::{contract, Error, Result};

/// Role of a parameter in the split architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    EncoderShared,
    EncoderSs,
    /// Main-branch filters synthesized by bridges. Never holds trainable leaves.
    EncoderMainDerived,
    SsHead,
    MainHead,
    BridgeData,
    BridgePredictor,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::EncoderShared,
        Group::EncoderSs,
        Group::EncoderMainDerived,
        Group::SsHead,
        Group::MainHead,
        Group::BridgeData,
        Group::BridgePredictor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::EncoderShared => "encoder_shared",
            Group::EncoderSs => "encoder_ss",
            Group::EncoderMainDerived => "encoder_main_derived",
            Group::SsHead => "ss_head",
            Group::MainHead => "main_head",
            Group::BridgeData => "bridge_data",
            Group::BridgePredictor => "bridge_predictor",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| contract(format!("unknown parameter group `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub group: Group,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRegistry<T> {
    entries: IndexMap<String, Param<T>>,
}

impl<T: Real> Default for ParamRegistry<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamRegistry<T> {
    pub fn new() -> Self {
        ParamRegistry { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, group: Group) -> Result<()> {
        let name = name.into();
        if group == Group::EncoderMainDerived {
            return Err(contract(format!("{name}: encoder_main_derived filters are synthesized, not registered")));
        }
        if self.entries.contains_key(&name) {
            return Err(contract(format!("parameter `{name}` registered twice")));
        }
        self.entries.insert(name, Param { value, group });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn group_of(&self, name: &str) -> Option<Group> {
        self.entries.get(name).map(|p| p.group)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn names_in(&self, groups: &[Group]) -> Vec<String> {
        self.iter().filter(|(_, p)| groups.contains(&p.group)).map(|(n, _)| n.to_string()).collect()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn numel_in(&self, group: Group) -> usize {
        self.entries.values().filter(|p| p.group == group).map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamRegistry<U> {
        ParamRegistry {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), Param { value: p.value.cast(), group: p.group }))
                .collect(),
        }
    }

    /// Bitwise equality of every value, name and group.
    pub fn bitwise_eq(&self, other: &ParamRegistry<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb && a.group == b.group && a.value.bitwise_eq(&b.value)
            })
    }

    /// Places every parameter on `tape`. Parameters for which `trainable`
    /// returns true become gradient-requiring leaves.
    pub fn bind(&self, tape: &Tape<T>, trainable: impl Fn(&str, Group) -> bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), tape.leaf(p.value.clone(), trainable(name, p.group))))
            .collect();
        BoundParams { vars }
    }
}

/// Registry entries as leaves of one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| contract(format!("parameter `{name}` is not bound")))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Extracts per-name gradients. Parameters the loss did not reach are absent.
    pub fn grads<T: Real>(&self, grads: &Gradients<T>) -> ParamGrads<T> {
        ParamGrads(
            self.vars.iter().filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone()))).collect(),
        )
    }
}

impl FromIterator<(String, Var)> for BoundParams {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        BoundParams { vars: iter.into_iter().collect() }
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct ParamGrads<T>(pub IndexMap<String, Tensor<T>>);

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
