use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// The four parameter families a model is partitioned into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Backbone,
    SslHead,
    Adapter,
    AsrHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [ParamGroup::Backbone, ParamGroup::SslHead, ParamGroup::Adapter, ParamGroup::AsrHead];

    /// On-disk tag.
    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Backbone => 0,
            ParamGroup::SslHead => 1,
            ParamGroup::Adapter => 2,
            ParamGroup::AsrHead => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::SslHead => "ssl_head",
            ParamGroup::Adapter => "adapter",
            ParamGroup::AsrHead => "asr_head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "backbone" => Ok(ParamGroup::Backbone),
            "ssl_head" | "sslhead" | "ssl" => Ok(ParamGroup::SslHead),
            "adapter" | "adapters" => Ok(ParamGroup::Adapter),
            "asr_head" | "asrhead" | "asr" => Ok(ParamGroup::AsrHead),
            other => Err(Error::Config(format!("unknown parameter group {other:?} (expected backbone, ssl_head, adapter or asr_head)"))),
        }
    }
}

/// Small set of groups, used for trainable masks and count filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const EMPTY: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(0b1111);

    pub fn of(groups: &[ParamGroup]) -> Self {
        groups.iter().fold(Self::EMPTY, |s, g| s.with(*g))
    }

    pub fn with(self, g: ParamGroup) -> Self {
        GroupSet(self.0 | (1 << g.tag()))
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & (1 << g.tag()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamGroup> {
        ParamGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Self {
        GroupSet(bits & 0b1111)
    }

    /// Parses a comma-separated list such as `backbone,adapter`.
    pub fn parse_list(s: &str) -> Result<Self> {
        s.split(',').map(str::trim).filter(|p| !p.is_empty()).try_fold(Self::EMPTY, |set, p| Ok(set.with(p.parse()?)))
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(ParamGroup::name).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<F = f32> {
    pub tensor: Tensor<F>,
    pub group: ParamGroup,
    pub trainable: bool,
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F = f32> {
    entries: BTreeMap<String, ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// Registers a trainable parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>, group: ParamGroup) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::State(format!("parameter {name} already registered")));
        }
        let tensor = tensor.with_grad();
        self.entries.insert(name, ParamEntry { tensor, group, trainable: true });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<F>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<F>> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries.get(name).map(|e| &e.tensor).ok_or_else(|| Error::MissingGroup { names: vec![name.to_string()] })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ParamEntry<F>> {
        self.entries.remove(name)
    }

    /// Drops every parameter of `group`, returning how many were removed.
    pub fn remove_group(&mut self, group: ParamGroup) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| e.group != group);
        before - self.entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<F>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn names_in(&self, group: ParamGroup) -> Vec<String> {
        self.entries.iter().filter(|(_, e)| e.group == group).map(|(k, _)| k.clone()).collect()
    }

    pub fn has_group(&self, group: ParamGroup) -> bool {
        self.entries.values().any(|e| e.group == group)
    }

    /// Sets `trainable` on every entry: true exactly for members of `groups`.
    pub fn set_trainable(&mut self, groups: GroupSet) {
        for e in self.entries.values_mut() {
            e.trainable = groups.contains(e.group);
        }
    }

    /// Scalar count over the selected groups.
    pub fn count(&self, groups: GroupSet) -> usize {
        self.entries.values().filter(|e| groups.contains(e.group)).map(|e| e.tensor.numel()).sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.entries.values().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.zero_grad();
        }
    }

    /// Element-type conversion preserving groups and trainable flags.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), ParamEntry { tensor: e.tensor.cast::<G>().with_grad(), group: e.group, trainable: e.trainable }))
                .collect(),
        }
    }
}

/// Parses a group name the way the CLI spells it, for `count_params` filters.
pub fn parse_group_filter(names: &[&str]) -> Result<GroupSet> {
    names.iter().try_fold(GroupSet::EMPTY, |s, n| Ok(s.with(n.parse()?)))
}
