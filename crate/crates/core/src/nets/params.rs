use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

/// Transfer role of a parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    FeatureExtraction,
    OutputHead,
    ActionInput,
}

impl ParamRole {
    pub const ALL: [ParamRole; 3] = [
        ParamRole::FeatureExtraction,
        ParamRole::OutputHead,
        ParamRole::ActionInput,
    ];

    pub fn tag(self) -> u8 {
        match self {
            ParamRole::FeatureExtraction => 0,
            ParamRole::OutputHead => 1,
            ParamRole::ActionInput => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamRole::FeatureExtraction => "feature_extraction",
            ParamRole::OutputHead => "output_head",
            ParamRole::ActionInput => "action_input",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }
}

impl fmt::Display for ParamRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub tensor: Arc<Tensor>,
    pub role: ParamRole,
}

/// Path-keyed parameters, e.g. `reward/fc3/weight`, iterated in
/// lexicographic path order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

/// True when `path` lies under `prefix` on a `/` boundary.
pub fn path_has_prefix(path: &str, prefix: &str) -> bool {
    let prefix = prefix.trim_end_matches('/');
    prefix.is_empty()
        || path == prefix
        || (path.starts_with(prefix) && path.as_bytes().get(prefix.len()) == Some(&b'/'))
}

impl NamedParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor, role: ParamRole) {
        self.entries.insert(
            path.into(),
            ParamEntry {
                tensor: Arc::new(tensor),
                role,
            },
        );
    }

    pub fn insert_entry(&mut self, path: impl Into<String>, entry: ParamEntry) {
        self.entries.insert(path.into(), entry);
    }

    pub fn get(&self, path: &str) -> Option<&ParamEntry> {
        self.entries.get(path)
    }

    pub fn tensor(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path).map(|e| e.tensor.as_ref())
    }

    /// Copy-on-write access to a parameter's values.
    pub fn tensor_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries
            .get_mut(path)
            .map(|e| Arc::make_mut(&mut e.tensor))
    }

    pub fn role(&self, path: &str) -> Option<ParamRole> {
        self.entries.get(path).map(|e| e.role)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Entries under `prefix`, keeping their full paths.
    pub fn subset(&self, prefix: &str) -> NamedParamSet {
        NamedParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| path_has_prefix(k, prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Entries under `prefix`, with the prefix moved to `new_prefix`.
    pub fn rebase(&self, prefix: &str, new_prefix: &str) -> NamedParamSet {
        let prefix = prefix.trim_end_matches('/');
        NamedParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| path_has_prefix(k, prefix))
                .map(|(k, v)| {
                    let rest = &k[prefix.len()..];
                    (
                        format!("{}{}", new_prefix.trim_end_matches('/'), rest),
                        v.clone(),
                    )
                })
                .collect(),
        }
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|k, _| !path_has_prefix(k, prefix));
    }

    pub fn extend(&mut self, other: NamedParamSet) {
        self.entries.extend(other.entries);
    }

    /// Paths grouped by role.
    pub fn partition(&self) -> BTreeMap<ParamRole, BTreeSet<String>> {
        let mut out: BTreeMap<ParamRole, BTreeSet<String>> = BTreeMap::new();
        for (k, v) in &self.entries {
            out.entry(v.role).or_default().insert(k.clone());
        }
        out
    }

    /// Bitwise equality of every entry under `prefix` (roles included).
    pub fn bit_eq_under(&self, other: &NamedParamSet, prefix: &str) -> bool {
        let a: Vec<_> = self
            .iter()
            .filter(|(k, _)| path_has_prefix(k, prefix))
            .collect();
        let b: Vec<_> = other
            .iter()
            .filter(|(k, _)| path_has_prefix(k, prefix))
            .collect();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((ka, ea), (kb, eb))| {
                ka == kb && ea.role == eb.role && ea.tensor.bit_eq(&eb.tensor)
            })
    }
}

/// Parameters of a [`NamedParamSet`] placed on a tape.
///
/// Trainable entries are tape params and receive gradients; the rest are
/// constants, so no gradient is ever requested for them.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, (Var, bool)>,
}

impl Bound {
    pub fn new() -> Self {
        Self::default()
    }

    /// Places every entry under `prefix` on the tape.
    pub fn add(&mut self, tape: &mut Tape, params: &NamedParamSet, prefix: &str, trainable: bool) {
        for (path, entry) in params.iter().filter(|(k, _)| path_has_prefix(k, prefix)) {
            let var = if trainable {
                tape.param(Arc::clone(&entry.tensor))
            } else {
                tape.constant(Arc::clone(&entry.tensor))
            };
            self.vars.insert(path.to_string(), (var, trainable));
        }
    }

    pub fn with(tape: &mut Tape, params: &NamedParamSet, prefix: &str, trainable: bool) -> Self {
        let mut b = Bound::new();
        b.add(tape, params, prefix, trainable);
        b
    }

    pub fn var(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .map(|(v, _)| *v)
            .ok_or_else(|| Error::Key(path.to_string()))
    }

    pub fn has(&self, path: &str) -> bool {
        self.vars.contains_key(path)
    }

    pub fn trainable_paths(&self) -> impl Iterator<Item = &str> {
        self.vars
            .iter()
            .filter(|(_, (_, t))| *t)
            .map(|(k, _)| k.as_str())
    }

    /// Gradient of every trainable entry under `prefix`; zeros where the loss
    /// does not depend on it.
    pub fn grads(&self, tape: &Tape, grads: &Gradients, prefix: &str) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(k, (_, t))| *t && path_has_prefix(k, prefix))
            .map(|(k, (v, _))| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(*v)));
                (k.clone(), g)
            })
            .collect()
    }
}
