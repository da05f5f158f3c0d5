use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::{path_has_prefix, ParamRole, ParamSlot};

/// How one parameter of a target agent is initialized from a source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransferMode {
    /// Fresh draw from the target stream.
    Random,
    /// `fresh + ω·source`.
    Fractional(f64),
    /// Exact copy of the source.
    Full,
}

impl TransferMode {
    pub fn fractional(omega: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(Error::config(format!("fraction {omega} outside [0, 1]")));
        }
        Ok(TransferMode::Fractional(omega))
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferMode::Random => f.write_str("random"),
            TransferMode::Full => f.write_str("full"),
            TransferMode::Fractional(w) => write!(f, "fractional:{w}"),
        }
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(TransferMode::Random),
            "full" => Ok(TransferMode::Full),
            other => {
                let w = other
                    .strip_prefix("fractional:")
                    .and_then(|w| w.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::config(format!("unknown transfer mode {other:?}")))?;
                TransferMode::fractional(w)
            }
        }
    }
}

/// Path-prefix override, optionally limited to one role.
#[derive(Clone, Debug, PartialEq)]
struct Override {
    role: Option<ParamRole>,
    prefix: String,
    mode: TransferMode,
}

/// Transfer mode per parameter: role defaults plus path-prefix overrides.
///
/// The override with the longest matching prefix wins; on equal prefixes a
/// role-qualified override beats an unqualified one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransferPlan {
    roles: BTreeMap<ParamRole, TransferMode>,
    overrides: Vec<Override>,
}

impl TransferPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every parameter gets `mode`.
    pub fn uniform(mode: TransferMode) -> Self {
        let mut plan = TransferPlan::new();
        for role in ParamRole::ALL {
            plan.set_role(role, mode);
        }
        plan
    }

    pub fn set_role(&mut self, role: ParamRole, mode: TransferMode) -> &mut Self {
        self.roles.insert(role, mode);
        self
    }

    pub fn set_override(
        &mut self,
        role: Option<ParamRole>,
        prefix: &str,
        mode: TransferMode,
    ) -> &mut Self {
        self.overrides
            .retain(|o| !(o.role == role && o.prefix == prefix));
        self.overrides.push(Override {
            role,
            prefix: prefix.to_string(),
            mode,
        });
        self.overrides
            .sort_by(|a, b| (a.role, &a.prefix).cmp(&(b.role, &b.prefix)));
        self
    }

    pub fn resolve(&self, path: &str, role: ParamRole) -> Result<TransferMode> {
        let best = self
            .overrides
            .iter()
            .filter(|o| o.role.is_none_or(|r| r == role) && path_has_prefix(path, &o.prefix))
            .max_by_key(|o| (o.prefix.len(), o.role.is_some()));
        match best {
            Some(o) => Ok(o.mode),
            None => self.roles.get(&role).copied().ok_or_else(|| {
                Error::config(format!("no transfer mode for {path} ({})", role.name()))
            }),
        }
    }

    /// Mode of every slot; fails on the first unresolved path.
    pub fn resolve_all(&self, layout: &[ParamSlot]) -> Result<BTreeMap<String, TransferMode>> {
        layout
            .iter()
            .map(|s| Ok((s.path.clone(), self.resolve(&s.path, s.role)?)))
            .collect()
    }

    /// Parses `key = mode` lines. A key is a role name, a path prefix, or
    /// `role.prefix`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = TransferPlan::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("plan line {}: expected key = mode", n + 1))
            })?;
            let (key, mode) = (key.trim(), value.parse::<TransferMode>()?);
            if let Some(role) = ParamRole::from_name(key) {
                plan.set_role(role, mode);
            } else if let Some((role, prefix)) = key.split_once('.') {
                let role = ParamRole::from_name(role).ok_or_else(|| {
                    Error::config(format!("plan line {}: unknown role {role:?}", n + 1))
                })?;
                plan.set_override(Some(role), prefix, mode);
            } else {
                plan.set_override(None, key, mode);
            }
        }
        Ok(plan)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (role, mode) in &self.roles {
            out.push_str(&format!("{} = {mode}\n", role.name()));
        }
        for o in &self.overrides {
            match o.role {
                Some(r) => out.push_str(&format!("{}.{} = {}\n", r.name(), o.prefix, o.mode)),
                None => out.push_str(&format!("{} = {}\n", o.prefix, o.mode)),
            }
        }
        out
    }
}

/// Full feature extraction, random action inputs, fractional output heads
/// except the actor's, which is random.
pub fn default_plan(omega: f64) -> Result<TransferPlan> {
    let mut plan = TransferPlan::new();
    plan.set_role(ParamRole::FeatureExtraction, TransferMode::Full)
        .set_role(ParamRole::ActionInput, TransferMode::Random)
        .set_role(ParamRole::OutputHead, TransferMode::fractional(omega)?)
        .set_override(Some(ParamRole::OutputHead), "actor", TransferMode::Random);
    Ok(plan)
}

/// [`default_plan`] with the fractional heads copied outright when
/// `full_at_one` is set and ω = 1.
pub fn ftl_plan(omega: f64, full_at_one: bool) -> Result<TransferPlan> {
    let mut plan = default_plan(omega)?;
    if full_at_one && omega == 1.0 {
        plan.set_role(ParamRole::OutputHead, TransferMode::Full)
            .set_override(Some(ParamRole::OutputHead), "actor", TransferMode::Random);
    }
    Ok(plan)
}
