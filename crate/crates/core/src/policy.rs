//! Redaction policies and the three-level rule matcher.
//!
//! Rules are scoped to a datatype, a single data item, or a requester id.
//! Matching concatenates the ops of every applicable rule in that order and
//! appends the anonymous default when no verified requester is present.
//! There is no allow action: each scope can only remove more.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid policy: {0}")]
    Validation(String),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Json,
    Csv,
    Txt,
    Image,
    Unknown,
}

impl Datatype {
    pub const ALL: [Datatype; 5] = [
        Datatype::Json,
        Datatype::Csv,
        Datatype::Txt,
        Datatype::Image,
        Datatype::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Datatype::Json => "json",
            Datatype::Csv => "csv",
            Datatype::Txt => "txt",
            Datatype::Image => "image",
            Datatype::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Datatype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Datatype {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self> {
        Datatype::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| PolicyError::Validation(format!("unsupported datatype {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScopeKind {
    Datatype,
    Item,
    Requester,
}

impl FromStr for ScopeKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "datatype" => Ok(ScopeKind::Datatype),
            "item" => Ok(ScopeKind::Item),
            "requester" => Ok(ScopeKind::Requester),
            _ => Err(PolicyError::Validation(format!("unknown scope kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scope {
    pub kind: ScopeKind,
    pub key: String,
}

impl Scope {
    pub fn new(kind: ScopeKind, key: impl Into<String>) -> Self {
        Self { kind, key: key.into() }
    }

    fn validate(&self) -> Result<()> {
        if self.key.is_empty() {
            return Err(PolicyError::Validation("scope key is empty".into()));
        }
        if self.kind == ScopeKind::Datatype {
            self.key.parse::<Datatype>()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DropField,
    MaskField,
    KeepPartial,
    DropColumn,
    MaskPattern,
    PixelateRegions,
    DropAll,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::DropField => "drop_field",
            Action::MaskField => "mask_field",
            Action::KeepPartial => "keep_partial",
            Action::DropColumn => "drop_column",
            Action::MaskPattern => "mask_pattern",
            Action::PixelateRegions => "pixelate_regions",
            Action::DropAll => "drop_all",
        }
    }

    /// Whether a redactor for `datatype` can execute this action.
    pub fn applies_to(self, datatype: Datatype) -> bool {
        use Action::*;
        match datatype {
            Datatype::Json => matches!(self, DropField | MaskField | KeepPartial | MaskPattern | DropAll),
            Datatype::Csv => matches!(self, DropColumn | MaskField | KeepPartial | MaskPattern | DropAll),
            Datatype::Txt => matches!(self, MaskPattern | DropAll),
            Datatype::Image => matches!(self, PixelateRegions | DropAll),
            Datatype::Unknown => self == DropAll,
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        match self {
            Action::KeepPartial => &["rule"],
            Action::PixelateRegions => &["block"],
            _ => &[],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| PolicyError::Validation(format!("unknown action {s:?}")))
    }
}

/// The only partial-keep rule: keep the first whitespace-delimited token.
pub const PARTIAL_FIRST_TOKEN: &str = "first_token";
pub const DEFAULT_BLOCK_SIZE: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RedactionOp {
    pub action: Action,
    #[serde(default)]
    pub target: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl RedactionOp {
    pub fn new(action: Action, target: impl Into<String>) -> Self {
        Self {
            action,
            target: target.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    pub fn drop_all() -> Self {
        Self::new(Action::DropAll, "")
    }

    /// Pixel block edge for `pixelate_regions`.
    pub fn block_size(&self) -> u32 {
        self.params
            .get("block")
            .and_then(|b| b.parse().ok())
            .unwrap_or(DEFAULT_BLOCK_SIZE)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(PolicyError::Validation(format!("{self}: {msg}")));
        match self.action {
            Action::DropAll => {
                if !(self.target.is_empty() || self.target == "*") {
                    return err("drop_all takes no target".into());
                }
            }
            _ if self.target.is_empty() => return err("target is empty".into()),
            _ => {}
        }
        let allowed = self.action.allowed_params();
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return err(format!("parameter {k:?} not accepted"));
        }
        if let Some(rule) = self.params.get("rule") {
            if rule != PARTIAL_FIRST_TOKEN {
                return err(format!("unknown partial rule {rule:?}"));
            }
        }
        if let Some(block) = self.params.get("block") {
            match block.parse::<u32>() {
                Ok(b) if b > 0 => {}
                _ => return err(format!("block must be a positive integer, got {block:?}")),
            }
        }
        Ok(())
    }
}

impl fmt::Display for RedactionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.action)?;
        if !self.target.is_empty() {
            write!(f, " {}", self.target)?;
        }
        for (k, v) in &self.params {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionRule {
    pub scope: Scope,
    pub ops: Vec<RedactionOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySet {
    #[serde(rename = "default-anonymous", default = "default_anonymous")]
    pub default_anonymous: Vec<RedactionOp>,
    #[serde(default)]
    pub rules: Vec<RedactionRule>,
}

fn default_anonymous() -> Vec<RedactionOp> {
    vec![RedactionOp::drop_all()]
}

impl Default for PolicySet {
    /// No rules; anonymous requesters get nothing.
    fn default() -> Self {
        Self {
            default_anonymous: default_anonymous(),
            rules: Vec::new(),
        }
    }
}

impl PolicySet {
    pub fn empty() -> Self {
        Self {
            default_anonymous: Vec::new(),
            rules: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rule in &self.rules {
            rule.scope.validate()?;
            if !seen.insert((rule.scope.kind, rule.scope.key.as_str())) {
                return Err(PolicyError::Validation(format!(
                    "duplicate rule for scope {:?}/{:?}",
                    rule.scope.kind, rule.scope.key
                )));
            }
            if rule.ops.is_empty() {
                return Err(PolicyError::Validation(format!(
                    "rule for {:?}/{:?} has no ops",
                    rule.scope.kind, rule.scope.key
                )));
            }
            rule.ops.iter().try_for_each(RedactionOp::validate)?;
        }
        self.default_anonymous.iter().try_for_each(RedactionOp::validate)
    }

    pub fn rule(&self, kind: ScopeKind, key: &str) -> Option<&RedactionRule> {
        self.rules.iter().find(|r| r.scope.kind == kind && r.scope.key == key)
    }

    /// Appends `op` to the rule for `scope`, creating the rule if needed.
    pub fn add_op(&mut self, scope: Scope, op: RedactionOp) -> Result<()> {
        scope.validate()?;
        op.validate()?;
        match self.rules.iter_mut().find(|r| r.scope == scope) {
            Some(rule) => {
                if !rule.ops.contains(&op) {
                    rule.ops.push(op);
                }
            }
            None => self.rules.push(RedactionRule { scope, ops: vec![op] }),
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("policy serializes");
        out.push(b'\n');
        out
    }
}

pub fn load_policy_set(source: &[u8]) -> Result<PolicySet> {
    // Unknown actions surface as serde data errors; report them as
    // validation failures rather than syntax errors.
    let ps: PolicySet = serde_json::from_slice(source).map_err(|e| {
        if e.is_data() {
            PolicyError::Validation(e.to_string())
        } else {
            PolicyError::Parse(e)
        }
    })?;
    ps.validate()?;
    Ok(ps)
}

pub fn match_rules(
    ps: &PolicySet,
    item_name: &str,
    datatype: Datatype,
    requester_id: Option<&str>,
) -> Vec<RedactionOp> {
    let mut keys = vec![(ScopeKind::Datatype, datatype.as_str()), (ScopeKind::Item, item_name)];
    if let Some(id) = requester_id {
        keys.push((ScopeKind::Requester, id));
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let matched = keys
        .into_iter()
        .filter_map(|(kind, key)| ps.rule(kind, key))
        .flat_map(|r| r.ops.iter());
    let anonymous = requester_id
        .is_none()
        .then_some(ps.default_anonymous.iter())
        .into_iter()
        .flatten();
    for op in matched.chain(anonymous) {
        if seen.insert(op) {
            out.push(op.clone());
        }
    }
    out
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
const JPEG_MAGIC: &[u8] = &[0xff, 0xd8, 0xff];

pub fn infer_datatype(item_name: &str, content: &[u8]) -> Datatype {
    let ext = item_name
        .rsplit_once('.')
        .map(|(_, e)| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "json" => return Datatype::Json,
        "csv" => return Datatype::Csv,
        "txt" => return Datatype::Txt,
        "png" | "jpg" | "jpeg" => return Datatype::Image,
        _ => {}
    }
    if content.starts_with(PNG_MAGIC) || content.starts_with(JPEG_MAGIC) {
        Datatype::Image
    } else if serde_json::from_slice::<serde_json::Value>(content).is_ok() {
        Datatype::Json
    } else {
        Datatype::Unknown
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jane_policy() -> PolicySet {
        let mut ps = PolicySet::empty();
        ps.add_op(
            Scope::new(ScopeKind::Datatype, "json"),
            RedactionOp::new(Action::DropField, "ssn"),
        )
        .unwrap();
        ps.add_op(
            Scope::new(ScopeKind::Item, "r.json"),
            RedactionOp::new(Action::MaskField, "name"),
        )
        .unwrap();
        ps.add_op(
            Scope::new(ScopeKind::Requester, "jane"),
            RedactionOp::new(Action::KeepPartial, "name").with_param("rule", "first_token"),
        )
        .unwrap();
        ps
    }

    #[test]
    fn matches_in_granularity_order() {
        let ops = match_rules(&jane_policy(), "r.json", Datatype::Json, Some("jane"));
        assert_eq!(
            ops,
            vec![
                RedactionOp::new(Action::DropField, "ssn"),
                RedactionOp::new(Action::MaskField, "name"),
                RedactionOp::new(Action::KeepPartial, "name").with_param("rule", "first_token"),
            ]
        );
    }

    #[test]
    fn empty_and_anonymous_defaults() {
        assert!(match_rules(&PolicySet::empty(), "x", Datatype::Json, Some("jane")).is_empty());
        assert_eq!(
            match_rules(&PolicySet::default(), "x", Datatype::Json, None),
            vec![RedactionOp::drop_all()]
        );
    }

    #[test]
    fn identical_ops_are_deduplicated() {
        let mut ps = PolicySet::empty();
        let op = RedactionOp::new(Action::DropField, "ssn");
        ps.add_op(Scope::new(ScopeKind::Datatype, "json"), op.clone()).unwrap();
        ps.add_op(Scope::new(ScopeKind::Requester, "jane"), op.clone()).unwrap();
        assert_eq!(match_rules(&ps, "a", Datatype::Json, Some("jane")), vec![op]);
    }

    #[test]
    fn load_well_formed() {
        let src = br#"{
            "default-anonymous": [{"action": "drop_all"}],
            "rules": [
                {"scope": {"kind": "datatype", "key": "json"},
                 "ops": [{"action": "drop_field", "target": "ssn"}]},
                {"scope": {"kind": "requester", "key": "jane"},
                 "ops": [{"action": "keep_partial", "target": "name", "params": {"rule": "first_token"}}]}
            ]
        }"#;
        let ps = load_policy_set(src).unwrap();
        assert_eq!(ps.rules.len(), 2);
        assert_eq!(load_policy_set(&ps.to_json()).unwrap(), ps);
    }

    #[test]
    fn missing_default_is_drop_all() {
        let ps = load_policy_set(br#"{"rules": []}"#).unwrap();
        assert_eq!(ps.default_anonymous, vec![RedactionOp::drop_all()]);
    }

    #[test]
    fn load_rejections() {
        let dup = br#"{"rules": [
            {"scope": {"kind": "datatype", "key": "json"}, "ops": [{"action": "drop_field", "target": "a"}]},
            {"scope": {"kind": "datatype", "key": "json"}, "ops": [{"action": "drop_field", "target": "b"}]}
        ]}"#;
        assert!(matches!(load_policy_set(dup), Err(PolicyError::Validation(_))));

        let explode = br#"{"rules": [
            {"scope": {"kind": "item", "key": "a"}, "ops": [{"action": "explode", "target": "a"}]}
        ]}"#;
        assert!(matches!(load_policy_set(explode), Err(PolicyError::Validation(_))));

        assert!(matches!(load_policy_set(b"{"), Err(PolicyError::Parse(_))));

        let bad_dt = br#"{"rules": [
            {"scope": {"kind": "datatype", "key": "mp3"}, "ops": [{"action": "drop_all"}]}
        ]}"#;
        assert!(load_policy_set(bad_dt).is_err());

        let empty_ops = br#"{"rules": [{"scope": {"kind": "item", "key": "a"}, "ops": []}]}"#;
        assert!(load_policy_set(empty_ops).is_err());
    }

    #[test]
    fn op_param_rules() {
        assert!(RedactionOp::new(Action::KeepPartial, "n").validate().is_ok());
        assert!(RedactionOp::new(Action::KeepPartial, "n")
            .with_param("rule", "last_token")
            .validate()
            .is_err());
        assert!(RedactionOp::new(Action::DropField, "a")
            .with_param("block", "3")
            .validate()
            .is_err());
        assert!(RedactionOp::new(Action::PixelateRegions, "faces")
            .with_param("block", "0")
            .validate()
            .is_err());
        assert!(RedactionOp::new(Action::DropField, "").validate().is_err());
        assert!(RedactionOp::new(Action::DropAll, "ssn").validate().is_err());
        assert_eq!(RedactionOp::new(Action::PixelateRegions, "f").block_size(), 16);
    }

    #[test]
    fn add_op_merges_into_scope() {
        let mut ps = PolicySet::empty();
        let scope = Scope::new(ScopeKind::Datatype, "json");
        ps.add_op(scope.clone(), RedactionOp::new(Action::DropField, "a"))
            .unwrap();
        ps.add_op(scope.clone(), RedactionOp::new(Action::DropField, "b"))
            .unwrap();
        assert_eq!(ps.rules.len(), 1);
        assert_eq!(ps.rules[0].ops.len(), 2);
    }

    #[test]
    fn datatype_inference() {
        assert_eq!(infer_datatype("a.json", b"{}"), Datatype::Json);
        assert_eq!(infer_datatype("A.CSV", b"x"), Datatype::Csv);
        assert_eq!(infer_datatype("a.bin", b"\x89PNG\r\n\x1a\n...."), Datatype::Image);
        assert_eq!(infer_datatype("a.bin", &[0xff, 0xd8, 0xff, 0xe0]), Datatype::Image);
        assert_eq!(infer_datatype("noext", b"[1, 2]"), Datatype::Json);
        assert_eq!(infer_datatype("a.xyz", b"\x00\x01"), Datatype::Unknown);
    }

    // Reference matcher: filter every rule by scope, concatenate in
    // granularity order, then drop repeats.
    fn oracle(ps: &PolicySet, item: &str, dt: Datatype, who: Option<&str>) -> Vec<RedactionOp> {
        let mut all = Vec::new();
        for r in &ps.rules {
            if r.scope.kind == ScopeKind::Datatype && r.scope.key == dt.as_str() {
                all.extend(r.ops.clone());
            }
        }
        for r in &ps.rules {
            if r.scope.kind == ScopeKind::Item && r.scope.key == item {
                all.extend(r.ops.clone());
            }
        }
        if let Some(who) = who {
            for r in &ps.rules {
                if r.scope.kind == ScopeKind::Requester && r.scope.key == who {
                    all.extend(r.ops.clone());
                }
            }
        } else {
            all.extend(ps.default_anonymous.clone());
        }
        let mut out: Vec<RedactionOp> = Vec::new();
        for op in all {
            if !out.contains(&op) {
                out.push(op);
            }
        }
        out
    }

    fn arb_op() -> impl Strategy<Value = RedactionOp> {
        prop_oneof![
            "[a-c]".prop_map(|t| RedactionOp::new(Action::DropField, t)),
            "[a-c]".prop_map(|t| RedactionOp::new(Action::MaskField, t)),
            "[a-c]".prop_map(|t| RedactionOp::new(Action::DropColumn, t)),
            Just(RedactionOp::new(Action::MaskPattern, "ssn")),
            Just(RedactionOp::drop_all()),
        ]
    }

    fn arb_policy() -> impl Strategy<Value = PolicySet> {
        let scope = prop_oneof![
            proptest::sample::select(vec!["json", "csv", "txt"]).prop_map(|k| Scope::new(ScopeKind::Datatype, k)),
            "[xy]".prop_map(|k| Scope::new(ScopeKind::Item, k)),
            "[uv]".prop_map(|k| Scope::new(ScopeKind::Requester, k)),
        ];
        (
            proptest::collection::vec((scope, proptest::collection::vec(arb_op(), 1..4)), 0..8),
            proptest::collection::vec(arb_op(), 0..3),
        )
            .prop_map(|(rules, default_anonymous)| {
                let mut ps = PolicySet {
                    default_anonymous,
                    rules: Vec::new(),
                };
                for (scope, ops) in rules {
                    if ps.rule(scope.kind, &scope.key).is_none() {
                        ps.rules.push(RedactionRule { scope, ops });
                    }
                }
                ps
            })
    }

    fn arb_query() -> impl Strategy<Value = (String, Datatype, Option<String>)> {
        (
            "[xyz]",
            proptest::sample::select(vec![Datatype::Json, Datatype::Csv, Datatype::Txt]),
            proptest::option::of("[uvw]"),
        )
    }

    proptest! {
        #[test]
        fn matcher_equals_oracle(ps in arb_policy(), (item, dt, who) in arb_query()) {
            prop_assert_eq!(
                match_rules(&ps, &item, dt, who.as_deref()),
                oracle(&ps, &item, dt, who.as_deref())
            );
        }

        #[test]
        fn removing_a_rule_never_adds_ops(
            ps in arb_policy(),
            (item, dt, who) in arb_query(),
            idx in any::<proptest::sample::Index>(),
        ) {
            prop_assume!(!ps.rules.is_empty());
            let before = match_rules(&ps, &item, dt, who.as_deref());
            let mut smaller = ps.clone();
            smaller.rules.remove(idx.index(ps.rules.len()));
            let after = match_rules(&smaller, &item, dt, who.as_deref());
            prop_assert!(after.iter().all(|op| before.contains(op)));
        }
    }
}
