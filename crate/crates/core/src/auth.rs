//! Minimal user profiles: per-session table grants built from a declarative
//! policy and enforced on every table read.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, GenerationParams, LlmGateway, PromptRole, PromptText};
use crate::store::{sql, TableGuard};

pub const NOT_IN_MUP: &str = "not in MUP";

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("the table catalog is empty")]
    EmptyCatalog,
    #[error("malformed document at line {line}, column {column}: {message}")]
    MalformedDocument {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("grant references unknown table `{0}`")]
    UnknownTable(String),
    #[error("constraint on `{0}` has no matching grant")]
    ConstraintWithoutGrant(String),
    #[error("invalid row constraint on `{table}`: {detail}")]
    InvalidConstraint { table: String, detail: String },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("cannot read policy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("auth prompt output rejected: {0}")]
    PromptRejected(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub roles: BTreeSet<String>,
    #[serde(default)]
    pub explicit_grants: BTreeSet<String>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            region: None,
            roles: BTreeSet::new(),
            explicit_grants: BTreeSet::new(),
        }
    }
}

/// Table grants and optional row predicates for one session.
///
/// Fields are declared in alphabetical order and every collection is
/// ordered, so the JSON rendering is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimalUserProfile {
    pub constraints: BTreeMap<String, String>,
    pub granted_tables: BTreeSet<String>,
    pub issued_at: u64,
    pub user_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum AccessDecision {
    Permit {
        #[serde(skip_serializing_if = "Option::is_none")]
        constraint: Option<String>,
    },
    Deny {
        reason: String,
    },
}

impl AccessDecision {
    pub fn is_permit(&self) -> bool {
        matches!(self, AccessDecision::Permit { .. })
    }
}

impl MinimalUserProfile {
    pub fn empty(user_id: impl Into<String>, issued_at: u64) -> Self {
        Self {
            constraints: BTreeMap::new(),
            granted_tables: BTreeSet::new(),
            issued_at,
            user_id: user_id.into(),
        }
    }

    /// Pure permit/deny decision for one table.
    pub fn enforce(&self, table: &str) -> AccessDecision {
        let key = table.to_lowercase();
        if self.granted_tables.contains(&key) {
            AccessDecision::Permit {
                constraint: self.constraints.get(&key).cloned(),
            }
        } else {
            AccessDecision::Deny {
                reason: NOT_IN_MUP.to_string(),
            }
        }
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn parse(text: &str) -> Result<Self, AuthError> {
        serde_json::from_str(text).map_err(|e| AuthError::MalformedDocument {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Checks grants against the catalog and constraint predicates for
    /// syntax.
    pub fn validate(&self, catalog_tables: &BTreeSet<String>) -> Result<(), AuthError> {
        for t in &self.granted_tables {
            if !catalog_tables.contains(t) {
                return Err(AuthError::UnknownTable(t.clone()));
            }
        }
        for (t, pred) in &self.constraints {
            if !self.granted_tables.contains(t) {
                return Err(AuthError::ConstraintWithoutGrant(t.clone()));
            }
            check_predicate(t, pred)?;
        }
        Ok(())
    }
}

impl TableGuard for MinimalUserProfile {
    fn check(&self, table: &str) -> Result<(), String> {
        match self.enforce(table) {
            AccessDecision::Permit { .. } => Ok(()),
            AccessDecision::Deny { reason } => Err(reason),
        }
    }
}

fn check_predicate(table: &str, pred: &str) -> Result<(), AuthError> {
    let mut probe = sql::parse_statements(&format!("SELECT 1 FROM {}", sql::quote_ident(table))).map_err(|detail| {
        AuthError::InvalidConstraint {
            table: table.to_string(),
            detail,
        }
    })?;
    sql::apply_row_constraints(&mut probe, &BTreeMap::from([(table.to_string(), pred.to_string())])).map_err(|detail| {
        AuthError::InvalidConstraint {
            table: table.to_string(),
            detail,
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyFile {
    #[serde(default)]
    user: Vec<UserProfile>,
    #[serde(default)]
    region_rule: Vec<RuleSpec>,
    #[serde(default)]
    role_rule: Vec<RuleSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    #[serde(default)]
    region: Option<String>,
    #[serde(default)]
    role: Option<String>,
    tables: Vec<String>,
    #[serde(default)]
    constraint: Option<String>,
}

#[derive(Debug, Clone)]
struct Rule {
    subject: String,
    patterns: Vec<glob::Pattern>,
    constraint: Option<String>,
}

impl Rule {
    fn matches(&self, table: &str) -> bool {
        self.patterns.iter().any(|p| p.matches(table))
    }
}

/// Where a grant came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum GrantSource {
    Explicit,
    Region(String),
    Role(String),
}

impl fmt::Display for GrantSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrantSource::Explicit => f.write_str("explicit grant"),
            GrantSource::Region(r) => write!(f, "region rule `{r}`"),
            GrantSource::Role(r) => write!(f, "role rule `{r}`"),
        }
    }
}

/// User directory plus region and role rules.
///
/// Policy files are TOML:
///
/// ```toml
/// [[user]]
/// user_id = "ana"
/// region = "North America"
/// roles = ["renewable-energy-analyst"]
///
/// [[region_rule]]
/// region = "North America"
/// tables = ["power_na", "emissions_*"]
/// constraint = "continent = 'North America'"
///
/// [[role_rule]]
/// role = "renewable-energy-analyst"
/// tables = ["renewable_*"]
/// ```
///
/// A table reachable through several paths is granted once. Any path
/// without a constraint makes the grant unconstrained; otherwise the
/// constraints of all paths are OR-ed.
#[derive(Debug, Clone)]
pub struct AccessPolicy {
    users: BTreeMap<String, UserProfile>,
    region_rules: Vec<Rule>,
    role_rules: Vec<Rule>,
}

impl AccessPolicy {
    pub fn parse(text: &str) -> Result<Self, AuthError> {
        let raw: PolicyFile = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            AuthError::MalformedDocument {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        let mut users = BTreeMap::new();
        for u in raw.user {
            if u.user_id.trim().is_empty() {
                return Err(AuthError::InvalidPolicy("user with empty user_id".into()));
            }
            if users.insert(u.user_id.clone(), u.clone()).is_some() {
                return Err(AuthError::InvalidPolicy(format!("duplicate user `{}`", u.user_id)));
            }
        }
        let compile = |spec: RuleSpec, region: bool| -> Result<Rule, AuthError> {
            let subject = if region { spec.region } else { spec.role }
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| {
                    AuthError::InvalidPolicy(format!(
                        "{} rule without subject",
                        if region { "region" } else { "role" }
                    ))
                })?;
            let patterns = spec
                .tables
                .iter()
                .map(|t| {
                    glob::Pattern::new(&t.to_lowercase())
                        .map_err(|e| AuthError::InvalidPolicy(format!("pattern `{t}`: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Rule {
                subject,
                patterns,
                constraint: spec.constraint.filter(|c| !c.trim().is_empty()),
            })
        };
        Ok(Self {
            users,
            region_rules: raw
                .region_rule
                .into_iter()
                .map(|r| compile(r, true))
                .collect::<Result<_, _>>()?,
            role_rules: raw
                .role_rule
                .into_iter()
                .map(|r| compile(r, false))
                .collect::<Result<_, _>>()?,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AuthError> {
        let text = std::fs::read_to_string(path).map_err(|source| AuthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn user(&self, user_id: &str) -> Result<&UserProfile, AuthError> {
        self.users
            .get(user_id)
            .ok_or_else(|| AuthError::UnknownUser(user_id.to_string()))
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    /// Every grant path per catalog table, with the path's constraint.
    pub fn grant_paths(
        &self,
        profile: &UserProfile,
        catalog_tables: &BTreeSet<String>,
    ) -> BTreeMap<String, Vec<(GrantSource, Option<String>)>> {
        let mut paths: BTreeMap<String, Vec<(GrantSource, Option<String>)>> = BTreeMap::new();
        let region = profile.region.as_deref().map(str::to_lowercase);
        for table in catalog_tables {
            let entry = |paths: &mut BTreeMap<String, Vec<_>>, src, c: &Option<String>| {
                paths.entry(table.clone()).or_default().push((src, c.clone()));
            };
            if profile.explicit_grants.iter().any(|g| g.eq_ignore_ascii_case(table)) {
                entry(&mut paths, GrantSource::Explicit, &None);
            }
            for rule in &self.region_rules {
                if region.as_deref() == Some(rule.subject.to_lowercase().as_str()) && rule.matches(table) {
                    entry(&mut paths, GrantSource::Region(rule.subject.clone()), &rule.constraint);
                }
            }
            for rule in &self.role_rules {
                if profile.roles.iter().any(|r| r.eq_ignore_ascii_case(&rule.subject)) && rule.matches(table) {
                    entry(&mut paths, GrantSource::Role(rule.subject.clone()), &rule.constraint);
                }
            }
        }
        paths
    }

    /// Builds the profile from rules: exactly the tables reachable by a
    /// region rule, role rule or explicit grant.
    pub fn build_mup(
        &self,
        profile: &UserProfile,
        catalog_tables: &BTreeSet<String>,
        issued_at: u64,
    ) -> Result<MinimalUserProfile, AuthError> {
        if profile.user_id.trim().is_empty() {
            return Err(AuthError::UnknownUser(profile.user_id.clone()));
        }
        if catalog_tables.is_empty() {
            return Err(AuthError::EmptyCatalog);
        }
        let mut mup = MinimalUserProfile::empty(&profile.user_id, issued_at);
        for (table, paths) in self.grant_paths(profile, catalog_tables) {
            mup.granted_tables.insert(table.clone());
            if paths.iter().all(|(_, c)| c.is_some()) {
                let preds: BTreeSet<&str> = paths.iter().filter_map(|(_, c)| c.as_deref()).collect();
                let combined = if preds.len() == 1 {
                    preds.into_iter().next().unwrap().to_string()
                } else {
                    preds
                        .into_iter()
                        .map(|p| format!("({p})"))
                        .collect::<Vec<_>>()
                        .join(" OR ")
                };
                check_predicate(&table, &combined)?;
                mup.constraints.insert(table, combined);
            }
        }
        Ok(mup)
    }

    /// Looks the user up in the directory and builds their profile.
    pub fn login(
        &self,
        user_id: &str,
        catalog_tables: &BTreeSet<String>,
        issued_at: u64,
    ) -> Result<MinimalUserProfile, AuthError> {
        let profile = self.user(user_id)?;
        self.build_mup(profile, catalog_tables, issued_at)
    }

    /// Builds the profile through the auth prompt.
    ///
    /// The completion must be a profile document; it is accepted only if it
    /// grants a subset of the rule-built tables with the same constraints.
    pub fn build_mup_via_prompt(
        &self,
        gateway: &LlmGateway,
        ledger_key: &str,
        profile: &UserProfile,
        catalog_tables: &BTreeSet<String>,
        issued_at: u64,
    ) -> Result<MinimalUserProfile, AuthError> {
        let expected = self.build_mup(profile, catalog_tables, issued_at)?;
        let prompt = PromptText::new(PromptRole::Auth, self.auth_prompt(profile, catalog_tables))?;
        let record = gateway.complete(ledger_key, &prompt, &GenerationParams::default())?;
        let mut got = MinimalUserProfile::parse(strip_fences(&record.output))?;
        got.issued_at = issued_at;
        if got.user_id != expected.user_id {
            return Err(AuthError::PromptRejected(format!("profile is for `{}`", got.user_id)));
        }
        got.validate(catalog_tables)?;
        for t in &got.granted_tables {
            if !expected.granted_tables.contains(t) {
                return Err(AuthError::PromptRejected(format!("`{t}` is not permitted by any rule")));
            }
            if got.constraints.get(t) != expected.constraints.get(t) {
                return Err(AuthError::PromptRejected(format!(
                    "constraint on `{t}` differs from policy"
                )));
            }
        }
        Ok(got)
    }

    fn auth_prompt(&self, profile: &UserProfile, catalog_tables: &BTreeSet<String>) -> String {
        let mut out = String::from(
            "Produce the minimal access profile for this user as a JSON object with keys \
             constraints, granted_tables, issued_at, user_id. Grant only tables permitted by the rules.\n\n",
        );
        out.push_str(&format!(
            "User: {}\n",
            serde_json::to_string(profile).expect("profile serializes")
        ));
        out.push_str("Region rules:\n");
        for r in &self.region_rules {
            out.push_str(&rule_line(r));
        }
        out.push_str("Role rules:\n");
        for r in &self.role_rules {
            out.push_str(&rule_line(r));
        }
        out.push_str(&format!(
            "Catalog tables: {}\n",
            catalog_tables.iter().cloned().collect::<Vec<_>>().join(", ")
        ));
        out
    }
}

fn rule_line(r: &Rule) -> String {
    let pats: Vec<&str> = r.patterns.iter().map(glob::Pattern::as_str).collect();
    match &r.constraint {
        Some(c) => format!("- {} -> {} where {}\n", r.subject, pats.join(", "), c),
        None => format!("- {} -> {}\n", r.subject, pats.join(", ")),
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
