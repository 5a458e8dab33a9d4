//! Slice Federation Interface: negotiated cross-slice links and the per-stream
//! processing applied to every record that crosses one.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldPath, Result, ValidationError};
use crate::model::{Sensitivity, SliceBlueprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    /// Applied by the exporter before a record leaves its slice.
    Outbound,
    /// Applied by the importer when a record arrives.
    Inbound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AggregateFn {
    Mean,
    Min,
    Max,
    Count,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Transform {
    Pass,
    Redact { fields: Vec<String> },
    Aggregate { window: u32, function: AggregateFn },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfiRule {
    pub direction: Direction,
    pub stream: String,
    pub transform: Transform,
}

impl SfiRule {
    pub fn pass(stream: &str) -> Self {
        Self {
            direction: Direction::Outbound,
            stream: stream.to_string(),
            transform: Transform::Pass,
        }
    }
}

/// Checks a rule set against the streams declared by the exporting blueprint.
pub fn validate_rules(
    rules: &[SfiRule],
    exporter: &SliceBlueprint,
    at: &FieldPath,
) -> Result<(), ValidationError> {
    for (i, rule) in rules.iter().enumerate() {
        let here = at.index(i);
        if exporter.stream(&rule.stream).is_none() {
            return Err(ValidationError::new(
                here.field("stream"),
                format!("unknown stream `{}`", rule.stream),
            ));
        }
        match &rule.transform {
            Transform::Pass => {}
            Transform::Redact { fields } if fields.is_empty() => {
                return Err(ValidationError::new(
                    here.field("transform").field("fields"),
                    "REDACT needs at least one field",
                ))
            }
            Transform::Redact { .. } => {}
            Transform::Aggregate { window: 0, .. } => {
                return Err(ValidationError::new(
                    here.field("transform").field("window"),
                    "window must be positive",
                ))
            }
            Transform::Aggregate { .. } => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LinkState {
    Proposed,
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FederationLink {
    pub id: String,
    pub exporter: String,
    pub importer: String,
    pub exporter_tenant: String,
    pub importer_tenant: String,
    pub rules: Vec<SfiRule>,
    pub state: LinkState,
    pub consents: BTreeSet<String>,
    /// Recorded only; no cryptography is performed.
    pub encrypted: bool,
}

impl FederationLink {
    pub fn has_all_consents(&self) -> bool {
        self.consents.contains(&self.exporter_tenant)
            && self.consents.contains(&self.importer_tenant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Number(f64),
    Text(String),
}

impl FieldValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            FieldValue::Number(v) => Some(*v),
            FieldValue::Text(_) => None,
        }
    }
}

impl From<f64> for FieldValue {
    fn from(v: f64) -> Self {
        FieldValue::Number(v)
    }
}

impl From<&str> for FieldValue {
    fn from(v: &str) -> Self {
        FieldValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub stream: String,
    pub slice: String,
    pub timestamp: u64,
    pub seq: u64,
    pub fields: BTreeMap<String, FieldValue>,
    pub sensitivity: Sensitivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DenyReason {
    NoLink,
    LinkNotActive,
    WrongSource,
    NoRule,
    LocalOnly,
    OutOfOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowDecision {
    Pass(DataRecord),
    /// Buffered by an aggregation window that is not full yet.
    Defer,
    Deny(DenyReason),
}

/// Aggregation buffers and sequence tracking for one link.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowEvaluator {
    buffers: BTreeMap<usize, Vec<DataRecord>>,
    last_seq: BTreeMap<String, u64>,
}

impl FlowEvaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `record` through the link's rules for its stream. Outbound rules
    /// apply before inbound ones; declaration order is kept within a direction.
    pub fn evaluate(&mut self, link: &FederationLink, record: &DataRecord) -> FlowDecision {
        if link.state != LinkState::Active {
            return FlowDecision::Deny(DenyReason::LinkNotActive);
        }
        if record.slice != link.exporter {
            return FlowDecision::Deny(DenyReason::WrongSource);
        }
        if record.sensitivity == Sensitivity::LocalOnly {
            return FlowDecision::Deny(DenyReason::LocalOnly);
        }
        let mut chain: Vec<(usize, &SfiRule)> = link
            .rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.stream == record.stream)
            .collect();
        if chain.is_empty() {
            return FlowDecision::Deny(DenyReason::NoRule);
        }
        if let Some(last) = self.last_seq.get(&record.stream) {
            if record.seq <= *last {
                return FlowDecision::Deny(DenyReason::OutOfOrder);
            }
        }
        self.last_seq.insert(record.stream.clone(), record.seq);
        chain.sort_by_key(|(i, r)| (r.direction, *i));

        let mut current = record.clone();
        for (idx, rule) in chain {
            match &rule.transform {
                Transform::Pass => {}
                Transform::Redact { fields } => {
                    for f in fields {
                        current.fields.remove(f);
                    }
                }
                Transform::Aggregate { window, function } => {
                    let buf = self.buffers.entry(idx).or_default();
                    buf.push(current);
                    if buf.len() < *window as usize {
                        return FlowDecision::Defer;
                    }
                    let window_records = std::mem::take(buf);
                    current = aggregate(&window_records, *function);
                }
            }
        }
        FlowDecision::Pass(current)
    }
}

fn aggregate(window: &[DataRecord], function: AggregateFn) -> DataRecord {
    let last = window.last().expect("non-empty window");
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for rec in window {
        for (name, v) in &rec.fields {
            if let Some(x) = v.as_number() {
                values.entry(name.as_str()).or_default().push(x);
            }
        }
    }
    let fields = values
        .into_iter()
        .map(|(name, xs)| {
            let v = match function {
                AggregateFn::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
                AggregateFn::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
                AggregateFn::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                AggregateFn::Count => xs.len() as f64,
            };
            (name.to_string(), FieldValue::Number(v))
        })
        .collect();
    DataRecord {
        stream: last.stream.clone(),
        slice: last.slice.clone(),
        timestamp: last.timestamp,
        seq: last.seq,
        fields,
        sensitivity: window
            .iter()
            .map(|r| r.sensitivity)
            .max()
            .unwrap_or(Sensitivity::Public),
    }
}

/// Single-record evaluation against a fresh evaluator.
pub fn evaluate_flow(link: &FederationLink, record: &DataRecord) -> FlowDecision {
    FlowEvaluator::new().evaluate(link, record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub link: Option<String>,
    pub stream: String,
    pub source_slice: String,
    pub target_slice: String,
    pub seq: u64,
    pub decision: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<DenyReason>,
}

/// Every link in the system together with its evaluator and the audit trail.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FederationRegistry {
    links: BTreeMap<String, FederationLink>,
    evaluators: BTreeMap<String, FlowEvaluator>,
    audit: Vec<AuditEntry>,
    next_id: u64,
}

impl FederationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn link(&self, id: &str) -> Option<&FederationLink> {
        self.links.get(id)
    }

    pub fn links(&self) -> impl Iterator<Item = &FederationLink> {
        self.links.values()
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn audit_ndjson(&self) -> String {
        ndjson(&self.audit)
    }

    /// Registers a PROPOSED link. Rule validation against the exporter's
    /// blueprint is the caller's job.
    pub fn propose(
        &mut self,
        exporter: (&str, &str),
        importer: (&str, &str),
        rules: Vec<SfiRule>,
        encrypted: bool,
    ) -> Result<&FederationLink> {
        if exporter.0 == importer.0 {
            return Err(Error::SelfFederation(exporter.0.to_string()));
        }
        self.next_id += 1;
        let id = format!("f{:06}", self.next_id);
        let link = FederationLink {
            id: id.clone(),
            exporter: exporter.0.to_string(),
            importer: importer.0.to_string(),
            exporter_tenant: exporter.1.to_string(),
            importer_tenant: importer.1.to_string(),
            rules,
            state: LinkState::Proposed,
            consents: BTreeSet::new(),
            encrypted,
        };
        self.evaluators.insert(id.clone(), FlowEvaluator::new());
        Ok(self.links.entry(id).or_insert(link))
    }

    /// Records one party's approval; the link turns ACTIVE once both agree.
    pub fn consent(&mut self, id: &str, tenant: &str) -> Result<&FederationLink> {
        let link = self.links.get_mut(id).ok_or_else(|| Error::NotFound {
            kind: "federation",
            id: id.to_string(),
        })?;
        if tenant != link.exporter_tenant && tenant != link.importer_tenant {
            return Err(Error::Unauthorized {
                tenant: tenant.to_string(),
                action: "consent to".into(),
                target: id.to_string(),
            });
        }
        if link.state == LinkState::Closed {
            return Err(Error::Validation(ValidationError::general(format!(
                "federation `{id}` is closed"
            ))));
        }
        link.consents.insert(tenant.to_string());
        if link.has_all_consents() {
            link.state = LinkState::Active;
        }
        Ok(link)
    }

    pub fn close(&mut self, id: &str) -> Result<()> {
        let link = self.links.get_mut(id).ok_or_else(|| Error::NotFound {
            kind: "federation",
            id: id.to_string(),
        })?;
        link.state = LinkState::Closed;
        self.evaluators.remove(id);
        Ok(())
    }

    /// Ids of non-closed links in which `slice` takes part.
    pub fn open_links_of(&self, slice: &str) -> Vec<String> {
        self.links
            .values()
            .filter(|l| {
                l.state != LinkState::Closed && (l.exporter == slice || l.importer == slice)
            })
            .map(|l| l.id.clone())
            .collect()
    }

    /// Attempts to deliver `record` from its slice to `target`. Returns the
    /// records the target actually receives.
    pub fn deliver(&mut self, record: &DataRecord, target: &str) -> Vec<DataRecord> {
        let candidates: Vec<String> = self
            .links
            .values()
            .filter(|l| l.exporter == record.slice && l.importer == target)
            .map(|l| l.id.clone())
            .collect();
        let mut delivered = Vec::new();
        if candidates.is_empty() {
            self.audit.push(AuditEntry {
                link: None,
                stream: record.stream.clone(),
                source_slice: record.slice.clone(),
                target_slice: target.to_string(),
                seq: record.seq,
                decision: "DENY".into(),
                reason: Some(DenyReason::NoLink),
            });
            return delivered;
        }
        for id in candidates {
            let link = &self.links[&id];
            let decision = self
                .evaluators
                .entry(id.clone())
                .or_default()
                .evaluate(link, record);
            let (label, reason) = match &decision {
                FlowDecision::Pass(_) => ("PASS", None),
                FlowDecision::Defer => ("DEFER", None),
                FlowDecision::Deny(r) => ("DENY", Some(*r)),
            };
            self.audit.push(AuditEntry {
                link: Some(id.clone()),
                stream: record.stream.clone(),
                source_slice: record.slice.clone(),
                target_slice: target.to_string(),
                seq: record.seq,
                decision: label.into(),
                reason,
            });
            if let FlowDecision::Pass(out) = decision {
                delivered.push(out);
            }
        }
        delivered
    }
}

/// Records gathered over one link, tagged with the exporter's site.
#[derive(Debug, Clone)]
pub struct MergeInput<'a> {
    pub link: &'a FederationLink,
    pub exporter_site: String,
    pub records: Vec<DataRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub link: String,
    pub exporter_site: String,
    pub record: DataRecord,
}

/// Evaluates every input record on its link and merges the passed ones,
/// ordered by (timestamp, exporter site, sequence number).
pub fn merge_streams(inputs: &[MergeInput<'_>]) -> Result<Vec<MergedRecord>> {
    let importers: BTreeSet<&str> = inputs.iter().map(|i| i.link.importer.as_str()).collect();
    if importers.len() > 1 {
        return Err(Error::Validation(ValidationError::general(format!(
            "links feed different importers: {importers:?}"
        ))));
    }
    let mut merged = Vec::new();
    for input in inputs {
        let mut eval = FlowEvaluator::new();
        for rec in &input.records {
            if let FlowDecision::Pass(out) = eval.evaluate(input.link, rec) {
                merged.push(MergedRecord {
                    link: input.link.id.clone(),
                    exporter_site: input.exporter_site.clone(),
                    record: out,
                });
            }
        }
    }
    merged.sort_by(|a, b| {
        (
            a.record.timestamp,
            &a.exporter_site,
            a.record.seq,
            &a.link,
            &a.record.stream,
        )
            .cmp(&(
                b.record.timestamp,
                &b.exporter_site,
                b.record.seq,
                &b.link,
                &b.record.stream,
            ))
    });
    Ok(merged)
}

pub(crate) fn ndjson<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn active_link(rules: Vec<SfiRule>) -> FederationLink {
        FederationLink {
            id: "f1".into(),
            exporter: "exp".into(),
            importer: "imp".into(),
            exporter_tenant: "a".into(),
            importer_tenant: "b".into(),
            rules,
            state: LinkState::Active,
            consents: ["a".to_string(), "b".to_string()].into(),
            encrypted: false,
        }
    }

    fn record(stream: &str, seq: u64, fields: &[(&str, FieldValue)]) -> DataRecord {
        DataRecord {
            stream: stream.into(),
            slice: "exp".into(),
            timestamp: seq,
            seq,
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            sensitivity: Sensitivity::Confidential,
        }
    }

    #[test]
    fn no_matching_rule_denied() {
        let link = active_link(vec![SfiRule::pass("other")]);
        assert_eq!(
            evaluate_flow(&link, &record("temp", 1, &[])),
            FlowDecision::Deny(DenyReason::NoRule)
        );
    }

    #[test]
    fn redact_removes_listed_fields() {
        let link = active_link(vec![SfiRule {
            direction: Direction::Outbound,
            stream: "q".into(),
            transform: Transform::Redact {
                fields: vec!["recipe".into()],
            },
        }]);
        let rec = record("q", 1, &[("temp", 21.0.into()), ("recipe", "X".into())]);
        match evaluate_flow(&link, &rec) {
            FlowDecision::Pass(out) => {
                assert_eq!(out.fields.len(), 1);
                assert_eq!(out.fields["temp"], FieldValue::Number(21.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aggregate_mean_over_ten() {
        let link = active_link(vec![SfiRule {
            direction: Direction::Outbound,
            stream: "q".into(),
            transform: Transform::Aggregate {
                window: 10,
                function: AggregateFn::Mean,
            },
        }]);
        let mut eval = FlowEvaluator::new();
        for i in 1..=9u64 {
            let rec = record("q", i, &[("temp", (i as f64).into()), ("tag", "x".into())]);
            assert_eq!(eval.evaluate(&link, &rec), FlowDecision::Defer);
        }
        let rec = record("q", 10, &[("temp", 10.0.into()), ("tag", "x".into())]);
        match eval.evaluate(&link, &rec) {
            FlowDecision::Pass(out) => {
                assert_eq!(out.fields.len(), 1, "non-numeric fields dropped");
                assert_eq!(out.fields["temp"], FieldValue::Number(5.5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn local_only_and_inactive_denied() {
        let mut link = active_link(vec![SfiRule::pass("q")]);
        let mut rec = record("q", 1, &[]);
        rec.sensitivity = Sensitivity::LocalOnly;
        assert_eq!(
            evaluate_flow(&link, &rec),
            FlowDecision::Deny(DenyReason::LocalOnly)
        );
        link.state = LinkState::Proposed;
        assert_eq!(
            evaluate_flow(&link, &record("q", 1, &[])),
            FlowDecision::Deny(DenyReason::LinkNotActive)
        );
    }

    #[test]
    fn consent_flow() {
        let mut reg = FederationRegistry::new();
        let id = reg
            .propose(("s1", "a"), ("s2", "b"), vec![], false)
            .unwrap()
            .id
            .clone();
        assert_eq!(reg.consent(&id, "a").unwrap().state, LinkState::Proposed);
        assert!(matches!(
            reg.consent(&id, "zed"),
            Err(Error::Unauthorized { .. })
        ));
        assert_eq!(reg.consent(&id, "b").unwrap().state, LinkState::Active);
        assert!(matches!(
            reg.propose(("s1", "a"), ("s1", "a"), vec![], false),
            Err(Error::SelfFederation(_))
        ));
    }

    #[test]
    fn merge_orders_by_timestamp_then_site() {
        let l1 = active_link(vec![SfiRule::pass("q")]);
        let mut l2 = active_link(vec![SfiRule::pass("q")]);
        l2.id = "f2".into();
        l2.exporter = "exp2".into();
        let mut r2 = record("q", 1, &[]);
        r2.slice = "exp2".into();
        let inputs = [
            MergeInput {
                link: &l2,
                exporter_site: "s2".into(),
                records: vec![r2],
            },
            MergeInput {
                link: &l1,
                exporter_site: "s1".into(),
                records: vec![record("q", 1, &[])],
            },
        ];
        let merged = merge_streams(&inputs).unwrap();
        assert_eq!(merged[0].exporter_site, "s1");
        assert_eq!(merged, merge_streams(&inputs).unwrap());

        let empty = [MergeInput {
            link: &l1,
            exporter_site: "s1".into(),
            records: vec![],
        }];
        assert!(merge_streams(&empty).unwrap().is_empty());

        let mut l3 = active_link(vec![]);
        l3.importer = "elsewhere".into();
        let mixed = [
            MergeInput {
                link: &l1,
                exporter_site: "s1".into(),
                records: vec![],
            },
            MergeInput {
                link: &l3,
                exporter_site: "s1".into(),
                records: vec![],
            },
        ];
        assert!(matches!(merge_streams(&mixed), Err(Error::Validation(_))));
    }
}
