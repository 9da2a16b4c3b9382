//! The trainable skill document.
//!
//! A skill is a UTF-8 markdown file with at most one protected region fenced
//! by [`SLOW_UPDATE_START`] / [`SLOW_UPDATE_END`]. Step-level edits never touch
//! that region; only [`SkillDocument::set_protected`] rewrites it.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SLOW_UPDATE_START: &str = "<!-- SLOW_UPDATE_START -->";
pub const SLOW_UPDATE_END: &str = "<!-- SLOW_UPDATE_END -->";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SkillDocError {
    #[error("malformed skill markers at byte {offset}: {reason}")]
    Markers { offset: usize, reason: &'static str },
    #[error("skill file is not valid UTF-8: {0}")]
    Utf8(String),
    #[error("edit {index} is malformed: {reason}")]
    MalformedEdit { index: usize, reason: String },
    #[error("edit budget must be at least 1")]
    ZeroBudget,
    #[error("protected guidance must not contain slow-update marker strings")]
    MarkerInGuidance,
}

/// Byte span of the protected region, markers inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Region {
    start: usize,
    end: usize,
}

impl Region {
    fn content_range(&self) -> std::ops::Range<usize> {
        self.start + SLOW_UPDATE_START.len()..self.end - SLOW_UPDATE_END.len()
    }
}

#[derive(Debug, Clone)]
pub struct SkillDocument {
    text: String,
    region: Option<Region>,
    version_id: u64,
}

impl PartialEq for SkillDocument {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Eq for SkillDocument {}

impl Default for SkillDocument {
    fn default() -> Self {
        Self::empty()
    }
}

impl SkillDocument {
    pub fn empty() -> Self {
        Self {
            text: String::new(),
            region: None,
            version_id: 0,
        }
    }

    /// Parses serialized skill text, validating the marker structure.
    pub fn parse(text: &str) -> Result<Self, SkillDocError> {
        let region = locate_region(text)?;
        Ok(Self {
            text: text.to_owned(),
            region,
            version_id: 0,
        })
    }

    pub fn parse_bytes(bytes: &[u8]) -> Result<Self, SkillDocError> {
        let text = std::str::from_utf8(bytes).map_err(|e| SkillDocError::Utf8(e.to_string()))?;
        Self::parse(text)
    }

    /// Builds a document from plain markdown with no protected region.
    pub fn from_body(body: &str) -> Result<Self, SkillDocError> {
        Self::parse(body)
    }

    pub fn serialize(&self) -> &str {
        &self.text
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.text.as_bytes().to_vec()
    }

    /// Text outside the protected region (markers and region removed).
    pub fn body(&self) -> String {
        match self.region {
            None => self.text.clone(),
            Some(r) => {
                let mut out = String::with_capacity(self.text.len());
                out.push_str(&self.text[..r.start]);
                out.push_str(&self.text[r.end..]);
                out
            }
        }
    }

    pub fn protected(&self) -> Option<&str> {
        self.region.map(|r| &self.text[r.content_range()])
    }

    pub fn has_protected(&self) -> bool {
        self.region.is_some()
    }

    pub fn version_id(&self) -> u64 {
        self.version_id
    }

    pub fn with_version(mut self, version_id: u64) -> Self {
        self.version_id = version_id;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn hash(&self) -> String {
        hash_skill(self)
    }

    /// Overwrites the protected region, creating it at the end of the body
    /// when absent. Bytes outside the markers are left untouched.
    pub fn set_protected(&self, guidance: &str) -> Result<Self, SkillDocError> {
        if guidance.contains(SLOW_UPDATE_START) || guidance.contains(SLOW_UPDATE_END) {
            return Err(SkillDocError::MarkerInGuidance);
        }
        let text = match self.region {
            Some(r) => {
                let range = r.content_range();
                let mut t = String::with_capacity(self.text.len() + guidance.len());
                t.push_str(&self.text[..range.start]);
                t.push_str(guidance);
                t.push_str(&self.text[range.end..]);
                t
            }
            None => {
                let mut t = self.text.clone();
                t.push_str(block_separator(&t));
                t.push_str(SLOW_UPDATE_START);
                t.push_str(guidance);
                t.push_str(SLOW_UPDATE_END);
                t
            }
        };
        let region = locate_region(&text)?;
        Ok(Self {
            text,
            region,
            version_id: self.version_id,
        })
    }

    /// True when `apply_edits` would refuse `edit` as touching the protected
    /// region.
    pub fn edit_hits_protected(&self, edit: &EditOp) -> bool {
        if edit.touches_markers() {
            return true;
        }
        let (Some(region), Some(target)) = (self.region, edit.target.as_deref()) else {
            return false;
        };
        match self.text.find(target) {
            Some(pos) => pos < region.end && region.start < pos + target.len(),
            None => false,
        }
    }

    /// Replaces everything outside the protected region with `body`, then
    /// re-attaches the existing region verbatim at the end.
    pub fn replace_body(&self, body: &str) -> Result<Self, SkillDocError> {
        if body.contains(SLOW_UPDATE_START) || body.contains(SLOW_UPDATE_END) {
            return Err(SkillDocError::MarkerInGuidance);
        }
        let fresh = Self::parse(body)?.with_version(self.version_id);
        match self.protected() {
            Some(guidance) => fresh.set_protected(guidance),
            None => Ok(fresh),
        }
    }
}

impl fmt::Display for SkillDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Serialize, Deserialize)]
struct StoredSkill {
    text: String,
    version_id: u64,
}

impl Serialize for SkillDocument {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        StoredSkill {
            text: self.text.clone(),
            version_id: self.version_id,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SkillDocument {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let stored = StoredSkill::deserialize(d)?;
        SkillDocument::parse(&stored.text)
            .map(|doc| doc.with_version(stored.version_id))
            .map_err(serde::de::Error::custom)
    }
}

fn locate_region(text: &str) -> Result<Option<Region>, SkillDocError> {
    let starts: Vec<usize> = text.match_indices(SLOW_UPDATE_START).map(|(i, _)| i).collect();
    let ends: Vec<usize> = text.match_indices(SLOW_UPDATE_END).map(|(i, _)| i).collect();
    match (starts.as_slice(), ends.as_slice()) {
        ([], []) => Ok(None),
        ([s], [e]) if s < e => Ok(Some(Region {
            start: *s,
            end: *e + SLOW_UPDATE_END.len(),
        })),
        ([_], [e]) => Err(SkillDocError::Markers {
            offset: *e,
            reason: "end marker precedes start marker",
        }),
        ([s], []) => Err(SkillDocError::Markers {
            offset: *s,
            reason: "start marker without end marker",
        }),
        ([], [e, ..]) => Err(SkillDocError::Markers {
            offset: *e,
            reason: "end marker without start marker",
        }),
        ([_, s2, ..], _) => Err(SkillDocError::Markers {
            offset: *s2,
            reason: "more than one start marker",
        }),
        (_, [_, e2, ..]) => Err(SkillDocError::Markers {
            offset: *e2,
            reason: "more than one end marker",
        }),
    }
}

/// Separator that leaves exactly one blank line between existing text and a
/// new block, without modifying existing bytes.
fn block_separator(text: &str) -> &'static str {
    if text.is_empty() || text.ends_with("\n\n") {
        ""
    } else if text.ends_with('\n') {
        "\n"
    } else {
        "\n\n"
    }
}

/// SHA-256 hex digest of the serialized bytes.
pub fn hash_skill(doc: &SkillDocument) -> String {
    hex::encode(Sha256::digest(doc.text.as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Append,
    InsertAfter,
    Replace,
    Delete,
}

impl OpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OpKind::Append => "append",
            OpKind::InsertAfter => "insert_after",
            OpKind::Replace => "replace",
            OpKind::Delete => "delete",
        }
    }

    fn needs_target(&self) -> bool {
        !matches!(self, OpKind::Append)
    }

    fn needs_content(&self) -> bool {
        !matches!(self, OpKind::Delete)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceType {
    Failure,
    Success,
}

fn one() -> u32 {
    1
}

/// One atomic skill edit, in the same shape the optimizer emits as JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default = "one")]
    pub support_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_type: Option<SourceType>,
}

impl EditOp {
    pub fn append(content: impl Into<String>) -> Self {
        Self::build(OpKind::Append, None, Some(content.into()))
    }

    pub fn insert_after(target: impl Into<String>, content: impl Into<String>) -> Self {
        Self::build(OpKind::InsertAfter, Some(target.into()), Some(content.into()))
    }

    pub fn replace(target: impl Into<String>, content: impl Into<String>) -> Self {
        Self::build(OpKind::Replace, Some(target.into()), Some(content.into()))
    }

    pub fn delete(target: impl Into<String>) -> Self {
        Self::build(OpKind::Delete, Some(target.into()), None)
    }

    fn build(op: OpKind, target: Option<String>, content: Option<String>) -> Self {
        Self {
            op,
            target,
            content,
            support_count: 1,
            source_type: None,
        }
    }

    pub fn with_support(mut self, support_count: u32) -> Self {
        self.support_count = support_count;
        self
    }

    pub fn with_source(mut self, source: SourceType) -> Self {
        self.source_type = Some(source);
        self
    }

    /// Checks that field presence matches the op kind.
    pub fn validate(&self) -> Result<(), String> {
        match (&self.target, self.op.needs_target()) {
            (None, true) => return Err(format!("{} requires a target", self.op)),
            (Some(_), false) => return Err(format!("{} must not carry a target", self.op)),
            (Some(t), true) if t.is_empty() => {
                return Err(format!("{} target must be non-empty", self.op))
            }
            _ => {}
        }
        match (&self.content, self.op.needs_content()) {
            (None, true) => return Err(format!("{} requires content", self.op)),
            (Some(_), false) => return Err(format!("{} must not carry content", self.op)),
            _ => {}
        }
        if self.support_count == 0 {
            return Err("support_count must be at least 1".into());
        }
        Ok(())
    }

    /// Text the edit anchors on, or the content for appends.
    pub fn anchor_text(&self) -> &str {
        self.target
            .as_deref()
            .or(self.content.as_deref())
            .unwrap_or_default()
    }

    pub fn touches_markers(&self) -> bool {
        [self.target.as_deref(), self.content.as_deref()]
            .into_iter()
            .flatten()
            .any(|s| s.contains(SLOW_UPDATE_START) || s.contains(SLOW_UPDATE_END))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyStatus {
    Applied,
    SkippedTargetNotFound,
    SkippedProtected,
    SkippedConflict,
    SkippedBudget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyEntry {
    pub edit_index: usize,
    pub op: OpKind,
    pub status: ApplyStatus,
    pub detail: String,
}

/// Per-edit outcome of one [`apply_edits`] call; written as
/// `edit_apply_report.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditApplyReport {
    pub skill_hash_before: String,
    pub skill_hash_after: String,
    pub entries: Vec<ApplyEntry>,
}

impl EditApplyReport {
    pub fn applied_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.status == ApplyStatus::Applied)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Span of text modified by an applied edit, in current working-copy offsets.
#[derive(Debug, Clone, Copy)]
struct Touched {
    start: usize,
    end: usize,
}

impl Touched {
    fn overlaps(&self, start: usize, end: usize) -> bool {
        if self.start == self.end {
            // deletion point: conflicts only if the target straddles it
            start < self.start && self.start < end
        } else {
            start < self.end && self.start < end
        }
    }
}

/// Applies `edits` in priority order to a copy of `doc`, applying at most
/// `budget` of them.
pub fn apply_edits(
    doc: &SkillDocument,
    edits: &[EditOp],
    budget: usize,
) -> Result<(SkillDocument, EditApplyReport), SkillDocError> {
    if budget == 0 {
        return Err(SkillDocError::ZeroBudget);
    }
    for (index, edit) in edits.iter().enumerate() {
        edit.validate()
            .map_err(|reason| SkillDocError::MalformedEdit { index, reason })?;
    }

    let mut text = doc.text.clone();
    let mut region = doc.region;
    let mut touched: Vec<Touched> = Vec::new();
    let mut applied = 0usize;
    let mut entries = Vec::with_capacity(edits.len());

    for (edit_index, edit) in edits.iter().enumerate() {
        let entry = |status, detail: String| ApplyEntry {
            edit_index,
            op: edit.op,
            status,
            detail,
        };
        if applied >= budget {
            entries.push(entry(
                ApplyStatus::SkippedBudget,
                format!("budget of {budget} edits exhausted"),
            ));
            continue;
        }
        if edit.touches_markers() {
            entries.push(entry(
                ApplyStatus::SkippedProtected,
                "edit text contains a slow-update marker".into(),
            ));
            continue;
        }

        // (position, removed byte count, inserted text, touched span)
        let splice = match edit.op {
            OpKind::Append => {
                let content = edit.content.as_deref().unwrap_or_default();
                let insert = format!("{}{}", block_separator(&text), content);
                let at = text.len();
                (at, 0, insert.clone(), Touched { start: at, end: at + insert.len() })
            }
            _ => {
                let target = edit.target.as_deref().unwrap_or_default();
                let Some(pos) = text.find(target) else {
                    entries.push(entry(
                        ApplyStatus::SkippedTargetNotFound,
                        "target text not found".into(),
                    ));
                    continue;
                };
                let end = pos + target.len();
                if region.is_some_and(|r| pos < r.end && r.start < end) {
                    entries.push(entry(
                        ApplyStatus::SkippedProtected,
                        format!("target at byte {pos} lies in the protected region"),
                    ));
                    continue;
                }
                if touched.iter().any(|t| t.overlaps(pos, end)) {
                    entries.push(entry(
                        ApplyStatus::SkippedConflict,
                        format!("target at byte {pos} overlaps an earlier edit"),
                    ));
                    continue;
                }
                match edit.op {
                    OpKind::InsertAfter => {
                        let insert =
                            format!("\n\n{}\n", edit.content.as_deref().unwrap_or_default());
                        let len = insert.len();
                        (end, 0, insert, Touched { start: end, end: end + len })
                    }
                    OpKind::Replace => {
                        let content = edit.content.clone().unwrap_or_default();
                        let len = content.len();
                        (pos, target.len(), content, Touched { start: pos, end: pos + len })
                    }
                    OpKind::Delete => (pos, target.len(), String::new(), Touched { start: pos, end: pos }),
                    OpKind::Append => unreachable!(),
                }
            }
        };

        let (at, removed, insert, span) = splice;
        let shift = insert.len() as isize - removed as isize;
        for t in touched.iter_mut() {
            if t.start >= at + removed {
                t.start = (t.start as isize + shift) as usize;
                t.end = (t.end as isize + shift) as usize;
            }
        }
        text.replace_range(at..at + removed, &insert);
        touched.push(span);
        region = locate_region(&text)?;
        applied += 1;
        entries.push(entry(ApplyStatus::Applied, format!("applied at byte {at}")));
    }

    let after = SkillDocument {
        text,
        region,
        version_id: doc.version_id,
    };
    let report = EditApplyReport {
        skill_hash_before: hash_skill(doc),
        skill_hash_after: hash_skill(&after),
        entries,
    };
    Ok((after, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_region(body: &str, guidance: &str) -> SkillDocument {
        SkillDocument::from_body(body)
            .unwrap()
            .set_protected(guidance)
            .unwrap()
    }

    fn statuses(report: &EditApplyReport) -> Vec<ApplyStatus> {
        report.entries.iter().map(|e| e.status).collect()
    }

    #[test]
    fn empty_skill_hashes_to_empty_digest() {
        assert_eq!(
            hash_skill(&SkillDocument::empty()),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn one_byte_change_changes_hash() {
        // digests computed with `printf '...' | sha256sum`
        let a = SkillDocument::from_body("Rule A").unwrap();
        let b = SkillDocument::from_body("Rule A ").unwrap();
        assert_eq!(
            a.hash(),
            "2c9da14f2d3fa378f821e74239f45b37164ef723b544fb89d42890d9fbc2a8ff"
        );
        assert_eq!(
            b.hash(),
            "1e8961f31250489a857c718a753f421bb0da937997e76cad5e803798d90e44ec"
        );
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn append_to_empty_body() {
        let (doc, report) =
            apply_edits(&SkillDocument::empty(), &[EditOp::append("Rule A")], 4).unwrap();
        assert_eq!(doc.serialize(), "Rule A");
        assert_eq!(statuses(&report), vec![ApplyStatus::Applied]);
    }

    #[test]
    fn missing_target_is_skipped() {
        let doc = SkillDocument::from_body("X\nY").unwrap();
        let (out, report) = apply_edits(&doc, &[EditOp::replace("Z", "W")], 4).unwrap();
        assert_eq!(out, doc);
        assert_eq!(statuses(&report), vec![ApplyStatus::SkippedTargetNotFound]);
    }

    #[test]
    fn protected_target_is_skipped() {
        let doc = with_region("Intro", "G");
        let (out, report) = apply_edits(&doc, &[EditOp::delete("G")], 4).unwrap();
        assert_eq!(out, doc);
        assert_eq!(statuses(&report), vec![ApplyStatus::SkippedProtected]);
    }

    #[test]
    fn target_inside_marker_text_is_protected() {
        let doc = with_region("Intro", "G");
        let (_, report) = apply_edits(&doc, &[EditOp::replace("SLOW_UPDATE", "x")], 4).unwrap();
        assert_eq!(statuses(&report), vec![ApplyStatus::SkippedProtected]);
        let (_, report) = apply_edits(&doc, &[EditOp::append(SLOW_UPDATE_END)], 4).unwrap();
        assert_eq!(statuses(&report), vec![ApplyStatus::SkippedProtected]);
    }

    #[test]
    fn budget_clips_remaining_edits() {
        let doc = SkillDocument::from_body("A").unwrap();
        let edits = [EditOp::append("B"), EditOp::append("C"), EditOp::append("D")];
        let (out, report) = apply_edits(&doc, &edits, 2).unwrap();
        assert_eq!(out.serialize(), "A\n\nB\n\nC");
        assert_eq!(
            statuses(&report),
            vec![ApplyStatus::Applied, ApplyStatus::Applied, ApplyStatus::SkippedBudget]
        );
        assert_eq!(report.applied_count(), 2);
    }

    #[test]
    fn append_respects_existing_trailing_newlines() {
        let doc = SkillDocument::from_body("A\n").unwrap();
        let (out, _) = apply_edits(&doc, &[EditOp::append("B")], 1).unwrap();
        assert_eq!(out.serialize(), "A\n\nB");
        let doc = SkillDocument::from_body("A\n\n").unwrap();
        let (out, _) = apply_edits(&doc, &[EditOp::append("B")], 1).unwrap();
        assert_eq!(out.serialize(), "A\n\nB");
    }

    #[test]
    fn insert_replace_delete_first_occurrence() {
        let doc = SkillDocument::from_body("# H\nfoo foo\nbar").unwrap();
        let (out, _) = apply_edits(&doc, &[EditOp::insert_after("# H", "- new")], 1).unwrap();
        assert_eq!(out.serialize(), "# H\n\n- new\n\nfoo foo\nbar");
        let (out, _) = apply_edits(&doc, &[EditOp::replace("foo", "baz")], 1).unwrap();
        assert_eq!(out.serialize(), "# H\nbaz foo\nbar");
        let (out, _) = apply_edits(&doc, &[EditOp::delete("foo ")], 1).unwrap();
        assert_eq!(out.serialize(), "# H\nfoo\nbar");
    }

    #[test]
    fn overlapping_edit_is_a_conflict() {
        let doc = SkillDocument::from_body("alpha beta gamma").unwrap();
        let edits = [
            EditOp::replace("beta", "BETA"),
            EditOp::replace("BETA gam", "x"),
            EditOp::replace("gamma", "G"),
        ];
        let (out, report) = apply_edits(&doc, &edits, 4).unwrap();
        assert_eq!(
            statuses(&report),
            vec![ApplyStatus::Applied, ApplyStatus::SkippedConflict, ApplyStatus::Applied]
        );
        assert_eq!(out.serialize(), "alpha BETA G");
    }

    #[test]
    fn straddling_a_deletion_point_conflicts() {
        let doc = SkillDocument::from_body("ab-cd").unwrap();
        let edits = [EditOp::delete("-"), EditOp::replace("bc", "X"), EditOp::replace("cd", "Y")];
        let (out, report) = apply_edits(&doc, &edits, 4).unwrap();
        assert_eq!(
            statuses(&report),
            vec![ApplyStatus::Applied, ApplyStatus::SkippedConflict, ApplyStatus::Applied]
        );
        assert_eq!(out.serialize(), "abY");
    }

    #[test]
    fn malformed_edit_names_index() {
        let bad = EditOp {
            op: OpKind::Delete,
            target: Some("x".into()),
            content: Some("y".into()),
            support_count: 1,
            source_type: None,
        };
        let err = apply_edits(&SkillDocument::empty(), &[EditOp::append("ok"), bad], 4).unwrap_err();
        assert!(matches!(err, SkillDocError::MalformedEdit { index: 1, .. }));
        assert_eq!(
            apply_edits(&SkillDocument::empty(), &[], 0).unwrap_err(),
            SkillDocError::ZeroBudget
        );
    }

    #[test]
    fn set_protected_creates_then_overwrites() {
        let doc = SkillDocument::from_body("Body").unwrap();
        let g1 = doc.set_protected("G1").unwrap();
        let expected = format!("{SLOW_UPDATE_START}G1{SLOW_UPDATE_END}");
        assert!(g1.serialize().ends_with(&expected));
        assert_eq!(g1.serialize(), format!("Body\n\n{expected}"));
        let g2 = g1.set_protected("G2").unwrap();
        assert_eq!(g2.protected(), Some("G2"));
        assert_eq!(g2.body(), g1.body());
        assert_eq!(
            doc.set_protected(SLOW_UPDATE_END).unwrap_err(),
            SkillDocError::MarkerInGuidance
        );
    }

    #[test]
    fn set_protected_then_delete_keeps_region() {
        let doc = with_region("Body", "G2");
        let (out, report) = apply_edits(&doc, &[EditOp::delete("G2")], 4).unwrap();
        assert_eq!(out.protected(), Some("G2"));
        assert_eq!(report.entries[0].status, ApplyStatus::SkippedProtected);
    }

    #[test]
    fn region_keeps_position_when_set() {
        let text = format!("Head\n{SLOW_UPDATE_START}old{SLOW_UPDATE_END}\nTail");
        let doc = SkillDocument::parse(&text).unwrap();
        let out = doc.set_protected("new").unwrap();
        assert_eq!(
            out.serialize(),
            format!("Head\n{SLOW_UPDATE_START}new{SLOW_UPDATE_END}\nTail")
        );
        assert_eq!(out.body(), "Head\n\nTail");
    }

    #[test]
    fn parse_rejects_bad_markers() {
        let start_only = format!("x{SLOW_UPDATE_START}y");
        assert!(matches!(
            SkillDocument::parse(&start_only),
            Err(SkillDocError::Markers { offset: 1, .. })
        ));
        let two = format!(
            "{SLOW_UPDATE_START}a{SLOW_UPDATE_END}{SLOW_UPDATE_START}b{SLOW_UPDATE_END}"
        );
        assert!(SkillDocument::parse(&two).is_err());
        let reversed = format!("{SLOW_UPDATE_END}{SLOW_UPDATE_START}");
        assert!(SkillDocument::parse(&reversed).is_err());
        assert!(SkillDocument::parse_bytes(&[0xff, 0xfe]).is_err());
    }

    #[test]
    fn round_trip_with_and_without_region() {
        for doc in [SkillDocument::from_body("# Skill\n- rule").unwrap(), with_region("# Skill", "keep")] {
            assert_eq!(SkillDocument::parse_bytes(&doc.to_bytes()).unwrap(), doc);
        }
    }

    #[test]
    fn report_json_shape() {
        let (_, report) = apply_edits(&SkillDocument::empty(), &[EditOp::append("x")], 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(v["skill_hash_before"].is_string());
        assert!(v["skill_hash_after"].is_string());
        assert_eq!(v["entries"][0]["edit_index"], 0);
        assert_eq!(v["entries"][0]["op"], "append");
        assert_eq!(v["entries"][0]["status"], "applied");
        assert!(v["entries"][0]["detail"].is_string());
    }
}
