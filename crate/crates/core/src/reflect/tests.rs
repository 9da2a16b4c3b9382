use std::sync::Arc;

use serde_json::json;

use super::*;
use crate::backend::{ScriptEntry, ScriptedBackend, UsageLedger};

fn traj(id: &str, success: bool) -> Trajectory {
    Trajectory::new(id, "trace".into(), "a".into(), if success { 1.0 } else { 0.0 }, 1.0)
}

fn reflector(entries: Vec<ScriptEntry>) -> (Reflector, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(entries));
    let client = Client::new(backend.clone(), Arc::new(UsageLedger::default()), "opt");
    (Reflector::new(client, PromptSet::default(), ReflectSettings::default()), backend)
}

fn failure_origin() -> Origin {
    Origin { minibatch: 0, source_type: SourceType::Failure }
}

fn sizes(v: &[Vec<Trajectory>]) -> Vec<usize> {
    v.iter().map(Vec::len).collect()
}

#[test]
fn partition_chunk_sizes() {
    let mut ts: Vec<_> = (0..10).map(|i| traj(&format!("f{i}"), false)).collect();
    ts.extend((0..6).map(|i| traj(&format!("s{i}"), true)));
    let (f, s) = partition(&ts, 8);
    assert_eq!((sizes(&f), sizes(&s)), (vec![8, 2], vec![6]));
    let (f, s) = partition(&ts[10..], 8);
    assert!(f.is_empty());
    assert_eq!(s.len(), 1);
    let (f, s) = partition(&ts, 1);
    assert_eq!(f.len() + s.len(), 16);
}

#[test]
fn empty_patch_is_empty_proposal() {
    let (r, _) = reflector(vec![ScriptEntry::new(r#"{"patch":{"edits":[]}}"#)]);
    let p = r.analyze_minibatch(failure_origin(), &SkillDocument::empty(), &[traj("a", false)], 4, "", "");
    assert!(p.edits.is_empty());
    assert!(p.dropped.is_empty());
}

#[test]
fn one_append_edit_tagged_failure() {
    let body = json!({
        "batch_size": 1,
        "failure_summary": [{"failure_type": "format", "count": 2, "description": "missing units"}],
        "patch": {"reasoning": "r", "edits": [{"op": "append", "content": "- always give units"}]}
    });
    let (r, _) = reflector(vec![ScriptEntry::new(body.to_string())]);
    let p = r.analyze_minibatch(failure_origin(), &SkillDocument::empty(), &[traj("a", false)], 4, "", "");
    assert_eq!(p.edits, vec![EditOp::append("- always give units").with_source(SourceType::Failure)]);
    assert_eq!(p.origin.source_type, SourceType::Failure);
    assert_eq!(p.reasoning, "r");
    assert_eq!(p.failure_patterns, vec!["format (x2): missing units".to_owned()]);
}

#[test]
fn unknown_op_rejected_others_kept() {
    let body = json!({"patch": {"edits": [
        {"op": "rewrite", "content": "x"},
        {"op": "delete", "target": "old", "content": ""},
        {"op": "replace", "target": "a"}
    ]}});
    let (r, _) = reflector(vec![ScriptEntry::new(body.to_string())]);
    let p = r.analyze_minibatch(failure_origin(), &SkillDocument::empty(), &[traj("a", false)], 4, "", "");
    assert_eq!(p.edits.len(), 1);
    assert_eq!(p.edits[0].op, crate::skilldoc::OpKind::Delete);
    assert_eq!(p.dropped.iter().map(|d| d.index).collect::<Vec<_>>(), vec![0, 2]);
}

#[test]
fn protected_edits_dropped_at_proposal_time() {
    let skill = SkillDocument::from_body("body").unwrap().set_protected("keep me").unwrap();
    let body = json!({"patch": {"edits": [
        {"op": "replace", "target": "keep me", "content": "gone"},
        {"op": "append", "content": "fine"}
    ]}});
    let (r, _) = reflector(vec![ScriptEntry::new(body.to_string())]);
    let p = r.analyze_minibatch(failure_origin(), &skill, &[traj("a", false)], 4, "", "");
    assert_eq!(p.edits.len(), 1);
    assert_eq!(p.dropped[0].reason, "targets the protected region");
}

#[test]
fn malformed_output_gives_empty_proposal() {
    let (r, backend) = reflector(vec![ScriptEntry::new("nope"), ScriptEntry::new("still"), ScriptEntry::new("no")]);
    let p = r.analyze_minibatch(failure_origin(), &SkillDocument::empty(), &[traj("a", false)], 4, "", "");
    assert!(p.edits.is_empty());
    assert_eq!(backend.remaining(), 0);
}

fn proposal(i: usize, content: &str) -> EditProposal {
    EditProposal {
        reasoning: String::new(),
        edits: vec![EditOp::append(content).with_source(SourceType::Failure)],
        origin: Origin { minibatch: i, source_type: SourceType::Failure },
        failure_patterns: vec![],
        dropped: vec![],
    }
}

#[test]
fn single_input_merges_without_call() {
    let (r, backend) = reflector(vec![]);
    let (out, calls) = r.merge_side(MergeStage::Failure, &SkillDocument::empty(), "", vec![proposal(0, "x")]);
    assert_eq!(out.unwrap(), proposal(0, "x"));
    assert_eq!(calls, 0);
    assert_eq!(backend.remaining(), 0);
}

#[test]
fn nine_proposals_take_two_rounds() {
    let merged = |c: &str| ScriptEntry::new(json!({"edits": [{"op": "append", "content": c, "support_count": 3}]}).to_string());
    let (r, backend) = reflector(vec![merged("round1"), merged("round2")]);
    let inputs: Vec<_> = (0..9).map(|i| proposal(i, &format!("p{i}"))).collect();
    let (out, calls) = r.merge_side(MergeStage::Failure, &SkillDocument::empty(), "", inputs);
    assert_eq!(calls, 2);
    assert_eq!(backend.remaining(), 0);
    let out = out.unwrap();
    assert_eq!(out.edits[0].content.as_deref(), Some("round2"));
    assert_eq!(out.edits[0].support_count, 3);
    assert_eq!(out.edits[0].source_type, Some(SourceType::Failure));
}

#[test]
fn merge_fallback_concatenates_in_origin_order() {
    let (r, _) = reflector(vec![]);
    let inputs: Vec<_> = (0..3).map(|i| proposal(i, &format!("p{i}"))).collect();
    let (out, calls) = r.merge_side(MergeStage::Failure, &SkillDocument::empty(), "", inputs);
    assert_eq!(calls, 1);
    let contents: Vec<_> = out.unwrap().edits.into_iter().map(|e| e.content.unwrap()).collect();
    assert_eq!(contents, ["p0", "p1", "p2"]);
}

#[test]
fn one_sided_final_merge_passes_through() {
    let (r, backend) = reflector(vec![]);
    let (out, calls) = r.merge_final(&SkillDocument::empty(), "", Some(proposal(0, "f")), None);
    assert_eq!(out.unwrap(), proposal(0, "f"));
    assert_eq!((calls, backend.remaining()), (0, 0));
    assert_eq!(r.merge_final(&SkillDocument::empty(), "", None, None).0, None);
}

fn pool(n: usize) -> Vec<EditOp> {
    (0..n).map(|i| EditOp::append(format!("e{i}"))).collect()
}

fn ranked(selection: &str, pool: &[EditOp], budget: usize) -> Ranked {
    let (r, _) = reflector(vec![ScriptEntry::new(format!(r#"{{"reasoning":"","selected_indices":{selection}}}"#))]);
    r.rank_and_clip(&SkillDocument::empty(), "", pool, budget)
}

#[test]
fn ranking_full_selection_reorders() {
    let p = pool(2);
    let out = ranked("[1,0]", &p, 4);
    assert_eq!(out.edits, vec![p[1].clone(), p[0].clone()]);
    assert!(!out.used_fallback);
}

#[test]
fn ranking_clips_to_budget() {
    let p = pool(6);
    assert_eq!(ranked("[5,0,3]", &p, 2).edits, vec![p[5].clone(), p[0].clone()]);
}

#[test]
fn ranking_bad_indices_fall_back_to_support() {
    let p = vec![
        EditOp::append("low").with_support(1).with_source(SourceType::Failure),
        EditOp::append("succ").with_support(4).with_source(SourceType::Success),
        EditOp::append("fail").with_support(4).with_source(SourceType::Failure),
    ];
    let out = ranked("[9]", &p, 4);
    assert!(out.used_fallback);
    assert_eq!(out.edits, vec![p[2].clone(), p[1].clone(), p[0].clone()]);
    // duplicates and out-of-range entries are dropped but valid ones kept
    assert_eq!(ranked("[2,2,7,0]", &p, 4).edits, vec![p[2].clone(), p[0].clone()]);
}

#[test]
fn backward_end_to_end() {
    let analyst = json!({"patch": {"edits": [{"op": "append", "content": "rule"}]}}).to_string();
    let entries = vec![
        ScriptEntry::new(analyst.clone()).with_match("needle absent from every prompt"),
        ScriptEntry::new(analyst.clone()),
        ScriptEntry::new(analyst.clone()),
        ScriptEntry::new(json!({"patch": {"edits": []}}).to_string()),
        ScriptEntry::new(json!({"edits": [{"op": "append", "content": "rule", "support_count": 2, "source_type": "failure"}]}).to_string()),
        ScriptEntry::new(json!({"selected_indices": [0]}).to_string()),
    ];
    // first entry can never match; it is left over
    let (r, backend) = reflector(entries);
    let mut slice: Vec<_> = (0..9).map(|i| traj(&format!("f{i}"), false)).collect();
    slice.push(traj("s", true));
    let out = r.backward(&SkillDocument::empty(), &[slice], 8, 2, "", "");
    assert_eq!(out.proposals.len(), 3);
    // 3 analyst calls, 1 failure merge, no success merge, no final merge, 1 ranking
    assert_eq!(out.model_calls, 5);
    assert_eq!(out.selected.len(), 1);
    assert_eq!(out.selected[0].support_count, 2);
    assert_eq!(backend.remaining(), 1);
}

#[test]
fn meta_and_slow_update_parse_their_fields() {
    let (r, _) = reflector(vec![
        ScriptEntry::new(r#"{"reasoning":"","slow_update_content":"When X, do Y."}"#),
        ScriptEntry::new(r#"{"reasoning":"","meta_skill_content":"prefer small edits"}"#),
        ScriptEntry::new("garbage"),
    ]);
    let s = SkillDocument::empty();
    let cmp = Comparison::default();
    assert_eq!(r.slow_update(&s, &s, &cmp, None).as_deref(), Some("When X, do Y."));
    assert_eq!(r.meta_update(&s, &s, &cmp, "").as_deref(), Some("prefer small edits"));
    assert_eq!(r.meta_update(&s, &s, &cmp, "old"), None);
}
