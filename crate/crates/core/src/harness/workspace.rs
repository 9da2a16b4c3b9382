use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wait_timeout::ChildExt;

use crate::backend::Phase;
use crate::dataset::Task;
use crate::skilldoc::SkillDocument;

use super::{tail_truncate, Harness, HarnessError, Scorer, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    /// argv template; `{workdir}`, `{skill_path}` and `{task_id}` are substituted.
    pub command: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_answer_file")]
    pub answer_file: String,
    #[serde(default = "default_trace_file")]
    pub trace_file: String,
    #[serde(default = "default_trace_cap")]
    pub trace_cap_bytes: usize,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub scorer: Scorer,
}

fn default_timeout() -> u64 {
    600
}

fn default_answer_file() -> String {
    "answer.txt".into()
}

fn default_trace_file() -> String {
    "trace_summary.txt".into()
}

fn default_trace_cap() -> usize {
    32 * 1024
}

impl WorkspaceConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            timeout_secs: default_timeout(),
            answer_file: default_answer_file(),
            trace_file: default_trace_file(),
            trace_cap_bytes: default_trace_cap(),
            env: BTreeMap::new(),
            scorer: Scorer::default(),
        }
    }
}

/// Runs an external agent command in a fresh per-task directory containing
/// `SKILL.md` and the task files, then scores the answer file it leaves.
pub struct WorkspaceCliHarness {
    config: WorkspaceConfig,
    root: PathBuf,
    success_threshold: f64,
    counter: AtomicU64,
}

impl WorkspaceCliHarness {
    pub fn new(config: WorkspaceConfig, root: PathBuf, success_threshold: f64) -> Result<Self, HarnessError> {
        if config.command.is_empty() || config.command[0].trim().is_empty() {
            return Err(HarnessError::Config("workspace_cli requires a non-empty command".into()));
        }
        if config.answer_file.is_empty() {
            return Err(HarnessError::Config("workspace_cli requires an answer file name".into()));
        }
        fs::create_dir_all(&root)
            .map_err(|e| HarnessError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            config,
            root,
            success_threshold,
            counter: AtomicU64::new(0),
        })
    }

    fn fresh_dir(&self, task_id: &str) -> std::io::Result<PathBuf> {
        let safe: String = task_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        loop {
            let n = self.counter.fetch_add(1, Ordering::SeqCst);
            let dir = self.root.join(format!("{n:06}-{safe}"));
            if !dir.exists() {
                fs::create_dir_all(&dir)?;
                return Ok(dir);
            }
        }
    }

    fn write_task_files(dir: &Path, task: &Task, skill: &SkillDocument) -> Result<PathBuf, String> {
        let skill_path = dir.join("SKILL.md");
        fs::write(&skill_path, skill.serialize()).map_err(|e| e.to_string())?;
        fs::write(dir.join("TASK.md"), task.prompt()).map_err(|e| e.to_string())?;
        fs::write(dir.join("task.json"), task.payload.to_string()).map_err(|e| e.to_string())?;
        if let Some(Value::Object(files)) = task.payload.get("files") {
            for (rel, content) in files {
                let rel_path = Path::new(rel);
                if rel_path.components().any(|c| !matches!(c, Component::Normal(_))) {
                    return Err(format!("task file path {rel:?} escapes the workspace"));
                }
                let path = dir.join(rel_path);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(|e| e.to_string())?;
                }
                let bytes = match content {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                fs::write(&path, bytes).map_err(|e| e.to_string())?;
            }
        }
        Ok(skill_path)
    }

    fn argv(&self, dir: &Path, skill_path: &Path, task_id: &str) -> Vec<String> {
        self.config
            .command
            .iter()
            .map(|arg| {
                arg.replace("{workdir}", &dir.display().to_string())
                    .replace("{skill_path}", &skill_path.display().to_string())
                    .replace("{task_id}", task_id)
            })
            .collect()
    }

    fn execute(&self, task: &Task, skill: &SkillDocument) -> Result<Trajectory, String> {
        let dir = self.fresh_dir(&task.task_id).map_err(|e| e.to_string())?;
        let skill_path = Self::write_task_files(&dir, task, skill)?;
        let argv = self.argv(&dir, &skill_path, &task.task_id);
        let stdout_path = dir.join(".harness_stdout.txt");
        let stderr_path = dir.join(".harness_stderr.txt");
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .current_dir(&dir)
            .envs(&self.config.env)
            .stdin(Stdio::null())
            .stdout(File::create(&stdout_path).map_err(|e| e.to_string())?)
            .stderr(File::create(&stderr_path).map_err(|e| e.to_string())?)
            .spawn()
            .map_err(|e| format!("cannot start {:?}: {e}", argv[0]))?;
        let status = child
            .wait_timeout(Duration::from_secs(self.config.timeout_secs))
            .map_err(|e| e.to_string())?;
        let captured = || {
            let out = fs::read_to_string(&stdout_path).unwrap_or_default();
            let err = fs::read_to_string(&stderr_path).unwrap_or_default();
            tail_truncate(&format!("[stdout]\n{out}\n[stderr]\n{err}"), self.config.trace_cap_bytes)
        };
        let Some(status) = status else {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(Trajectory::fault(
                &task.task_id,
                format!("command timed out after {}s\n{}", self.config.timeout_secs, captured()),
                self.success_threshold,
            ));
        };
        if !status.success() {
            return Ok(Trajectory::fault(
                &task.task_id,
                format!("command exited with {status}\n{}", captured()),
                self.success_threshold,
            ));
        }
        let answer = fs::read_to_string(dir.join(&self.config.answer_file))
            .map(|s| s.trim().to_owned())
            .unwrap_or_default();
        let trace = match fs::read_to_string(dir.join(&self.config.trace_file)) {
            Ok(summary) => tail_truncate(&summary, self.config.trace_cap_bytes),
            Err(_) => captured(),
        };
        let score = self.config.scorer.score(&answer, &task.reference_text());
        Ok(Trajectory::new(&task.task_id, trace, answer, score, self.success_threshold))
    }
}

impl Harness for WorkspaceCliHarness {
    fn kind(&self) -> &'static str {
        "workspace_cli"
    }

    fn run_task(&self, task: &Task, skill: &SkillDocument, _phase: Phase) -> Trajectory {
        self.execute(task, skill)
            .unwrap_or_else(|e| Trajectory::fault(&task.task_id, e, self.success_threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sh(script: &str) -> WorkspaceConfig {
        WorkspaceConfig::new(vec!["sh".into(), "-c".into(), script.into()])
    }

    fn task() -> Task {
        Task {
            task_id: "t/1".into(),
            payload: json!({"prompt": "p", "files": {"data/in.txt": "42"}}),
            reference: json!("42"),
        }
    }

    #[test]
    fn reads_answer_and_trace_summary() {
        let root = tempfile::tempdir().unwrap();
        let cfg = sh("grep -q RULE SKILL.md && cat data/in.txt > answer.txt; echo 'ran grep then cat' > trace_summary.txt");
        let h = WorkspaceCliHarness::new(cfg, root.path().to_path_buf(), 1.0).unwrap();
        let t = h.run_task(&task(), &SkillDocument::from_body("RULE").unwrap(), Phase::Rollout);
        assert_eq!(t.final_answer, "42");
        assert_eq!(t.score, 1.0);
        assert_eq!(t.trace.trim(), "ran grep then cat");
        let t = h.run_task(&task(), &SkillDocument::empty(), Phase::Rollout);
        assert_eq!(t.score, 0.0);
        // per-task directories are retained
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 2);
    }

    #[test]
    fn nonzero_exit_is_a_fault_with_output() {
        let root = tempfile::tempdir().unwrap();
        let h = WorkspaceCliHarness::new(sh("echo boom; exit 3"), root.path().to_path_buf(), 1.0).unwrap();
        let t = h.run_task(&task(), &SkillDocument::empty(), Phase::Rollout);
        assert_eq!(t.score, 0.0);
        assert!(t.trace.contains("boom"));
    }

    #[test]
    fn timeout_is_a_fault() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = sh("sleep 5");
        cfg.timeout_secs = 0;
        let h = WorkspaceCliHarness::new(cfg, root.path().to_path_buf(), 1.0).unwrap();
        let t = h.run_task(&task(), &SkillDocument::empty(), Phase::Rollout);
        assert_eq!(t.score, 0.0);
        assert!(t.trace.contains("timed out"));
    }

    #[test]
    fn placeholders_and_escaping_paths() {
        let root = tempfile::tempdir().unwrap();
        let cfg = WorkspaceConfig::new(vec!["sh".into(), "-c".into(), "cp \"$0\" answer.txt".into(), "{skill_path}".into()]);
        let h = WorkspaceCliHarness::new(cfg, root.path().to_path_buf(), 1.0).unwrap();
        let mut t = task();
        t.reference = json!("SKILL BODY");
        assert_eq!(h.run_task(&t, &SkillDocument::from_body("SKILL BODY").unwrap(), Phase::Rollout).score, 1.0);
        t.payload = json!({"files": {"../evil": "x"}});
        let out = h.run_task(&t, &SkillDocument::empty(), Phase::Rollout);
        assert!(out.trace.contains("escapes"));
    }

    #[test]
    fn missing_command_is_config_error() {
        let root = tempfile::tempdir().unwrap();
        assert!(WorkspaceCliHarness::new(WorkspaceConfig::new(vec![]), root.path().to_path_buf(), 1.0).is_err());
    }
}
