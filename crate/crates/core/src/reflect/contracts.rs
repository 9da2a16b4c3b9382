use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractName {
    AnalystError,
    AnalystSuccess,
    MergeFailure,
    MergeSuccess,
    MergeFinal,
    Ranking,
    SlowUpdate,
    MetaSkill,
    Rewrite,
}

impl ContractName {
    pub const ALL: [ContractName; 9] = [
        ContractName::AnalystError,
        ContractName::AnalystSuccess,
        ContractName::MergeFailure,
        ContractName::MergeSuccess,
        ContractName::MergeFinal,
        ContractName::Ranking,
        ContractName::SlowUpdate,
        ContractName::MetaSkill,
        ContractName::Rewrite,
    ];

    pub fn file_name(&self) -> &'static str {
        match self {
            ContractName::AnalystError => "analyst_error.md",
            ContractName::AnalystSuccess => "analyst_success.md",
            ContractName::MergeFailure => "merge_failure.md",
            ContractName::MergeSuccess => "merge_success.md",
            ContractName::MergeFinal => "merge_final.md",
            ContractName::Ranking => "ranking.md",
            ContractName::SlowUpdate => "slow_update.md",
            ContractName::MetaSkill => "meta_skill.md",
            ContractName::Rewrite => "rewrite.md",
        }
    }

    fn builtin(&self) -> &'static str {
        match self {
            ContractName::AnalystError => include_str!("../../prompts/analyst_error.md"),
            ContractName::AnalystSuccess => include_str!("../../prompts/analyst_success.md"),
            ContractName::MergeFailure => include_str!("../../prompts/merge_failure.md"),
            ContractName::MergeSuccess => include_str!("../../prompts/merge_success.md"),
            ContractName::MergeFinal => include_str!("../../prompts/merge_final.md"),
            ContractName::Ranking => include_str!("../../prompts/ranking.md"),
            ContractName::SlowUpdate => include_str!("../../prompts/slow_update.md"),
            ContractName::MetaSkill => include_str!("../../prompts/meta_skill.md"),
            ContractName::Rewrite => include_str!("../../prompts/rewrite.md"),
        }
    }
}

impl fmt::Display for ContractName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".md"))
    }
}

/// The optimizer prompt texts, built-in or overridden from a directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    texts: BTreeMap<ContractName, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            texts: ContractName::ALL
                .iter()
                .map(|c| (*c, c.builtin().to_owned()))
                .collect(),
        }
    }
}

impl PromptSet {
    /// Built-ins, replaced by any `<name>.md` present in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for name in ContractName::ALL {
            let path = dir.join(name.file_name());
            if path.exists() {
                set.texts.insert(name, std::fs::read_to_string(path)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: ContractName) -> &str {
        &self.texts[&name]
    }

    /// Which contract a system message carries, if any.
    pub fn identify(&self, system: &str) -> Option<ContractName> {
        self.texts
            .iter()
            .find(|(_, text)| system == text.as_str())
            .map(|(name, _)| *name)
    }

    pub fn write_all(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.texts {
            std::fs::write(dir.join(name.file_name()), text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_identify_themselves() {
        let set = PromptSet::default();
        for name in ContractName::ALL {
            assert_eq!(set.identify(set.get(name)), Some(name));
        }
        assert!(set.get(ContractName::Ranking).contains("selected_indices"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ranking.md"), "custom ranking").unwrap();
        let set = PromptSet::with_overrides(dir.path()).unwrap();
        assert_eq!(set.get(ContractName::Ranking), "custom ranking");
        assert_eq!(set.get(ContractName::MergeFinal), PromptSet::default().get(ContractName::MergeFinal));
    }
}
