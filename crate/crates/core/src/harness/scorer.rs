use serde::{Deserialize, Serialize};

/// Maps (final answer, reference) to a score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Byte equality after trimming surrounding whitespace.
    #[default]
    ExactMatch,
    /// Case-insensitive, whitespace-collapsed equality.
    Normalized,
    /// Reference appears in the answer (case-insensitive).
    Contains,
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Scorer {
    pub fn score(&self, answer: &str, reference: &str) -> f64 {
        let hit = match self {
            Scorer::ExactMatch => answer.trim() == reference.trim(),
            Scorer::Normalized => normalize(answer) == normalize(reference),
            Scorer::Contains => normalize(answer).contains(&normalize(reference)),
        };
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scorers() {
        assert_eq!(Scorer::ExactMatch.score(" Paris\n", "Paris"), 1.0);
        assert_eq!(Scorer::ExactMatch.score("paris", "Paris"), 0.0);
        assert_eq!(Scorer::Normalized.score("New   york", "new York"), 1.0);
        assert_eq!(Scorer::Contains.score("It is Paris.", "paris"), 1.0);
        assert_eq!(Scorer::Contains.score("Lyon", "paris"), 0.0);
    }
}
