use serde_json::Value;

fn strip_fences(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // drop an info string such as ```json
    let rest = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses model output as a single JSON object, tolerating surrounding
/// markdown code fences.
pub fn extract_json_object(text: &str) -> Result<Value, String> {
    let body = strip_fences(text);
    match serde_json::from_str::<Value>(body) {
        Ok(v @ Value::Object(_)) => Ok(v),
        Ok(_) => Err("expected a JSON object".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_fenced() {
        assert_eq!(extract_json_object(r#" {"a":1} "#).unwrap()["a"], 1);
        assert_eq!(extract_json_object("```json\n{\"a\":2}\n```").unwrap()["a"], 2);
        assert_eq!(extract_json_object("```\n{\"a\":3}```").unwrap()["a"], 3);
    }

    #[test]
    fn rejects_non_objects() {
        assert!(extract_json_object("[1,2]").is_err());
        assert!(extract_json_object("not json").is_err());
        assert!(extract_json_object("Here: {\"a\":1}").is_err());
    }
}
