//! Parsing helpers for markdown-sectioned completions.

/// Body of the last `### <heading>` section: the lines after that heading up
/// to the next line starting with `### `, trimmed. A trailing colon on the
/// heading line is accepted.
pub fn section(text: &str, heading: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines.iter().rposition(|l| is_heading(l, heading))?;
    let body: Vec<&str> = lines[start + 1..]
        .iter()
        .take_while(|l| !l.starts_with("### "))
        .copied()
        .collect();
    Some(body.join("\n").trim().to_string())
}

fn is_heading(line: &str, heading: &str) -> bool {
    line.strip_prefix("### ")
        .map(|rest| rest.trim().trim_end_matches(':').trim() == heading)
        .unwrap_or(false)
}

/// Drop a leading `## ` marker, as used for single-value answer lines.
pub fn strip_marker(text: &str) -> &str {
    let t = text.trim();
    t.strip_prefix("##").map(str::trim_start).unwrap_or(t)
}

/// Parse `[a, b, "c"]` into trimmed, unquoted items. JSON string arrays are
/// taken verbatim; anything else is split on commas.
pub fn bracket_list(text: &str) -> Option<Vec<String>> {
    let open = text.find('[')?;
    let close = text.rfind(']')?;
    if close < open {
        return None;
    }
    let inner = &text[open..=close];
    if let Ok(items) = serde_json::from_str::<Vec<String>>(inner) {
        return Some(clean_items(items));
    }
    let body = &inner[1..inner.len() - 1];
    Some(clean_items(body.split(',').map(str::to_string)))
}

fn clean_items(items: impl IntoIterator<Item = String>) -> Vec<String> {
    items
        .into_iter()
        .map(|s| {
            s.trim()
                .trim_matches(|c| c == '"' || c == '\'' || c == '`')
                .trim()
                .to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Sentences split on `.`, `!` or `?` followed by whitespace.
pub fn sentence_count(text: &str) -> usize {
    let t = text.trim();
    if t.is_empty() {
        return 0;
    }
    let chars: Vec<char> = t.chars().collect();
    let mut n = 1;
    for w in chars.windows(2) {
        if matches!(w[0], '.' | '!' | '?') && w[1].is_whitespace() {
            n += 1;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_heading_wins() {
        let t = "### Subgoal\n[format]\n### Reasoning\nx\n### Subgoal\nLocate the search bar\n";
        assert_eq!(section(t, "Subgoal").unwrap(), "Locate the search bar");
    }

    #[test]
    fn multi_line_body_and_terminator() {
        let t = "### State\nline one\n## not a terminator\nline two\n### Next\nz";
        assert_eq!(
            section(t, "State").unwrap(),
            "line one\n## not a terminator\nline two"
        );
        assert!(section("no heading here", "State").is_none());
        assert_eq!(section("### Score:\n 7 ", "Score").unwrap(), "7");
    }

    #[test]
    fn bracket_lists() {
        assert_eq!(
            bracket_list("**Tags:** [Tam Sventon, fictional private detective, Stockholm]")
                .unwrap(),
            vec!["Tam Sventon", "fictional private detective", "Stockholm"]
        );
        assert_eq!(
            bracket_list(r#"**Tags:** ["Jim Croce", "birth year"]"#).unwrap(),
            vec!["Jim Croce", "birth year"]
        );
        assert_eq!(bracket_list("[]").unwrap(), Vec::<String>::new());
        assert!(bracket_list("none").is_none());
    }

    #[test]
    fn sentences() {
        assert_eq!(sentence_count("A b. C d! E? F"), 4);
        assert_eq!(sentence_count("Version 2.0 is out."), 1);
        assert_eq!(sentence_count(""), 0);
    }
}
