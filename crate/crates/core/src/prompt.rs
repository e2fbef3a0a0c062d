//! Plain-text prompt layout used for every generation call.
//!
//! ```text
//! @task extract_entities
//! @title Ammonia synthesis
//! @part 2
//! ---
//! free-form body
//! ```
//!
//! Header lines start with `@`, carry a key and a single-line value, and end at
//! the first `---` line. Everything after is the body. The task tag lets a
//! provider (and the mock in particular) recognise what is being asked.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    task: String,
    fields: Vec<(String, String)>,
    body: String,
}

const BODY_MARKER: &str = "---";

impl Prompt {
    pub fn new(task: &str) -> Self {
        Prompt {
            task: task.to_string(),
            fields: Vec::new(),
            body: String::new(),
        }
    }

    /// Adds a header field. Newlines in `value` are folded to spaces.
    pub fn field(mut self, key: &str, value: impl AsRef<str>) -> Self {
        let value = value.as_ref().replace(['\r', '\n'], " ");
        self.fields.push((key.to_string(), value));
        self
    }

    pub fn body(mut self, body: impl Into<String>) -> Self {
        self.body = body.into();
        self
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.fields
            .iter()
            .filter(move |(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn body_text(&self) -> &str {
        &self.body
    }

    pub fn render(&self) -> String {
        let mut out = format!("@task {}\n", self.task);
        for (k, v) in &self.fields {
            out.push('@');
            out.push_str(k);
            out.push(' ');
            out.push_str(v);
            out.push('\n');
        }
        out.push_str(BODY_MARKER);
        out.push('\n');
        out.push_str(&self.body);
        out
    }

    /// Parses a rendered prompt. Text without an `@task` header is treated as
    /// a body-only prompt with task `generic`.
    pub fn parse(text: &str) -> Prompt {
        let mut prompt = Prompt::new("generic");
        let mut lines = text.split_inclusive('\n');
        let mut consumed = 0;
        let mut saw_header = false;
        for line in lines.by_ref() {
            let trimmed = line.trim_end_matches(['\n', '\r']);
            if trimmed == BODY_MARKER && saw_header {
                consumed += line.len();
                break;
            }
            let Some(rest) = trimmed.strip_prefix('@') else {
                break;
            };
            let (key, value) = rest.split_once(' ').unwrap_or((rest, ""));
            if key == "task" {
                prompt.task = value.to_string();
            } else {
                prompt.fields.push((key.to_string(), value.to_string()));
            }
            saw_header = true;
            consumed += line.len();
        }
        if !saw_header {
            consumed = 0;
        }
        prompt.body = text[consumed..].to_string();
        prompt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let p = Prompt::new("contextualize")
            .field("title", "Ammonia\nsynthesis")
            .field("part", "3")
            .body("line one\n@not a header\n---\nline four");
        let back = Prompt::parse(&p.render());
        assert_eq!(back.task(), "contextualize");
        assert_eq!(back.get("title"), Some("Ammonia synthesis"));
        assert_eq!(back.get("part"), Some("3"));
        assert_eq!(back.body_text(), "line one\n@not a header\n---\nline four");
    }

    #[test]
    fn bare_text_is_generic_body() {
        let back = Prompt::parse("just a question?");
        assert_eq!(back.task(), "generic");
        assert_eq!(back.body_text(), "just a question?");
    }

    #[test]
    fn repeated_fields_are_kept_in_order() {
        let p = Prompt::new("t").field("entity", "a").field("entity", "b");
        let back = Prompt::parse(&p.render());
        assert_eq!(back.get_all("entity").collect::<Vec<_>>(), ["a", "b"]);
    }
}
