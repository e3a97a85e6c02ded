//! Prompt templates.
//!
//! A template file holds one or more sections introduced by a `[system]` or
//! `[user]` header line; each section becomes one chat message. Placeholders
//! are written `{{name}}`. The defaults are compiled in and any of them can be
//! overridden by a file of the same name in a template directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::llm::{ChatMessage, ChatRole};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {name}: {message}")]
    Invalid { name: String, message: String },
    #[error("template {name}: no value for placeholder {{{{{placeholder}}}}}")]
    MissingValue { name: String, placeholder: String },
    #[error("failed to read template {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    name: String,
    sections: Vec<(ChatRole, String)>,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let invalid = |message: String| PromptError::Invalid {
            name: name.to_owned(),
            message,
        };
        let mut sections: Vec<(ChatRole, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            match line.trim_end() {
                "[system]" => sections.push((ChatRole::System, Vec::new())),
                "[user]" => sections.push((ChatRole::User, Vec::new())),
                _ => match sections.last_mut() {
                    Some((_, body)) => body.push(line),
                    None if line.trim().is_empty() => {}
                    None => return Err(invalid("text before the first [system]/[user] header".into())),
                },
            }
        }
        if sections.is_empty() {
            return Err(invalid("no [system] or [user] section".into()));
        }
        let template = Template {
            name: name.to_owned(),
            sections: sections
                .into_iter()
                .map(|(role, body)| (role, body.join("\n").trim().to_owned()))
                .collect(),
        };
        for (_, body) in &template.sections {
            if let Some(bad) = placeholder_names(body).find(|p| p.is_empty() || p.contains(char::is_whitespace)) {
                return Err(invalid(format!("malformed placeholder {{{{{bad}}}}}")));
            }
        }
        Ok(template)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.sections
            .iter()
            .flat_map(|(_, body)| placeholder_names(body).map(str::to_owned).collect::<Vec<_>>())
            .collect()
    }

    /// Substitutes every placeholder. Values are inserted verbatim and are
    /// not themselves scanned for placeholders.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<Vec<ChatMessage>, PromptError> {
        self.sections
            .iter()
            .map(|(role, body)| {
                let mut out = String::with_capacity(body.len());
                let mut rest = body.as_str();
                while let Some(start) = rest.find("{{") {
                    let Some(len) = rest[start + 2..].find("}}") else {
                        break;
                    };
                    let key = &rest[start + 2..start + 2 + len];
                    let value = vars
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::MissingValue {
                            name: self.name.clone(),
                            placeholder: key.to_owned(),
                        })?;
                    out.push_str(&rest[..start]);
                    out.push_str(value);
                    rest = &rest[start + 2 + len + 2..];
                }
                out.push_str(rest);
                Ok(ChatMessage {
                    role: *role,
                    content: out,
                })
            })
            .collect()
    }
}

fn placeholder_names(body: &str) -> impl Iterator<Item = &str> {
    let mut rest = body;
    std::iter::from_fn(move || {
        let start = rest.find("{{")?;
        let len = rest[start + 2..].find("}}")?;
        let key = &rest[start + 2..start + 2 + len];
        rest = &rest[start + 2 + len + 2..];
        Some(key)
    })
}

/// One template per agent role plus the NLI repair prompt and the shared
/// baseline ranker prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub user_understanding: Template,
    pub nli: Template,
    pub nli_repair: Template,
    pub context_summary: Template,
    pub item_ranker: Template,
    pub baseline_ranker: Template,
}

struct TemplateDef {
    file: &'static str,
    default: &'static str,
    placeholders: &'static [&'static str],
}

const TEMPLATE_DEFS: [TemplateDef; 6] = [
    TemplateDef {
        file: "user_understanding.txt",
        default: include_str!("../templates/user_understanding.txt"),
        placeholders: &["session", "long_term"],
    },
    TemplateDef {
        file: "nli.txt",
        default: include_str!("../templates/nli.txt"),
        placeholders: &["session", "long_term", "item_id", "item"],
    },
    TemplateDef {
        file: "nli_repair.txt",
        default: include_str!("../templates/nli_repair.txt"),
        placeholders: &["previous_reply"],
    },
    TemplateDef {
        file: "context_summary.txt",
        default: include_str!("../templates/context_summary.txt"),
        placeholders: &["user_summary", "items"],
    },
    TemplateDef {
        file: "item_ranker.txt",
        default: include_str!("../templates/item_ranker.txt"),
        placeholders: &["user_summary", "context_summary", "candidates"],
    },
    TemplateDef {
        file: "baseline_ranker.txt",
        default: include_str!("../templates/baseline_ranker.txt"),
        placeholders: &["history", "candidates"],
    },
];

impl PromptSet {
    /// Names of the template files and the placeholders each may use.
    pub fn catalogue() -> Vec<(&'static str, &'static [&'static str])> {
        TEMPLATE_DEFS.iter().map(|s| (s.file, s.placeholders)).collect()
    }

    /// Templates from `dir`, falling back to the built-in default for any
    /// file that is absent.
    pub fn load(dir: Option<&Path>) -> Result<Self, PromptError> {
        let mut loaded = Vec::with_capacity(TEMPLATE_DEFS.len());
        for def in &TEMPLATE_DEFS {
            let path = dir.map(|d| d.join(def.file)).filter(|p| p.exists());
            let text = match &path {
                Some(p) => fs::read_to_string(p).map_err(|source| PromptError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
                None => def.default.to_owned(),
            };
            let template = Template::parse(def.file, &text)?;
            let allowed: BTreeSet<String> = def.placeholders.iter().map(|s| s.to_string()).collect();
            if let Some(extra) = template.placeholders().difference(&allowed).next() {
                return Err(PromptError::Invalid {
                    name: def.file.to_owned(),
                    message: format!("unknown placeholder {{{{{extra}}}}}"),
                });
            }
            loaded.push(template);
        }
        let mut it = loaded.into_iter();
        let mut next = || it.next().expect("one template per definition");
        Ok(PromptSet {
            user_understanding: next(),
            nli: next(),
            nli_repair: next(),
            context_summary: next(),
            item_ranker: next(),
            baseline_ranker: next(),
        })
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::load(None).expect("built-in templates are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let set = PromptSet::default();
        assert_eq!(set.nli_repair.sections.len(), 1);
        assert_eq!(set.item_ranker.sections[0].0, ChatRole::System);
        assert!(set.item_ranker.placeholders().contains("context_summary"));
    }

    #[test]
    fn render_substitutes_once() {
        let t = Template::parse("t", "[user]\nhi {{name}}, {{name}}!").unwrap();
        let msgs = t.render(&[("name", "{{name}}")]).unwrap();
        assert_eq!(msgs[0].content, "hi {{name}}, {{name}}!");
        let msgs = t.render(&[("name", "Ada")]).unwrap();
        assert_eq!(msgs[0].content, "hi Ada, Ada!");
    }

    #[test]
    fn missing_value_is_error() {
        let t = Template::parse("t", "[user]\n{{a}} {{b}}").unwrap();
        assert!(matches!(
            t.render(&[("a", "x")]),
            Err(PromptError::MissingValue { placeholder, .. }) if placeholder == "b"
        ));
    }

    #[test]
    fn rejects_headerless_text() {
        assert!(Template::parse("t", "hello\n[user]\nx").is_err());
        assert!(Template::parse("t", "").is_err());
    }

    #[test]
    fn override_directory() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("nli.txt"), "[user]\n{{item}} for {{session}}").unwrap();
        let set = PromptSet::load(Some(dir.path())).unwrap();
        assert_eq!(set.nli.sections.len(), 1);
        assert_eq!(set.item_ranker, PromptSet::default().item_ranker);

        fs::write(dir.path().join("nli.txt"), "[user]\n{{bogus}}").unwrap();
        assert!(matches!(
            PromptSet::load(Some(dir.path())),
            Err(PromptError::Invalid { .. })
        ));
    }
}
