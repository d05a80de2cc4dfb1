//! Chat-format prompts and fine-tuning export.
//!
//! # Template syntax
//!
//! Template strings substitute `{name}` placeholders. `{{` and `}}` produce
//! literal braces; any other `{`/`}` use is an error. Placeholders by field:
//!
//! | field              | placeholders                                  |
//! |--------------------|-----------------------------------------------|
//! | `system_text`      | `{options}` (the 8 answer labels joined by `option_separator`) |
//! | `user_line_format` | `{question}`, `{answer}`, `{feature}`, `{item}` |
//! | `assistant_format` | `{label}`                                     |
//!
//! User lines are joined with `line_separator`. Missing codes render as their
//! meaning string (e.g. `keine Angabe`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survey::{Codebook, Respondent, ValueKind};
use crate::vote::VoteChoice;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    /// Item order for user lines; empty means codebook order of predictors.
    #[serde(default)]
    pub user_field_order: Vec<String>,
    pub user_line_format: String,
    #[serde(default = "default_line_separator")]
    pub line_separator: String,
    pub assistant_format: String,
    #[serde(default = "default_option_separator")]
    pub option_separator: String,
    /// Overrides the codebook's target labels in prompts and answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_labels: Option<BTreeMap<VoteChoice, String>>,
}

fn default_line_separator() -> String {
    "\n".to_string()
}

fn default_option_separator() -> String {
    ", ".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExample {
    pub system: String,
    pub user: String,
    pub assistant: Option<String>,
}

const GERMAN: &str = include_str!("../templates/german.toml");
const ENGLISH: &str = include_str!("../templates/english.toml");

/// Expands `{name}` placeholders using `lookup`.
pub fn fill(pattern: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(pattern.len());
    let mut chars = pattern.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => {
                            return Err(Error::Config(format!("unclosed placeholder in {pattern:?}")))
                        }
                    }
                }
                let value = lookup(&name).ok_or_else(|| {
                    Error::Config(format!("unknown placeholder {{{name}}} in {pattern:?}"))
                })?;
                out.push_str(&value);
            }
            '}' => return Err(Error::Config(format!("stray '}}' in {pattern:?}"))),
            c => out.push(c),
        }
    }
    Ok(out)
}

impl PromptTemplate {
    /// Built-in template in the survey's original language.
    pub fn german() -> Self {
        Self::from_toml_str(GERMAN).expect("built-in template parses")
    }

    pub fn english() -> Self {
        Self::from_toml_str(ENGLISH).expect("built-in template parses")
    }

    /// `german`, `english`, or a path to a TOML template file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "german" | "de" => Ok(Self::german()),
            "english" | "en" => Ok(Self::english()),
            path => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                Self::from_toml_str(&text)
            }
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let template: PromptTemplate =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // syntax check with dummy values
        template.render_line("q", "a", "f", "i")?;
        template.render_assistant("x")?;
        fill(&template.system_text, |n| (n == "options").then(String::new))?;
        Ok(template)
    }

    pub fn label<'a>(&'a self, codebook: &'a Codebook, vote: VoteChoice) -> &'a str {
        match &self.vote_labels {
            Some(labels) => labels.get(&vote).map(String::as_str).unwrap_or_else(|| codebook.vote_label(vote)),
            None => codebook.vote_label(vote),
        }
    }

    pub fn render_assistant(&self, label: &str) -> Result<String> {
        fill(&self.assistant_format, |n| (n == "label").then(|| label.to_string()))
    }

    fn render_line(&self, question: &str, answer: &str, feature: &str, item: &str) -> Result<String> {
        fill(&self.user_line_format, |n| match n {
            "question" => Some(question.to_string()),
            "answer" => Some(answer.to_string()),
            "feature" => Some(feature.to_string()),
            "item" => Some(item.to_string()),
            _ => None,
        })
    }

    pub fn system(&self, codebook: &Codebook) -> Result<String> {
        let options = VoteChoice::ALL
            .iter()
            .map(|&v| self.label(codebook, v))
            .collect::<Vec<_>>()
            .join(&self.option_separator);
        fill(&self.system_text, |n| (n == "options").then(|| options.clone()))
    }

    /// Items rendered into user text, in order.
    pub fn field_order(&self, codebook: &Codebook) -> Vec<String> {
        if self.user_field_order.is_empty() {
            codebook.predictor_items().map(|i| i.id.clone()).collect()
        } else {
            self.user_field_order.clone()
        }
    }

    /// The rendered text of an item's line that precedes its answer.
    pub fn line_prefix(&self, codebook: &Codebook, item_id: &str) -> Result<String> {
        let item = codebook
            .item(item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.to_string()))?;
        const MARK: &str = "\u{0}ANSWER\u{0}";
        let line = self.render_line(&item.question_text, MARK, &item.feature_name, &item.id)?;
        Ok(line.split(MARK).next().unwrap_or_default().to_string())
    }
}

/// Serializes one respondent into a chat example.
///
/// Items in `ablated` are omitted; an item in the field order that is neither
/// ablated nor in the codebook is an error.
pub fn render(
    respondent: &Respondent,
    codebook: &Codebook,
    template: &PromptTemplate,
    ablated: &BTreeSet<String>,
    include_answer: bool,
) -> Result<ChatExample> {
    let mut lines = Vec::new();
    for item_id in template.field_order(codebook) {
        if ablated.contains(&item_id) {
            continue;
        }
        let item = codebook
            .item(&item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.clone()))?;
        let value = respondent
            .answer(&item_id)
            .ok_or_else(|| Error::UnknownItem(item_id.clone()))?;
        let answer = match codebook.classify(&item_id, value) {
            Some(ValueKind::Answer(_)) => value,
            Some(ValueKind::Missing(i)) => codebook.missing_codes[i].meaning.as_str(),
            None => {
                return Err(Error::InvalidValue {
                    row: 0,
                    column: item_id.clone(),
                    value: value.to_string(),
                })
            }
        };
        lines.push(template.render_line(&item.question_text, answer, &item.feature_name, &item.id)?);
    }
    let assistant = if include_answer {
        let vote = respondent.vote.ok_or_else(|| {
            Error::InvalidArgument(format!("respondent {:?} has no vote to render", respondent.id))
        })?;
        Some(template.render_assistant(template.label(codebook, vote))?)
    } else {
        None
    };
    Ok(ChatExample {
        system: template.system(codebook)?,
        user: lines.join(&template.line_separator),
        assistant,
    })
}

#[derive(Serialize, Deserialize)]
struct Message<'a> {
    role: &'a str,
    content: std::borrow::Cow<'a, str>,
}

#[derive(Serialize, Deserialize)]
struct ChatLine<'a> {
    #[serde(borrow)]
    messages: Vec<Message<'a>>,
}

impl ChatExample {
    /// The `messages` array of the chat wire format.
    pub fn messages(&self) -> serde_json::Value {
        let mut messages = vec![
            serde_json::json!({"role": "system", "content": self.system}),
            serde_json::json!({"role": "user", "content": self.user}),
        ];
        if let Some(a) = &self.assistant {
            messages.push(serde_json::json!({"role": "assistant", "content": a}));
        }
        serde_json::Value::Array(messages)
    }

    pub fn to_json_line(&self) -> Result<String> {
        let mut messages = vec![
            Message {
                role: "system",
                content: self.system.as_str().into(),
            },
            Message {
                role: "user",
                content: self.user.as_str().into(),
            },
        ];
        if let Some(a) = &self.assistant {
            messages.push(Message {
                role: "assistant",
                content: a.as_str().into(),
            });
        }
        Ok(serde_json::to_string(&ChatLine { messages })?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let parsed: ChatLine = serde_json::from_str(line)?;
        let mut example = ChatExample {
            system: String::new(),
            user: String::new(),
            assistant: None,
        };
        for m in parsed.messages {
            match m.role {
                "system" => example.system = m.content.into_owned(),
                "user" => example.user = m.content.into_owned(),
                "assistant" => example.assistant = Some(m.content.into_owned()),
                other => return Err(Error::Config(format!("unexpected role {other:?}"))),
            }
        }
        Ok(example)
    }
}

/// Writes one `{"messages": [...]}` object per line and returns the count.
pub fn export_finetune_file(examples: &[ChatExample], out: &Path) -> Result<usize> {
    if let Some(index) = examples.iter().position(|e| e.assistant.is_none()) {
        return Err(Error::MissingAssistant { index });
    }
    let file = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut writer = BufWriter::new(file);
    for example in examples {
        writeln!(writer, "{}", example.to_json_line()?).map_err(|e| Error::io(out, e))?;
    }
    writer.flush().map_err(|e| Error::io(out, e))?;
    Ok(examples.len())
}

pub fn read_finetune_file(path: &Path) -> Result<Vec<ChatExample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(ChatExample::from_json_line(&line)?);
    }
    Ok(out)
}
