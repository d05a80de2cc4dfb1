//! Codebook-driven categorical survey data.
//!
//! A [`Codebook`] declares the items (one feature per survey question), their
//! answer options, the typed missing codes and the target item. Data files are
//! delimited text with a header row of item ids. Missing codes are ordinary
//! values: they are kept verbatim and never imputed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::vote::{VoteChoice, N_CATEGORIES};

/// One survey question, mapped to one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    /// Question wording in the original survey language.
    pub question_text: String,
    pub feature_name: String,
    pub options: Vec<String>,
    /// Non-predictor items are loaded and filterable but never shown to an
    /// imputer (e.g. a fine-grained region column used only for sampling).
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub predictor: bool,
}

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingCode {
    pub code: String,
    pub meaning: String,
}

/// Classification of a single loaded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    /// Index into the item's options.
    Answer(usize),
    /// Index into the codebook's missing codes.
    Missing(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    #[serde(default = "default_id_column")]
    pub id_column: String,
    pub target_item: String,
    /// Target option label used in the data for each vote category. Target
    /// options without a mapping (e.g. "invalid vote", "don't know") are
    /// dropped at load time.
    pub vote_labels: BTreeMap<VoteChoice, String>,
    #[serde(default)]
    pub missing_codes: Vec<MissingCode>,
    pub items: Vec<Item>,
}

fn default_id_column() -> String {
    "id".to_string()
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

impl Codebook {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let codebook: Codebook =
            toml::from_str(text).map_err(|e| Error::Codebook(e.to_string()))?;
        codebook.normalized().validated()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("codebook is always TOML-serializable")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    fn normalized(mut self) -> Self {
        self.id_column = nfc(&self.id_column);
        self.target_item = nfc(&self.target_item);
        for label in self.vote_labels.values_mut() {
            *label = nfc(label);
        }
        for code in &mut self.missing_codes {
            code.code = nfc(&code.code);
            code.meaning = nfc(&code.meaning);
        }
        for item in &mut self.items {
            item.id = nfc(&item.id);
            item.question_text = nfc(&item.question_text);
            item.feature_name = nfc(&item.feature_name);
            for option in &mut item.options {
                *option = nfc(option);
            }
        }
        self
    }

    /// Checks the structural invariants and returns `self` unchanged.
    pub fn validated(self) -> Result<Self> {
        let mut ids = HashSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(Error::Codebook(format!("duplicate item id {:?}", item.id)));
            }
            if item.id == self.id_column {
                return Err(Error::Codebook(format!(
                    "item id {:?} collides with the id column",
                    item.id
                )));
            }
            if item.options.is_empty() {
                return Err(Error::Codebook(format!("item {:?} has no options", item.id)));
            }
            let mut seen = HashSet::new();
            for option in &item.options {
                if !seen.insert(option.as_str()) {
                    return Err(Error::Codebook(format!(
                        "item {:?} repeats option {option:?}",
                        item.id
                    )));
                }
            }
        }
        let mut codes = HashSet::new();
        for code in &self.missing_codes {
            if !codes.insert(code.code.as_str()) {
                return Err(Error::Codebook(format!("duplicate missing code {:?}", code.code)));
            }
            if let Some(item) = self.items.iter().find(|i| i.options.contains(&code.code)) {
                return Err(Error::Codebook(format!(
                    "missing code {:?} is also an option of item {:?}",
                    code.code, item.id
                )));
            }
        }
        let target = self
            .item(&self.target_item)
            .ok_or_else(|| Error::Codebook(format!("target item {:?} not among items", self.target_item)))?;
        if self.vote_labels.len() != N_CATEGORIES {
            let missing: Vec<_> = VoteChoice::ALL
                .iter()
                .filter(|v| !self.vote_labels.contains_key(v))
                .map(|v| v.label())
                .collect();
            return Err(Error::Codebook(format!("vote_labels lacks {missing:?}")));
        }
        let mut mapped = HashSet::new();
        for (vote, label) in &self.vote_labels {
            if !target.options.contains(label) {
                return Err(Error::Codebook(format!(
                    "vote label {label:?} for {vote} is not an option of target item {:?}",
                    target.id
                )));
            }
            if !mapped.insert(label.as_str()) {
                return Err(Error::Codebook(format!("vote label {label:?} mapped twice")));
            }
        }
        Ok(self)
    }

    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn target(&self) -> &Item {
        self.item(&self.target_item).expect("validated codebook has its target item")
    }

    /// Items shown to imputers, in codebook order.
    pub fn predictor_items(&self) -> impl Iterator<Item = &Item> + '_ {
        self.items
            .iter()
            .filter(move |i| i.predictor && i.id != self.target_item)
    }

    /// Items every respondent must answer (all items except the target).
    pub fn feature_items(&self) -> impl Iterator<Item = &Item> + '_ {
        self.items.iter().filter(move |i| i.id != self.target_item)
    }

    pub fn missing_code(&self, code: &str) -> Option<&MissingCode> {
        self.missing_codes.iter().find(|c| c.code == code)
    }

    pub fn vote_label(&self, vote: VoteChoice) -> &str {
        &self.vote_labels[&vote]
    }

    pub fn vote_for_label(&self, label: &str) -> Option<VoteChoice> {
        self.vote_labels
            .iter()
            .find(|(_, l)| l.as_str() == label)
            .map(|(v, _)| *v)
    }

    /// Total over loaded data: every value of a loaded respondent is either
    /// an answer option or a missing code.
    pub fn classify(&self, item_id: &str, value: &str) -> Option<ValueKind> {
        let item = self.item(item_id)?;
        if let Some(i) = item.options.iter().position(|o| o == value) {
            return Some(ValueKind::Answer(i));
        }
        self.missing_codes
            .iter()
            .position(|c| c.code == value)
            .map(ValueKind::Missing)
    }

    /// Copy of the codebook without the given items. The target is never removed.
    pub fn without_items(&self, removed: &BTreeSet<String>) -> Codebook {
        let mut out = self.clone();
        out.items
            .retain(|i| i.id == self.target_item || !removed.contains(&i.id));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: String,
    /// Item id to option label or missing code, for every non-target item.
    pub answers: BTreeMap<String, String>,
    /// Absent only for prediction-time records.
    pub vote: Option<VoteChoice>,
}

impl Respondent {
    pub fn answer(&self, item_id: &str) -> Option<&str> {
        self.answers.get(item_id).map(String::as_str)
    }
}

/// Rows removed while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    /// Target answered with an unmapped option, keyed by that option.
    pub unmapped_target: BTreeMap<String, usize>,
    /// Target carried a missing code.
    pub missing_target: usize,
}

impl DropCounts {
    pub fn total(&self) -> usize {
        self.missing_target + self.unmapped_target.values().sum::<usize>()
    }
}

/// Per-category respondent counts in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts(pub [usize; N_CATEGORIES]);

impl ClassCounts {
    pub fn get(&self, vote: VoteChoice) -> usize {
        self.0[vote.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoteChoice, usize)> + '_ {
        VoteChoice::ALL.into_iter().map(|v| (v, self.0[v.index()]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub codebook: Codebook,
    pub respondents: Vec<Respondent>,
    #[serde(default)]
    pub drops: DropCounts,
}

/// Options for reading delimited data files.
#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub delimiter: u8,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions { delimiter: b',' }
    }
}

/// Loads and validates a codebook plus a delimited data file.
pub fn load_dataset(codebook_path: &Path, data_path: &Path) -> Result<Dataset> {
    load_dataset_with(codebook_path, data_path, ReadOptions::default())
}

pub fn load_dataset_with(
    codebook_path: &Path,
    data_path: &Path,
    options: ReadOptions,
) -> Result<Dataset> {
    let codebook = Codebook::load(codebook_path)?;
    let file = fs::File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    Dataset::read(codebook, file, options)
}

impl Dataset {
    pub fn new(codebook: Codebook, respondents: Vec<Respondent>) -> Result<Self> {
        let dataset = Dataset {
            codebook,
            respondents,
            drops: DropCounts::default(),
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Parses delimited text against `codebook`.
    pub fn read(codebook: Codebook, mut reader: impl Read, options: ReadOptions) -> Result<Self> {
        let mut text = String::new();
        reader
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<data>", e))?;
        let text = nfc(&text);
        let mut drops = DropCounts::default();
        if text.trim().is_empty() {
            return Ok(Dataset {
                codebook,
                respondents: Vec::new(),
                drops,
            });
        }

        let mut csv = csv::ReaderBuilder::new()
            .delimiter(options.delimiter)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header: Vec<String> = csv.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut id_col = None;
        for (i, col) in header.iter().enumerate() {
            if *col == codebook.id_column {
                id_col = Some(i);
            } else if codebook.item(col).is_none() {
                return Err(Error::UnknownColumn { column: col.clone() });
            }
        }
        for item in &codebook.items {
            if !header.contains(&item.id) {
                return Err(Error::MissingColumn {
                    item: item.id.clone(),
                });
            }
        }

        let target_item = codebook.target();
        let mut respondents = Vec::new();
        for (row_idx, record) in csv.records().enumerate() {
            let record = record?;
            // 1-based data row number, header excluded
            let row = row_idx + 1;
            let id = match id_col {
                Some(c) => record.get(c).unwrap_or("").trim().to_string(),
                None => row.to_string(),
            };
            let mut answers = BTreeMap::new();
            let mut target_value = None;
            for (col, value) in header.iter().zip(record.iter()) {
                if Some(col) == id_col.map(|c| &header[c]) {
                    continue;
                }
                let value = value.trim();
                if codebook.classify(col, value).is_none() {
                    return Err(Error::InvalidValue {
                        row,
                        column: col.clone(),
                        value: value.to_string(),
                    });
                }
                if *col == target_item.id {
                    target_value = Some(value.to_string());
                } else {
                    answers.insert(col.clone(), value.to_string());
                }
            }
            let target_value = target_value.expect("target column checked above");
            match codebook.classify(&target_item.id, &target_value) {
                Some(ValueKind::Missing(_)) => drops.missing_target += 1,
                Some(ValueKind::Answer(_)) => match codebook.vote_for_label(&target_value) {
                    Some(vote) => respondents.push(Respondent {
                        id,
                        answers,
                        vote: Some(vote),
                    }),
                    None => *drops.unmapped_target.entry(target_value).or_insert(0) += 1,
                },
                None => unreachable!("classified above"),
            }
        }
        let dataset = Dataset {
            codebook,
            respondents,
            drops,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Checks every respondent against the codebook.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (row, r) in self.respondents.iter().enumerate() {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::IdMismatch(format!("duplicate respondent id {:?}", r.id)));
            }
            for item in self.codebook.feature_items() {
                let value = r.answer(&item.id).ok_or_else(|| Error::InvalidValue {
                    row: row + 1,
                    column: item.id.clone(),
                    value: String::new(),
                })?;
                if self.codebook.classify(&item.id, value).is_none() {
                    return Err(Error::InvalidValue {
                        row: row + 1,
                        column: item.id.clone(),
                        value: value.to_string(),
                    });
                }
            }
            if let Some(extra) = r.answers.keys().find(|k| self.codebook.item(k).is_none()) {
                return Err(Error::UnknownColumn {
                    column: extra.clone(),
                });
            }
        }
        Ok(())
    }

    /// Writes the normalized delimited form: id column first, then items in
    /// codebook order.
    pub fn write_csv(&self, writer: impl std::io::Write, options: ReadOptions) -> Result<()> {
        let mut csv = csv::WriterBuilder::new()
            .delimiter(options.delimiter)
            .from_writer(writer);
        let mut header = vec![self.codebook.id_column.as_str()];
        header.extend(self.codebook.items.iter().map(|i| i.id.as_str()));
        csv.write_record(&header)?;
        for r in &self.respondents {
            let mut row = vec![r.id.as_str()];
            for item in &self.codebook.items {
                if item.id == self.codebook.target_item {
                    row.push(r.vote.map(|v| self.codebook.vote_label(v)).unwrap_or(""));
                } else {
                    row.push(r.answer(&item.id).unwrap_or(""));
                }
            }
            csv.write_record(&row)?;
        }
        csv.flush().map_err(|e| Error::io("<data>", e))?;
        Ok(())
    }

    pub fn save(&self, codebook_path: &Path, data_path: &Path) -> Result<()> {
        self.codebook.save(codebook_path)?;
        let file = fs::File::create(data_path).map_err(|e| Error::io(data_path, e))?;
        self.write_csv(std::io::BufWriter::new(file), ReadOptions::default())
    }

    pub fn len(&self) -> usize {
        self.respondents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.respondents.is_empty()
    }

    pub fn class_counts(&self) -> ClassCounts {
        class_counts(self)
    }

    /// Same codebook, respondents selected by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&Respondent) -> bool) -> Dataset {
        Dataset {
            codebook: self.codebook.clone(),
            respondents: self.respondents.iter().filter(|r| keep(r)).cloned().collect(),
            drops: DropCounts::default(),
        }
    }

    /// Removes items from the codebook and from every respondent.
    pub fn without_items(&self, removed: &BTreeSet<String>) -> Dataset {
        if removed.is_empty() {
            return self.clone();
        }
        let codebook = self.codebook.without_items(removed);
        let respondents = self
            .respondents
            .iter()
            .map(|r| Respondent {
                id: r.id.clone(),
                answers: r
                    .answers
                    .iter()
                    .filter(|(k, _)| !removed.contains(*k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect(),
                vote: r.vote,
            })
            .collect();
        Dataset {
            codebook,
            respondents,
            drops: self.drops.clone(),
        }
    }

    /// Truth labels keyed by respondent id.
    pub fn truth(&self) -> BTreeMap<String, VoteChoice> {
        self.respondents
            .iter()
            .filter_map(|r| r.vote.map(|v| (r.id.clone(), v)))
            .collect()
    }
}

/// Counts respondents per vote category; unlabeled respondents are skipped.
pub fn class_counts(dataset: &Dataset) -> ClassCounts {
    let mut counts = [0usize; N_CATEGORIES];
    for vote in dataset.respondents.iter().filter_map(|r| r.vote) {
        counts[vote.index()] += 1;
    }
    ClassCounts(counts)
}
