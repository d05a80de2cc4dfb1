//! Synthetic GLES-like populations with a known data-generating process.
//!
//! Party identification is drawn first, then the vote from a row-stochastic
//! table `T[party][vote]`. All remaining predictors are drawn conditionally
//! on the vote, except party-identification strength (not applicable without
//! a party) and East/West residency (derived from the state). Convenience
//! subgroups (students, one state, the unemployed) have fixed overall rates
//! and vote-dependent odds, so filtering on them skews the vote
//! distribution. Missing codes are applied completely at random.
//!
//! The [`Oracle`] computes the exact posterior over votes given the visible
//! predictors, marginalizing over whatever is missing or ablated.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gles;
use crate::survey::{Codebook, Dataset, Respondent, ValueKind};
use crate::vote::{VoteChoice, N_CATEGORIES};

const ROW_TOL: f64 = 1e-9;

/// Vote shares of the reference population, in canonical order.
pub const REFERENCE_VOTE_SHARES: [f64; N_CATEGORIES] = [0.255, 0.171, 0.114, 0.101, 0.095, 0.082, 0.037, 0.145];

/// A subgroup with a fixed overall rate whose members lean towards some
/// votes: `P(value | v) = rate · w_v / Σ_u P(u) · w_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSkew {
    pub item: String,
    pub value: String,
    pub rate: f64,
    pub weights: [f64; N_CATEGORIES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n: usize,
    pub seed: u64,
    /// Target vote marginal.
    pub vote_shares: [f64; N_CATEGORIES],
    /// Party-identification marginal over the party options in canonical
    /// vote order (last entry: no party). Defaults to `vote_shares`.
    pub party_id_shares: Option<[f64; N_CATEGORIES]>,
    /// Probability of voting for the identified party; the remainder follows
    /// `vote_shares`. Ignored when `party_vote_table` is given.
    pub party_loyalty: f64,
    /// Explicit `T[party][vote]`.
    pub party_vote_table: Option<Vec<[f64; N_CATEGORIES]>>,
    /// Per ordinal item, the preferred scale position (0..1) of each vote.
    pub item_locations: BTreeMap<String, [f64; N_CATEGORIES]>,
    /// Spread of the ordinal answer distributions around their location.
    pub item_spread: f64,
    pub subgroups: Vec<SubgroupSkew>,
    /// Probability that an item's value is replaced by a missing code.
    pub missing_rates: BTreeMap<String, f64>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        let locations: BTreeMap<String, [f64; N_CATEGORIES]> = [
            (gles::AGE, [0.65, 0.6, 0.35, 0.45, 0.5, 0.5, 0.35, 0.35]),
            (gles::GENDER, [0.55, 0.52, 0.58, 0.45, 0.5, 0.35, 0.45, 0.5]),
            (gles::EDUCATION, [0.5, 0.4, 0.7, 0.7, 0.55, 0.35, 0.5, 0.3]),
            (gles::INCOME, [0.55, 0.45, 0.6, 0.75, 0.35, 0.45, 0.45, 0.25]),
            (gles::RELIGIOSITY, [0.6, 0.35, 0.3, 0.4, 0.1, 0.3, 0.35, 0.3]),
            (gles::LEFT_RIGHT, [0.62, 0.38, 0.3, 0.58, 0.18, 0.8, 0.5, 0.5]),
            (gles::IMMIGRATION, [0.62, 0.45, 0.25, 0.5, 0.35, 0.92, 0.5, 0.6]),
            (gles::INEQUALITY, [0.45, 0.2, 0.2, 0.6, 0.05, 0.35, 0.3, 0.3]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let skew = |item: &str, value: &str, rate: f64, weights| SubgroupSkew {
            item: item.to_string(),
            value: value.to_string(),
            rate,
            weights,
        };
        let missing_rates = [
            (gles::AGE, 0.005),
            (gles::EDUCATION, 0.01),
            (gles::INCOME, 0.12),
            (gles::RELIGIOSITY, 0.02),
            (gles::LEFT_RIGHT, 0.05),
            (gles::PARTY_ID, 0.03),
            (gles::PARTY_ID_STRENGTH, 0.02),
            (gles::IMMIGRATION, 0.04),
            (gles::INEQUALITY, 0.03),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        GeneratorSpec {
            n: 5000,
            seed: 2017,
            vote_shares: REFERENCE_VOTE_SHARES,
            party_id_shares: None,
            party_loyalty: 0.7,
            party_vote_table: None,
            item_locations: locations,
            item_spread: 0.3,
            subgroups: vec![
                skew(gles::EMPLOYMENT, gles::STUDENT, 0.08, [0.5, 1.0, 2.5, 1.0, 2.0, 0.4, 1.5, 2.5]),
                skew(gles::REGION, gles::THURINGIA, 0.06, [1.1, 0.7, 0.4, 0.8, 1.6, 2.5, 0.8, 0.9]),
                skew(gles::EMPLOYMENT, gles::UNEMPLOYED, 0.03, [0.4, 1.3, 0.5, 0.4, 1.3, 1.4, 1.0, 3.5]),
            ],
            missing_rates,
        }
    }
}

impl GeneratorSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("generator spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("generator spec is TOML-serializable")
    }

    fn party_shares(&self) -> [f64; N_CATEGORIES] {
        self.party_id_shares.unwrap_or(self.vote_shares)
    }

    /// `T[party][vote]`.
    pub fn party_vote_table(&self) -> Vec<[f64; N_CATEGORIES]> {
        match &self.party_vote_table {
            Some(t) => t.clone(),
            None => (0..N_CATEGORIES)
                .map(|p| {
                    std::array::from_fn(|v| {
                        (1.0 - self.party_loyalty) * self.vote_shares[v] + if p == v { self.party_loyalty } else { 0.0 }
                    })
                })
                .collect(),
        }
    }
}

fn check_row(name: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
        return Err(Error::Config(format!("{name}: {row:?} is not a probability distribution")));
    }
    Ok(())
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name}: {p} is not a probability")))
    }
}

/// Answer distribution of one item given the vote: `table[option][vote]`.
type VoteTable = Vec<[f64; N_CATEGORIES]>;

#[derive(Debug, Clone, PartialEq)]
enum ItemModel {
    /// Same value for everyone.
    Constant(usize),
    ByVote(VoteTable),
    /// Value determined by another item's value.
    Derived { source: String, map: Vec<usize> },
    /// Not applicable without a party, otherwise `strength` shares.
    PartyStrength(Vec<f64>),
    PartyId,
}

fn ordinal_table(n_options: usize, locations: &[f64; N_CATEGORIES], spread: f64) -> VoteTable {
    let mut table = vec![[0.0; N_CATEGORIES]; n_options];
    for v in 0..N_CATEGORIES {
        if n_options == 2 {
            table[1][v] = locations[v];
            table[0][v] = 1.0 - locations[v];
            continue;
        }
        let weights: Vec<f64> = (0..n_options)
            .map(|k| {
                let pos = k as f64 / (n_options - 1) as f64;
                (-(pos - locations[v]).powi(2) / (2.0 * spread * spread)).exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        for k in 0..n_options {
            table[k][v] = weights[k] / total;
        }
    }
    table
}

/// Options with fixed base weights plus subgroup skews.
fn skewed_table(
    options: &[String],
    base: &[f64],
    skews: &[&SubgroupSkew],
    vote_shares: &[f64; N_CATEGORIES],
) -> Result<VoteTable> {
    let mut table = vec![[0.0; N_CATEGORIES]; options.len()];
    let mut skewed = vec![false; options.len()];
    for s in skews {
        check_prob(&format!("subgroup {}={} rate", s.item, s.value), s.rate)?;
        if s.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("subgroup {}={}: negative weight", s.item, s.value)));
        }
        let k = options
            .iter()
            .position(|o| *o == s.value)
            .ok_or_else(|| Error::Config(format!("subgroup value {:?} is not an option of {}", s.value, s.item)))?;
        let norm: f64 = vote_shares.iter().zip(&s.weights).map(|(p, w)| p * w).sum();
        if norm <= 0.0 {
            return Err(Error::Config(format!("subgroup {}={}: weights vanish", s.item, s.value)));
        }
        for v in 0..N_CATEGORIES {
            table[k][v] = s.rate * s.weights[v] / norm;
        }
        skewed[k] = true;
    }
    let rest: f64 = base.iter().zip(&skewed).filter(|(_, s)| !**s).map(|(b, _)| b).sum();
    for v in 0..N_CATEGORIES {
        let used: f64 = (0..options.len()).filter(|&k| skewed[k]).map(|k| table[k][v]).sum();
        if used > 1.0 + ROW_TOL {
            return Err(Error::Config(format!(
                "subgroups of {} exceed probability one for {}",
                skews[0].item,
                VoteChoice::ALL[v]
            )));
        }
        for k in (0..options.len()).filter(|&k| !skewed[k]) {
            table[k][v] = (1.0 - used).max(0.0) * base[k] / rest;
        }
    }
    Ok(table)
}

fn employment_base() -> Vec<f64> {
    // full-time, part-time, student, unemployed, retired, homemaker, other
    vec![0.45, 0.13, 0.08, 0.03, 0.23, 0.04, 0.04]
}

fn region_base() -> Vec<f64> {
    // population weights, West states then East states (gles order)
    vec![13.0, 16.0, 2.5, 0.8, 2.2, 7.5, 9.6, 21.6, 4.9, 1.2, 3.5, 1.8, 3.0, 2.0, 4.9, 2.6, 2.6]
}

const STRENGTH_SHARES: [f64; 5] = [0.15, 0.3, 0.35, 0.12, 0.08];
/// Share of `-99` among applied missing codes; the rest are `-98`.
const NO_ANSWER_SHARE: f64 = 0.6;

/// The full data-generating process for the built-in codebook.
#[derive(Debug, Clone)]
pub struct Oracle {
    spec: GeneratorSpec,
    codebook: Codebook,
    party_shares: [f64; N_CATEGORIES],
    table: Vec<[f64; N_CATEGORIES]>,
    models: Vec<(String, ItemModel)>,
}

/// Everything drawn while generating, including values later masked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DrawLog {
    pub party_id: Vec<usize>,
    pub votes: Vec<VoteChoice>,
    /// Number of values replaced by a missing code, per item.
    pub masked: BTreeMap<String, usize>,
}

impl DrawLog {
    pub fn vote_counts(&self) -> [usize; N_CATEGORIES] {
        let mut c = [0; N_CATEGORIES];
        for v in &self.votes {
            c[v.index()] += 1;
        }
        c
    }
}

pub struct Generated {
    pub dataset: Dataset,
    pub oracle: Oracle,
    pub log: DrawLog,
}

impl Oracle {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        let codebook = gles::codebook();
        check_row("vote_shares", &spec.vote_shares)?;
        let party_shares = spec.party_shares();
        check_row("party_id_shares", &party_shares)?;
        check_prob("party_loyalty", spec.party_loyalty)?;
        if !(spec.item_spread > 0.0) {
            return Err(Error::Config("item_spread must be positive".into()));
        }
        let table = spec.party_vote_table();
        if table.len() != N_CATEGORIES {
            return Err(Error::Config(format!("party_vote_table needs {N_CATEGORIES} rows")));
        }
        for (p, row) in table.iter().enumerate() {
            check_row(&format!("party_vote_table row {p}"), row)?;
        }
        for (item, rate) in &spec.missing_rates {
            if codebook.item(item).is_none() || *item == codebook.target_item {
                return Err(Error::Config(format!("missing rate for unknown item {item:?}")));
            }
            check_prob(&format!("missing rate of {item}"), *rate)?;
        }
        for s in &spec.subgroups {
            if s.item != gles::EMPLOYMENT && s.item != gles::REGION {
                return Err(Error::Config(format!(
                    "subgroups are supported on {} and {}, not {:?}",
                    gles::EMPLOYMENT,
                    gles::REGION,
                    s.item
                )));
            }
        }

        let mut models = Vec::new();
        for item in codebook.feature_items() {
            let model = match item.id.as_str() {
                gles::YEAR => ItemModel::Constant(0),
                gles::PARTY_ID => ItemModel::PartyId,
                gles::PARTY_ID_STRENGTH => ItemModel::PartyStrength(STRENGTH_SHARES.to_vec()),
                gles::RESIDENCY => ItemModel::Derived {
                    source: gles::REGION.to_string(),
                    map: codebook
                        .item(gles::REGION)
                        .expect("region item")
                        .options
                        .iter()
                        .map(|s| usize::from(gles::EAST_STATES.contains(&s.as_str())))
                        .collect(),
                },
                gles::EMPLOYMENT | gles::REGION => {
                    let base = if item.id == gles::EMPLOYMENT {
                        employment_base()
                    } else {
                        region_base()
                    };
                    let skews: Vec<&SubgroupSkew> = spec.subgroups.iter().filter(|s| s.item == item.id).collect();
                    ItemModel::ByVote(skewed_table(&item.options, &base, &skews, &spec.vote_shares)?)
                }
                id => {
                    let loc = spec
                        .item_locations
                        .get(id)
                        .ok_or_else(|| Error::Config(format!("no item_locations entry for {id:?}")))?;
                    if loc.iter().any(|l| !(0.0..=1.0).contains(l)) {
                        return Err(Error::Config(format!("item_locations of {id} must lie in [0, 1]")));
                    }
                    ItemModel::ByVote(ordinal_table(item.options.len(), loc, spec.item_spread))
                }
            };
            models.push((item.id.clone(), model));
        }
        Ok(Oracle {
            spec,
            codebook,
            party_shares,
            table,
            models,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    fn model(&self, item: &str) -> Option<&ItemModel> {
        self.models.iter().find(|(id, _)| id == item).map(|(_, m)| m)
    }

    /// `P(option | vote)` for a vote-conditional item.
    fn likelihood(&self, item: &str, option: usize) -> Option<[f64; N_CATEGORIES]> {
        match self.model(item)? {
            ItemModel::ByVote(t) => Some(t[option]),
            ItemModel::Derived { source, map } => {
                let ItemModel::ByVote(t) = self.model(source)? else {
                    return None;
                };
                let mut out = [0.0; N_CATEGORIES];
                for (k, _) in map.iter().enumerate().filter(|(_, m)| **m == option) {
                    for v in 0..N_CATEGORIES {
                        out[v] += t[k][v];
                    }
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Exact `P(vote | visible predictors)`. Non-predictor items, missing
    /// codes and absent (ablated) items carry no information.
    pub fn posterior(&self, r: &Respondent) -> Result<[f64; N_CATEGORIES]> {
        let cb = &self.codebook;
        let answer_index = |item: &str| -> Option<usize> {
            match cb.classify(item, r.answer(item)?) {
                Some(ValueKind::Answer(k)) => Some(k),
                _ => None,
            }
        };
        let mut log_lik = [0.0; N_CATEGORIES];
        for item in cb.predictor_items() {
            if item.id == gles::PARTY_ID || item.id == gles::PARTY_ID_STRENGTH {
                continue;
            }
            if let Some(k) = answer_index(&item.id) {
                if let Some(lik) = self.likelihood(&item.id, k) {
                    for v in 0..N_CATEGORIES {
                        log_lik[v] += lik[v].ln();
                    }
                }
            }
        }

        let party = answer_index(gles::PARTY_ID);
        let strength_value = r.answer(gles::PARTY_ID_STRENGTH);
        let strength_weight = |p: usize| -> f64 {
            let no_party = p == N_CATEGORIES - 1;
            match strength_value.and_then(|s| cb.classify(gles::PARTY_ID_STRENGTH, s)) {
                Some(ValueKind::Answer(k)) => {
                    if no_party {
                        0.0
                    } else {
                        STRENGTH_SHARES[k]
                    }
                }
                Some(ValueKind::Missing(_)) if strength_value == Some(gles::NOT_APPLICABLE) => {
                    if no_party {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 1.0,
            }
        };
        let mut prior = [0.0; N_CATEGORIES];
        for p in 0..N_CATEGORIES {
            if party.is_some_and(|q| q != p) {
                continue;
            }
            let w = self.party_shares[p] * strength_weight(p);
            for v in 0..N_CATEGORIES {
                prior[v] += w * self.table[p][v];
            }
        }

        let max = log_lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut post: [f64; N_CATEGORIES] = std::array::from_fn(|v| prior[v] * (log_lik[v] - max).exp());
        let total: f64 = post.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "respondent {:?} has probability zero under the generator",
                r.id
            )));
        }
        post.iter_mut().for_each(|p| *p /= total);
        Ok(post)
    }

    fn draw_index(rng: &mut ChaCha8Rng, weights: impl IntoIterator<Item = f64>) -> usize {
        WeightedIndex::new(weights).expect("validated distribution").sample(rng)
    }

    /// Draws a population.
    pub fn sample(&self) -> Result<(Dataset, DrawLog)> {
        let spec = &self.spec;
        let cb = &self.codebook;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut log = DrawLog::default();
        let mut respondents = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let party = Self::draw_index(&mut rng, self.party_shares);
            let vote = Self::draw_index(&mut rng, self.table[party]);
            let mut drawn: Vec<(String, usize)> = Vec::new();
            let mut answers = BTreeMap::new();
            for (item_id, model) in &self.models {
                let item = cb.item(item_id).expect("modelled item");
                let value = match model {
                    ItemModel::Constant(k) => item.options[*k].clone(),
                    ItemModel::PartyId => item.options[party].clone(),
                    ItemModel::PartyStrength(shares) => {
                        if party == N_CATEGORIES - 1 {
                            gles::NOT_APPLICABLE.to_string()
                        } else {
                            item.options[Self::draw_index(&mut rng, shares.iter().copied())].clone()
                        }
                    }
                    ItemModel::ByVote(t) => {
                        let k = Self::draw_index(&mut rng, t.iter().map(|row| row[vote]));
                        drawn.push((item_id.clone(), k));
                        item.options[k].clone()
                    }
                    ItemModel::Derived { .. } => continue,
                };
                answers.insert(item_id.clone(), value);
            }
            for (item_id, model) in &self.models {
                if let ItemModel::Derived { source, map } = model {
                    let (_, k) = drawn
                        .iter()
                        .find(|(id, _)| id == source)
                        .ok_or_else(|| Error::Config(format!("{item_id} derives from undrawn item {source}")))?;
                    let item = cb.item(item_id).expect("modelled item");
                    answers.insert(item_id.clone(), item.options[map[*k]].clone());
                }
            }
            for (item_id, value) in answers.iter_mut() {
                let rate = spec.missing_rates.get(item_id).copied().unwrap_or(0.0);
                if rate > 0.0 && rng.gen_bool(rate) {
                    *value = if rng.gen_bool(NO_ANSWER_SHARE) {
                        gles::NO_ANSWER
                    } else {
                        gles::DONT_KNOW
                    }
                    .to_string();
                    *log.masked.entry(item_id.clone()).or_insert(0) += 1;
                }
            }
            log.party_id.push(party);
            log.votes.push(VoteChoice::ALL[vote]);
            respondents.push(Respondent {
                id: format!("s{:05}", i + 1),
                answers,
                vote: Some(VoteChoice::ALL[vote]),
            });
        }
        Ok((Dataset::new(cb.clone(), respondents)?, log))
    }
}

/// Draws a dataset and returns it with its oracle and draw log.
pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    let oracle = Oracle::new(spec.clone())?;
    let (dataset, log) = oracle.sample()?;
    Ok(Generated { dataset, oracle, log })
}
