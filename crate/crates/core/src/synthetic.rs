//! Controlled synthetic benchmarks that anchor the diagnostic map.
//!
//! Surface text uses integer tokens (`tok_17`). Tokens `tok_0..tok_99` are
//! reserved for signal-carrying markers; filler is drawn from
//! `tok_100..tok_{100 + vocabulary_size}`.
//!
//! Rates that matter for the audit (marker reliability, metadata agreement,
//! label proportions) are realized as exact counts per split and then
//! shuffled, so the audited statistics sit on their design values instead of
//! wandering with sampling noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::data::{AuditItem, Dataset, Dimension, MetadataSchema};

#[derive(Debug, Error)]
#[error("invalid generator config: {0}")]
pub struct GeneratorError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Label is a pure function of `answer_type`.
    Direct,
    /// Label follows a hidden variable that metadata tracks imperfectly;
    /// evidence carries nothing.
    Latent,
    /// Label is readable from an answer token inside the evidence.
    Sensitive,
    /// Severely skewed labels that the query predicts; evidence carries nothing.
    Skewed,
}

impl Coupling {
    pub fn as_str(self) -> &'static str {
        match self {
            Coupling::Direct => "direct",
            Coupling::Latent => "latent",
            Coupling::Sensitive => "sensitive",
            Coupling::Skewed => "skewed",
        }
    }
}

impl std::str::FromStr for Coupling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Coupling::Direct,
            Coupling::Latent,
            Coupling::Sensitive,
            Coupling::Skewed,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| format!("unknown coupling {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub coupling: Coupling,
    /// Target MPDS for `latent`; ignored otherwise.
    #[serde(default = "default_mpds_target")]
    pub latent_mpds_target: f64,
    /// Majority-label share for `skewed`; ignored otherwise.
    #[serde(default = "default_majority_fraction")]
    pub majority_fraction: f64,
    #[serde(default = "default_vocabulary")]
    pub vocabulary_size: usize,
}

fn default_mpds_target() -> f64 {
    0.643
}

fn default_majority_fraction() -> f64 {
    0.96
}

fn default_vocabulary() -> usize {
    60
}

impl GeneratorConfig {
    pub fn new(coupling: Coupling, seed: u64) -> Self {
        GeneratorConfig {
            seed,
            n_train: 2000,
            n_eval: 600,
            coupling,
            latent_mpds_target: default_mpds_target(),
            majority_fraction: default_majority_fraction(),
            vocabulary_size: default_vocabulary(),
        }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.n_train < 1 || self.n_eval < 1 {
            return Err(GeneratorError("n_train and n_eval must be at least 1".into()));
        }
        if !(self.latent_mpds_target > 0.0 && self.latent_mpds_target <= 1.0) {
            return Err(GeneratorError(format!(
                "latent_mpds_target must lie in (0, 1], got {}",
                self.latent_mpds_target
            )));
        }
        if !(self.majority_fraction > 0.5 && self.majority_fraction < 1.0) {
            return Err(GeneratorError(format!(
                "majority_fraction must lie in (0.5, 1), got {}",
                self.majority_fraction
            )));
        }
        if self.vocabulary_size < 20 {
            return Err(GeneratorError("vocabulary_size must be at least 20".into()));
        }
        Ok(())
    }
}

/// Share of latent items whose query marker names the true hidden value.
/// Also the query-only ceiling, kept under the question-dominance threshold.
pub const LATENT_MARKER_RELIABILITY: f64 = 0.85;
/// Share of skewed items whose query marker names the true label.
pub const SKEWED_MARKER_RELIABILITY: f64 = 0.99;

const FILLER_BASE: usize = 100;
/// Noisy markers are repeated so they dominate the TF-IDF row of the query.
const MARKER_REPEATS: usize = 3;

const DIRECT_ANSWER_TYPES: [(&str, &str); 5] = [
    ("date", "TEMPORAL"),
    ("description", "FREEFORM"),
    ("location", "PLACE"),
    ("number", "QUANTITY"),
    ("person", "ENTITY"),
];
const DIRECT_QUESTION_TYPES: [&str; 3] = ["list", "long", "short"];

const LATENT_LABELS: [&str; 4] = ["CONFLICT", "FULL", "PARTIAL", "UNSUPPORTED"];
const LATENT_QUESTION_TYPES: [&str; 2] = ["bridge", "comparison"];
/// answer_type value that the protocol heuristic maps to each hidden value.
const LATENT_ANSWER_TYPES: [&str; 4] = ["yes_no", "entity", "date", "number"];

const SENSITIVE_LABELS: [&str; 5] = ["CHEMISTRY", "GEOGRAPHY", "HISTORY", "LITERATURE", "SPORT"];
const SENSITIVE_TOKENS_PER_LABEL: usize = 4;
const SENSITIVE_QUESTION_TYPES: [&str; 3] = ["factoid", "list", "riddle"];
const SENSITIVE_ANSWER_TYPES: [&str; 3] = ["entity", "number", "phrase"];

const SKEWED_LABELS: [&str; 2] = ["CONFLICT", "FULL"];
const SKEWED_QUESTION_TYPES: [&str; 2] = ["bridge", "comparison"];
const SKEWED_ANSWER_TYPES: [&str; 3] = ["date", "entity", "yes_no"];

fn tok(id: usize) -> String {
    format!("tok_{id}")
}

fn dimension(name: &str, cats: &[&str]) -> Dimension {
    Dimension {
        name: name.into(),
        categories: cats.iter().map(|c| c.to_string()).collect(),
    }
}

fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|l| l.to_string()).collect()
}

struct Gen {
    rng: ChaCha8Rng,
    vocab: usize,
}

impl Gen {
    fn filler(&mut self, min: usize, max: usize) -> Vec<String> {
        let len = self.rng.gen_range(min..=max);
        (0..len)
            .map(|_| tok(FILLER_BASE + self.rng.gen_range(0..self.vocab)))
            .collect()
    }

    fn passages(&mut self) -> Vec<Vec<String>> {
        let n = self.rng.gen_range(2..=3);
        (0..n).map(|_| self.filler(8, 14)).collect()
    }

    /// Exactly `round(rate * n)` trues in random order.
    fn exact_flags(&mut self, n: usize, rate: f64) -> Vec<bool> {
        let hits = (rate * n as f64).round() as usize;
        let mut flags: Vec<bool> = (0..n).map(|i| i < hits.min(n)).collect();
        flags.shuffle(&mut self.rng);
        flags
    }

    /// Class indices with counts proportional to `weights` (largest
    /// remainder), in random order.
    fn exact_classes(&mut self, n: usize, weights: &[f64]) -> Vec<usize> {
        let total: f64 = weights.iter().sum();
        let raw: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        let missing = n - counts.iter().sum::<usize>();
        for &c in order.iter().take(missing) {
            counts[c] += 1;
        }
        let mut classes: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        classes.shuffle(&mut self.rng);
        classes
    }

    /// `value` when `keep`, otherwise a uniformly chosen different value.
    fn noisy(&mut self, value: usize, keep: bool, arity: usize) -> usize {
        if keep {
            value
        } else {
            let other = self.rng.gen_range(0..arity - 1);
            if other >= value {
                other + 1
            } else {
                other
            }
        }
    }

    fn pick<'a>(&mut self, options: &[&'a str]) -> &'a str {
        options[self.rng.gen_range(0..options.len())]
    }
}

fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

fn make_item(
    id: String,
    query: Vec<String>,
    evidence: Vec<Vec<String>>,
    label: &str,
    metadata: &[(&str, &str)],
) -> AuditItem {
    AuditItem {
        id,
        query: join(&query),
        evidence: evidence.iter().map(|p| join(p)).collect(),
        gold_label: label.to_string(),
        metadata: metadata
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect::<BTreeMap<_, _>>(),
    }
}

/// Generates the configured benchmark. Output is a pure function of the
/// config.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset, GeneratorError> {
    config.validate()?;
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        vocab: config.vocabulary_size,
    };
    let schema = schema_for(config.coupling);
    let latent = LatentDesign::for_target(config.latent_mpds_target);
    let mut split = |name: &str, n: usize| -> Vec<AuditItem> {
        match config.coupling {
            Coupling::Direct => direct_split(&mut g, name, n),
            Coupling::Latent => latent_split(&mut g, name, n, &latent),
            Coupling::Sensitive => sensitive_split(&mut g, name, n),
            Coupling::Skewed => skewed_split(&mut g, name, n, config.majority_fraction),
        }
    };
    let train = split("train", config.n_train);
    let eval = split("eval", config.n_eval);
    let dataset = Dataset {
        name: format!("synthetic-{}", config.coupling.as_str()),
        schema,
        train,
        eval,
    };
    debug_assert!(dataset.validate().is_ok());
    Ok(dataset)
}

fn schema_for(coupling: Coupling) -> MetadataSchema {
    let (dims, label_names): (Vec<Dimension>, Vec<String>) = match coupling {
        Coupling::Direct => (
            vec![
                dimension("question_type", &DIRECT_QUESTION_TYPES),
                dimension(
                    "answer_type",
                    &DIRECT_ANSWER_TYPES.map(|(a, _)| a),
                ),
            ],
            labels(&DIRECT_ANSWER_TYPES.map(|(_, l)| l)),
        ),
        Coupling::Latent => (
            vec![
                dimension("question_type", &LATENT_QUESTION_TYPES),
                dimension("answer_type", &LATENT_ANSWER_TYPES),
            ],
            labels(&LATENT_LABELS),
        ),
        Coupling::Sensitive => (
            vec![
                dimension("question_type", &SENSITIVE_QUESTION_TYPES),
                dimension("answer_type", &SENSITIVE_ANSWER_TYPES),
            ],
            labels(&SENSITIVE_LABELS),
        ),
        Coupling::Skewed => (
            vec![
                dimension("question_type", &SKEWED_QUESTION_TYPES),
                dimension("answer_type", &SKEWED_ANSWER_TYPES),
            ],
            labels(&SKEWED_LABELS),
        ),
    };
    MetadataSchema::new(dims, label_names).expect("built-in schemas are valid")
}

/// Latent construction parameters derived from the MPDS target.
///
/// Metadata groups are `(question_type, answer_type)` tuples. The dominant
/// group `(comparison, entity)` holds a `dominant_share` of items, of which
/// `dominant_purity` are FULL and the rest CONFLICT items that the protocol
/// heuristic misfiled as entity questions. Every other tuple holds an equal
/// share with its answer-type label at `group_purity`, the remainder spread
/// over the other non-CONFLICT labels (CONFLICT only occurs under `yes_no`
/// or misfiled into the dominant group).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDesign {
    /// Metadata-majority accuracy the tables are built to produce.
    pub metadata_rate: f64,
    pub dominant_share: f64,
    pub dominant_purity: f64,
    pub group_purity: f64,
}

const LATENT_DOMINANT_SHARE: f64 = 0.25;
const LATENT_DOMINANT_PURITY: f64 = 0.8;
/// Keeps the answer-type label a strict majority in three-label groups.
const LATENT_MIN_PURITY: f64 = 0.36;

impl LatentDesign {
    pub fn for_target(target: f64) -> Self {
        let m = (target * LATENT_MARKER_RELIABILITY).max(LATENT_MIN_PURITY);
        let (g, phi) = (LATENT_DOMINANT_SHARE, LATENT_DOMINANT_PURITY);
        let q = (m - phi * g) / (1.0 - g);
        let (g, phi, q) = if q < LATENT_MIN_PURITY {
            // shrink the dominant group for low targets
            let g = (m - LATENT_MIN_PURITY) / (phi - LATENT_MIN_PURITY);
            (g, phi, LATENT_MIN_PURITY)
        } else if q > phi - 0.05 {
            // keep the dominant group the purest for high targets
            let q = m - 0.05 * g;
            (g, q + 0.05, q)
        } else {
            (g, phi, q)
        };
        LatentDesign {
            metadata_rate: phi * g + q * (1.0 - g),
            dominant_share: g,
            dominant_purity: phi,
            group_purity: q,
        }
    }

    /// Cell weights over (question_type, answer_type, label) indices.
    fn cells(&self) -> Vec<((usize, usize, usize), f64)> {
        const C: usize = 0;
        const F: usize = 1;
        let mut cells = vec![
            ((1, F, F), self.dominant_share * self.dominant_purity),
            ((1, F, C), self.dominant_share * (1.0 - self.dominant_purity)),
        ];
        let share = (1.0 - self.dominant_share) / 7.0;
        for qt in 0..LATENT_QUESTION_TYPES.len() {
            for at in 0..LATENT_ANSWER_TYPES.len() {
                if (qt, at) == (1, F) {
                    continue;
                }
                cells.push(((qt, at, at), share * self.group_purity));
                let rest: Vec<usize> = (1..LATENT_LABELS.len()).filter(|&l| l != at).collect();
                for &l in &rest {
                    cells.push(((qt, at, l), share * (1.0 - self.group_purity) / rest.len() as f64));
                }
            }
        }
        cells
    }
}
fn direct_split(g: &mut Gen, split: &str, n: usize) -> Vec<AuditItem> {
    let classes = g.exact_classes(n, &[1.0; DIRECT_ANSWER_TYPES.len()]);
    classes
        .into_iter()
        .enumerate()
        .map(|(i, at)| {
            let (answer_type, label) = DIRECT_ANSWER_TYPES[at];
            let mut query = vec![tok(1 + at)];
            query.extend(g.filler(5, 9));
            let evidence = g.passages();
            let qt = g.pick(&DIRECT_QUESTION_TYPES);
            make_item(
                format!("direct-{split}-{i:05}"),
                query,
                evidence,
                label,
                &[("question_type", qt), ("answer_type", answer_type)],
            )
        })
        .collect()
}

fn latent_split(g: &mut Gen, split: &str, n: usize, design: &LatentDesign) -> Vec<AuditItem> {
    let cells = design.cells();
    let weights: Vec<f64> = cells.iter().map(|(_, w)| *w).collect();
    let assigned = g.exact_classes(n, &weights);
    let marker_ok = g.exact_flags(n, LATENT_MARKER_RELIABILITY);
    assigned
        .into_iter()
        .enumerate()
        .map(|(i, cell)| {
            let (qt, at, h) = cells[cell].0;
            let marker = g.noisy(h, marker_ok[i], LATENT_LABELS.len());
            let mut query = vec![tok(10 + marker); MARKER_REPEATS];
            query.extend(g.filler(5, 9));
            let evidence = g.passages();
            make_item(
                format!("latent-{split}-{i:05}"),
                query,
                evidence,
                LATENT_LABELS[h],
                &[
                    ("question_type", LATENT_QUESTION_TYPES[qt]),
                    ("answer_type", LATENT_ANSWER_TYPES[at]),
                ],
            )
        })
        .collect()
}

fn sensitive_split(g: &mut Gen, split: &str, n: usize) -> Vec<AuditItem> {
    let classes = g.exact_classes(n, &[1.0; SENSITIVE_LABELS.len()]);
    classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let query = g.filler(6, 10);
            let mut evidence = g.passages();
            let answer = tok(20 + c * SENSITIVE_TOKENS_PER_LABEL
                + g.rng.gen_range(0..SENSITIVE_TOKENS_PER_LABEL));
            let which = g.rng.gen_range(0..evidence.len());
            let at = g.rng.gen_range(0..=evidence[which].len());
            evidence[which].insert(at, answer);
            let qt = g.pick(&SENSITIVE_QUESTION_TYPES);
            let atype = g.pick(&SENSITIVE_ANSWER_TYPES);
            make_item(
                format!("sensitive-{split}-{i:05}"),
                query,
                evidence,
                SENSITIVE_LABELS[c],
                &[("question_type", qt), ("answer_type", atype)],
            )
        })
        .collect()
}

fn skewed_split(g: &mut Gen, split: &str, n: usize, majority: f64) -> Vec<AuditItem> {
    // class 1 is FULL
    let classes = g.exact_classes(n, &[1.0 - majority, majority]);
    let marker_ok = g.exact_flags(n, SKEWED_MARKER_RELIABILITY);
    classes
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let marker = g.noisy(c, marker_ok[i], SKEWED_LABELS.len());
            let mut query = vec![tok(40 + marker); MARKER_REPEATS];
            query.extend(g.filler(5, 9));
            let evidence = g.passages();
            let qt = g.pick(&SKEWED_QUESTION_TYPES);
            let at = g.pick(&SKEWED_ANSWER_TYPES);
            make_item(
                format!("skewed-{split}-{i:05}"),
                query,
                evidence,
                SKEWED_LABELS[c],
                &[("question_type", qt), ("answer_type", at)],
            )
        })
        .collect()
}

/// Human-readable construction record embedded in audit provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDescription {
    pub coupling: Coupling,
    pub label_function: String,
    pub construction: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
}

pub fn describe_generator(config: &GeneratorConfig) -> Result<GeneratorDescription, GeneratorError> {
    config.validate()?;
    let mut parameters: BTreeMap<String, serde_json::Value> = [
        ("seed", json!(config.seed)),
        ("n_train", json!(config.n_train)),
        ("n_eval", json!(config.n_eval)),
        ("vocabulary_size", json!(config.vocabulary_size)),
        ("coupling", json!(config.coupling.as_str())),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let (label_function, construction) = match config.coupling {
        Coupling::Direct => (
            "label = f(answer_type)".to_string(),
            "answer_type uniform over 5 categories, label a bijective function of it; the query \
             opens with a question-word token determined by answer_type; question_type and all \
             other text are filler independent of the label"
                .to_string(),
        ),
        Coupling::Latent => {
            let d = LatentDesign::for_target(config.latent_mpds_target);
            parameters.insert("latent_mpds_target".into(), json!(config.latent_mpds_target));
            parameters.insert("hidden_variable_coupling_rate".into(), json!(d.metadata_rate));
            parameters.insert("dominant_group_share".into(), json!(d.dominant_share));
            parameters.insert("dominant_group_purity".into(), json!(d.dominant_purity));
            parameters.insert("other_group_purity".into(), json!(d.group_purity));
            parameters.insert(
                "query_marker_reliability".into(),
                json!(LATENT_MARKER_RELIABILITY),
            );
            (
                "label = h, h hidden; metadata tracks h through a noisy protocol heuristic"
                    .to_string(),
                format!(
                    "exact per-split group tables: (comparison, entity) holds {:.1}% of items, \
                     {:.1}% FULL and the rest misfiled CONFLICT; each other (question_type, \
                     answer_type) tuple holds an equal share whose answer-type label has purity \
                     {:.1}%, so the metadata majority recovers h for {:.2}% of items \
                     (hidden-variable coupling rate = target x marker reliability); the query \
                     carries an h-marker token correct for {:.1}% of items; evidence is filler \
                     independent of h; targets below {:.2} are clamped",
                    d.dominant_share * 100.0,
                    d.dominant_purity * 100.0,
                    d.group_purity * 100.0,
                    d.metadata_rate * 100.0,
                    LATENT_MARKER_RELIABILITY * 100.0,
                    LATENT_MIN_PURITY / LATENT_MARKER_RELIABILITY,
                ),
            )
        }
        Coupling::Sensitive => (
            "label = topic of the answer token in the evidence".to_string(),
            format!(
                "5 balanced labels, each owning {SENSITIVE_TOKENS_PER_LABEL} answer tokens; one \
                 answer token is inserted at a random position of a random evidence passage; \
                 query and metadata are independent of the label"
            ),
        ),
        Coupling::Skewed => {
            parameters.insert("majority_fraction".into(), json!(config.majority_fraction));
            parameters.insert(
                "query_marker_reliability".into(),
                json!(SKEWED_MARKER_RELIABILITY),
            );
            (
                "label = FULL for the majority share, CONFLICT otherwise".to_string(),
                format!(
                    "exactly {:.1}% FULL per split; the query carries a label-marker token \
                     correct for {:.1}% of items; metadata and evidence are independent filler",
                    config.majority_fraction * 100.0,
                    SKEWED_MARKER_RELIABILITY * 100.0
                ),
            )
        }
    };
    Ok(GeneratorDescription {
        coupling: config.coupling,
        label_function,
        construction,
        parameters,
    })
}
