//! The paired evidence-shuffle intervention and the two decision statistics.
//!
//! `MPDS = acc_meta / acc_full` measures how much of the audited reader's
//! accuracy a metadata-majority predictor already reaches. `ΔEvi = acc_full -
//! acc_shuf` measures how much accuracy is lost when every eval item's
//! evidence is replaced by another item's evidence while queries, labels and
//! metadata stay fixed. `acc_shuf` is averaged over K independent
//! derangements and reported with its population standard deviation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{label_distribution, AuditItem, DataError, Dataset};
use crate::readers::{
    correctness, train_majority, InputView, LrHyper, Reader, ReaderError, ReaderSpec,
};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{stage}: {source}")]
    Reader {
        stage: String,
        #[source]
        source: ReaderError,
    },
    #[error("no derangement exists for {0} item(s)")]
    NoDerangement(usize),
    #[error("{0}")]
    InvalidArgument(String),
}

pub(crate) fn reader_stage(stage: impl Into<String>) -> impl FnOnce(ReaderError) -> AuditError {
    let stage = stage.into();
    move |source| AuditError::Reader { stage, source }
}

/// A reassignment of evidence across eval items: item `i` receives the
/// evidence of item `mapping[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidencePermutation {
    pub seed: u64,
    pub mapping: Vec<usize>,
}

impl EvidencePermutation {
    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.mapping.len()];
        self.mapping
            .iter()
            .all(|&j| j < seen.len() && !std::mem::replace(&mut seen[j], true))
    }

    pub fn fixed_points(&self) -> usize {
        self.mapping.iter().enumerate().filter(|(i, &j)| *i == j).count()
    }

    pub fn inverse(&self) -> EvidencePermutation {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &j) in self.mapping.iter().enumerate() {
            inv[j] = i;
        }
        EvidencePermutation {
            seed: self.seed,
            mapping: inv,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationKind {
    /// Fixed-point-free: every item loses its own evidence.
    #[default]
    Derangement,
    /// Uniform over all permutations, for sensitivity checks.
    Unrestricted,
}

/// Uniform derangement by rejection over Fisher-Yates shuffles
/// (about e draws on average).
pub fn sample_derangement(n: usize, seed: u64) -> Result<EvidencePermutation, AuditError> {
    if n < 2 {
        return Err(AuditError::NoDerangement(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping: Vec<usize> = (0..n).collect();
    loop {
        mapping.shuffle(&mut rng);
        if mapping.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(EvidencePermutation { seed, mapping });
        }
    }
}

pub fn sample_permutation(n: usize, seed: u64) -> EvidencePermutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping: Vec<usize> = (0..n).collect();
    mapping.shuffle(&mut rng);
    EvidencePermutation { seed, mapping }
}

impl PermutationKind {
    pub fn sample(self, n: usize, seed: u64) -> Result<EvidencePermutation, AuditError> {
        match self {
            PermutationKind::Derangement => sample_derangement(n, seed),
            PermutationKind::Unrestricted => Ok(sample_permutation(n, seed)),
        }
    }
}

/// Copies `eval` with item `i` carrying the evidence of item `perm.mapping[i]`.
/// Nothing but the evidence field changes.
pub fn apply_shuffle(
    eval: &[AuditItem],
    perm: &EvidencePermutation,
) -> Result<Vec<AuditItem>, AuditError> {
    if eval.len() != perm.len() {
        return Err(AuditError::InvalidArgument(format!(
            "permutation over {} items applied to {} items",
            perm.len(),
            eval.len()
        )));
    }
    if !perm.is_bijection() {
        return Err(AuditError::InvalidArgument(
            "evidence mapping is not a permutation".into(),
        ));
    }
    Ok(eval
        .iter()
        .zip(&perm.mapping)
        .map(|(item, &src)| AuditItem {
            evidence: eval[src].evidence.clone(),
            ..item.clone()
        })
        .collect())
}

/// One evidence permutation and the accuracy it induced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleRun {
    pub permutation: EvidencePermutation,
    pub accuracy: f64,
    #[serde(with = "bitstring")]
    pub per_item_correct: Vec<bool>,
}

impl ShuffleRun {
    pub fn new(permutation: EvidencePermutation, per_item_correct: Vec<bool>) -> Self {
        let correct = per_item_correct.iter().filter(|&&c| c).count();
        ShuffleRun {
            permutation,
            accuracy: correct as f64 / per_item_correct.len() as f64,
            per_item_correct,
        }
    }

    fn correct(&self) -> usize {
        self.per_item_correct.iter().filter(|&&c| c).count()
    }
}

/// Serializes correctness flags as a compact `"0110..."` string.
mod bitstring {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bits: &[bool], s: S) -> Result<S::Ok, S::Error> {
        let text: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let text = String::deserialize(d)?;
        text.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(D::Error::custom(format!("invalid bit {other:?}"))),
            })
            .collect()
    }
}

/// Mean and population standard deviation (divide by K) of run accuracies.
///
/// When every run covers the same number of items the mean is computed from
/// pooled counts, so K identical runs give back their accuracy bit-for-bit
/// and a standard deviation of exactly zero.
pub fn shuffle_dispersion(runs: &[ShuffleRun]) -> Result<(f64, f64), AuditError> {
    if runs.is_empty() {
        return Err(AuditError::InvalidArgument("no shuffle runs".into()));
    }
    let k = runs.len() as f64;
    let n = runs[0].per_item_correct.len();
    let mean = if runs.iter().all(|r| r.per_item_correct.len() == n) {
        let correct: usize = runs.iter().map(ShuffleRun::correct).sum();
        correct as f64 / (n * runs.len()) as f64
    } else {
        runs.iter().map(|r| r.accuracy).sum::<f64>() / k
    };
    let var = runs.iter().map(|r| (r.accuracy - mean).powi(2)).sum::<f64>() / k;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChancePolicy {
    /// Eval majority-class rate.
    #[default]
    MajorityRate,
    /// `1 / |labels|`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub chance: ChancePolicy,
    #[serde(default)]
    pub permutation: PermutationKind,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            k: 8,
            seed: 0,
            chance: ChancePolicy::default(),
            permutation: PermutationKind::default(),
        }
    }
}

impl AuditOptions {
    /// Shuffle `j` (1-based) uses seed `seed + j`.
    pub fn shuffle_seeds(&self) -> Vec<u64> {
        (1..=self.k as u64).map(|j| self.seed.wrapping_add(j)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditStatistics {
    pub acc_meta: f64,
    pub acc_full: f64,
    pub acc_shuf_mean: f64,
    pub sigma_shuf: f64,
    pub acc_chance: f64,
    pub mpds: Option<f64>,
    pub mpds_chance_corrected: Option<f64>,
    pub delta_evi: f64,
    pub k: usize,
    pub runs: Vec<ShuffleRun>,
}

/// `acc_meta / acc_full`; undefined when the audited reader scores zero.
pub fn mpds(acc_meta: f64, acc_full: f64) -> Option<f64> {
    (acc_full > 0.0).then(|| acc_meta / acc_full)
}

/// `(acc_meta - chance) / (acc_full - chance)`; undefined unless the audited
/// reader beats chance.
pub fn chance_corrected_mpds(acc_meta: f64, acc_full: f64, acc_chance: f64) -> Option<f64> {
    (acc_full > acc_chance).then(|| (acc_meta - acc_chance) / (acc_full - acc_chance))
}

/// Runs the full intervention: unshuffled accuracy, K shuffled accuracies,
/// and the metadata-majority screen trained on the same train split.
pub fn run_audit(
    dataset: &Dataset,
    reader: &dyn Reader,
    opts: &AuditOptions,
) -> Result<AuditStatistics, AuditError> {
    dataset.require_splits()?;
    if opts.k < 1 {
        return Err(AuditError::InvalidArgument("k must be at least 1".into()));
    }
    let eval = &dataset.eval;
    if eval.len() < 2 {
        return Err(AuditError::InvalidArgument(
            "evidence shuffling needs at least two eval items".into(),
        ));
    }
    let view = reader.view();

    let full_preds = reader
        .predict(eval, view)
        .map_err(reader_stage("unshuffled eval predictions"))?;
    let full_correct = correctness(&full_preds, eval).map_err(reader_stage("unshuffled eval"))?;
    let acc_full = fraction(&full_correct);

    let majority = train_majority(&dataset.train, &dataset.schema)
        .map_err(reader_stage("metadata-majority training"))?;
    let meta_preds = majority
        .predict(eval, InputView::MetadataOnly)
        .map_err(reader_stage("metadata-majority predictions"))?;
    let acc_meta = fraction(&correctness(&meta_preds, eval).map_err(reader_stage("metadata"))?);

    let mut runs = Vec::with_capacity(opts.k);
    for seed in opts.shuffle_seeds() {
        let perm = opts.permutation.sample(eval.len(), seed)?;
        let shuffled = apply_shuffle(eval, &perm)?;
        let stage = format!("shuffle seed {seed}");
        let preds = reader
            .predict(&shuffled, view)
            .map_err(reader_stage(stage.clone()))?;
        let flags = correctness(&preds, &shuffled).map_err(reader_stage(stage))?;
        runs.push(ShuffleRun::new(perm, flags));
    }
    runs.sort_by_key(|r| r.permutation.seed);
    let (acc_shuf_mean, sigma_shuf) = shuffle_dispersion(&runs)?;

    let acc_chance = match opts.chance {
        ChancePolicy::MajorityRate => label_distribution(eval)?.majority_fraction,
        ChancePolicy::Uniform => 1.0 / dataset.schema.labels().len() as f64,
    };

    Ok(AuditStatistics {
        acc_meta,
        acc_full,
        acc_shuf_mean,
        sigma_shuf,
        acc_chance,
        mpds: mpds(acc_meta, acc_full),
        mpds_chance_corrected: chance_corrected_mpds(acc_meta, acc_full, acc_chance),
        delta_evi: acc_full - acc_shuf_mean,
        k: runs.len(),
        runs,
    })
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest |ΔEvi| still counted as near zero.
    pub epsilon: f64,
    /// Largest σ_shuf still counted as stable.
    pub epsilon_sd: f64,
    /// Smallest ΔEvi counted as evidence-sensitive.
    pub delta_pos: f64,
    /// MPDS at or above which near-zero ΔEvi reads as direct coupling.
    pub mpds_direct: f64,
    /// Query-only accuracy that flags question dominance.
    pub query_dominance: f64,
    /// Majority-label fraction that flags severe skew.
    pub skew: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            epsilon: 0.01,
            epsilon_sd: 0.01,
            delta_pos: 0.05,
            mpds_direct: 0.95,
            query_dominance: 0.9,
            skew: 0.9,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), AuditError> {
        let all = [
            ("epsilon", self.epsilon),
            ("epsilon_sd", self.epsilon_sd),
            ("delta_pos", self.delta_pos),
            ("mpds_direct", self.mpds_direct),
            ("query_dominance", self.query_dominance),
            ("skew", self.skew),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(AuditError::InvalidArgument(format!(
                    "threshold {name} must be positive, got {v}"
                )));
            }
        }
        if self.delta_pos <= self.epsilon {
            return Err(AuditError::InvalidArgument(
                "delta_pos must exceed epsilon".into(),
            ));
        }
        Ok(())
    }
}

/// Skew and ablation facts the region rules consult besides the statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub majority_fraction: f64,
    pub query_only_accuracy: Option<f64>,
    /// True when the statistics came from an external (calibration-layer) reader.
    pub calibrated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    DirectCoupling,
    LatentCoupling,
    EvidenceSensitive,
    WarningQuestionDominant,
    Indeterminate,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::DirectCoupling => "direct_coupling",
            Region::LatentCoupling => "latent_coupling",
            Region::EvidenceSensitive => "evidence_sensitive",
            Region::WarningQuestionDominant => "warning_question_dominant",
            Region::Indeterminate => "indeterminate",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionVerdict {
    pub region: Region,
    pub near_zero: bool,
    /// No external reader has confirmed the result yet.
    pub screening_only: bool,
    pub rationale: Vec<String>,
}

/// Places an audit on the diagnostic map.
///
/// * near zero: `|ΔEvi| <= epsilon` and `σ_shuf <= epsilon_sd`
/// * `ΔEvi >= delta_pos` gives `evidence_sensitive`
/// * near zero with severe skew, or with query-only accuracy that metadata
///   does not explain (`MPDS < mpds_direct`), gives `warning_question_dominant`
/// * otherwise near zero splits on MPDS into direct and latent coupling
/// * everything else is `indeterminate`
pub fn classify_region(
    stats: &AuditStatistics,
    diag: &Diagnostics,
    th: &Thresholds,
) -> RegionVerdict {
    let mut rationale = Vec::new();
    let delta = stats.delta_evi;
    let sigma = stats.sigma_shuf;
    let near_zero = delta.abs() <= th.epsilon && sigma <= th.epsilon_sd;
    if near_zero {
        rationale.push(format!(
            "near-zero: |ΔEvi| = {:.4} <= {} and σ_shuf = {:.4} <= {}",
            delta.abs(),
            th.epsilon,
            sigma,
            th.epsilon_sd
        ));
    }

    let region = if delta >= th.delta_pos {
        rationale.push(format!(
            "evidence-sensitive: ΔEvi = {delta:.4} >= {}",
            th.delta_pos
        ));
        Region::EvidenceSensitive
    } else if near_zero {
        let skewed = diag.majority_fraction >= th.skew;
        if skewed {
            rationale.push(format!(
                "label skew: majority fraction {:.4} >= {}",
                diag.majority_fraction, th.skew
            ));
        }
        let mut query_dominant = false;
        if let Some(q) = diag.query_only_accuracy.filter(|&q| q >= th.query_dominance) {
            match stats.mpds {
                Some(m) if m >= th.mpds_direct => rationale.push(format!(
                    "query-only accuracy {q:.4} >= {} is explained by metadata (MPDS {m:.4} >= {})",
                    th.query_dominance, th.mpds_direct
                )),
                _ => {
                    query_dominant = true;
                    rationale.push(format!(
                        "query dominance: query-only accuracy {q:.4} >= {}",
                        th.query_dominance
                    ));
                }
            }
        }
        match stats.mpds {
            _ if skewed || query_dominant => Region::WarningQuestionDominant,
            Some(m) if m >= th.mpds_direct => {
                rationale.push(format!("direct coupling: MPDS {m:.4} >= {}", th.mpds_direct));
                Region::DirectCoupling
            }
            Some(m) => {
                rationale.push(format!("latent coupling: MPDS {m:.4} < {}", th.mpds_direct));
                Region::LatentCoupling
            }
            None => {
                rationale.push("MPDS undefined: audited reader has zero accuracy".into());
                Region::Indeterminate
            }
        }
    } else {
        rationale.push(format!(
            "inconclusive: ΔEvi = {delta:.4}, σ_shuf = {sigma:.4} is neither near zero nor >= {}",
            th.delta_pos
        ));
        Region::Indeterminate
    };

    RegionVerdict {
        region,
        near_zero,
        screening_only: !diag.calibrated,
        rationale,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub view: InputView,
    pub reader: String,
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn accuracy(&self, view: InputView) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.view == view)
            .and_then(|r| r.accuracy)
    }
}

/// Eval accuracy of a freshly trained internal reader per view. A view that
/// fails to train is reported in its row; the others still run.
pub fn run_ablation_table(
    dataset: &Dataset,
    views: &[InputView],
    hyper: &LrHyper,
) -> Result<AblationTable, AuditError> {
    dataset.require_splits()?;
    let rows = views
        .iter()
        .map(|&view| {
            let spec = ReaderSpec::for_view(view, hyper);
            let outcome = spec
                .train(&dataset.train, &dataset.schema)
                .and_then(|reader| {
                    let name = reader.info().name;
                    let preds = reader.predict(&dataset.eval, view)?;
                    Ok((name, crate::readers::accuracy(&preds, &dataset.eval)?))
                });
            row(view, spec_name(&spec), outcome)
        })
        .collect();
    Ok(AblationTable { rows })
}

/// Ablations for an already-trained (typically external) reader: the same
/// reader predicts under each requested view.
pub fn run_reader_ablations(
    dataset: &Dataset,
    reader: &dyn Reader,
    views: &[InputView],
) -> Result<AblationTable, AuditError> {
    dataset.require_splits()?;
    let name = reader.info().name;
    let rows = views
        .iter()
        .map(|&view| {
            let outcome = reader
                .predict(&dataset.eval, view)
                .and_then(|preds| crate::readers::accuracy(&preds, &dataset.eval))
                .map(|acc| (name.clone(), acc));
            row(view, name.clone(), outcome)
        })
        .collect();
    Ok(AblationTable { rows })
}

fn spec_name(spec: &ReaderSpec) -> String {
    match spec {
        ReaderSpec::Majority => "metadata-majority".into(),
        ReaderSpec::TfidfLr { view, .. } => format!("tfidf-lr/{view}"),
    }
}

fn row(view: InputView, fallback: String, outcome: Result<(String, f64), ReaderError>) -> AblationRow {
    match outcome {
        Ok((reader, acc)) => AblationRow {
            view,
            reader,
            accuracy: Some(acc),
            error: None,
        },
        Err(e) => AblationRow {
            view,
            reader: fallback,
            accuracy: None,
            error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::item;

    fn stats(acc_meta: f64, acc_full: f64, delta: f64, sigma: f64) -> AuditStatistics {
        AuditStatistics {
            acc_meta,
            acc_full,
            acc_shuf_mean: acc_full - delta,
            sigma_shuf: sigma,
            acc_chance: 0.25,
            mpds: mpds(acc_meta, acc_full),
            mpds_chance_corrected: chance_corrected_mpds(acc_meta, acc_full, 0.25),
            delta_evi: delta,
            k: 8,
            runs: vec![],
        }
    }

    fn diag(majority: f64, query_only: Option<f64>) -> Diagnostics {
        Diagnostics {
            majority_fraction: majority,
            query_only_accuracy: query_only,
            calibrated: false,
        }
    }

    fn run_from(correct: usize, n: usize, seed: u64) -> ShuffleRun {
        let bits = (0..n).map(|i| i < correct).collect();
        ShuffleRun::new(
            EvidencePermutation {
                seed,
                mapping: (0..n).collect(),
            },
            bits,
        )
    }

    #[test]
    fn two_items_have_one_derangement() {
        for seed in 0..20 {
            assert_eq!(sample_derangement(2, seed).unwrap().mapping, [1, 0]);
        }
        assert!(matches!(sample_derangement(1, 0), Err(AuditError::NoDerangement(1))));
        assert!(matches!(sample_derangement(0, 0), Err(AuditError::NoDerangement(0))));
    }

    #[test]
    fn derangement_is_seed_deterministic() {
        assert_eq!(
            sample_derangement(50, 7).unwrap(),
            sample_derangement(50, 7).unwrap()
        );
        assert_ne!(
            sample_derangement(50, 7).unwrap().mapping,
            sample_derangement(50, 8).unwrap().mapping
        );
    }

    #[test]
    fn swap_exchanges_evidence_only() {
        let eval = vec![
            item("a", "FULL", "bridge", "date"),
            item("b", "CONFLICT", "comparison", "entity"),
        ];
        let perm = sample_derangement(2, 0).unwrap();
        let shuffled = apply_shuffle(&eval, &perm).unwrap();
        assert_eq!(shuffled[0].evidence, eval[1].evidence);
        assert_eq!(shuffled[1].evidence, eval[0].evidence);
        assert_eq!(shuffled[0].gold_label, "FULL");
        assert_eq!(shuffled[1].query, eval[1].query);
        let back = apply_shuffle(&shuffled, &perm.inverse()).unwrap();
        assert_eq!(back, eval);
    }

    #[test]
    fn shuffle_rejects_size_mismatch() {
        let eval = vec![item("a", "FULL", "bridge", "date")];
        let perm = sample_derangement(3, 0).unwrap();
        assert!(matches!(
            apply_shuffle(&eval, &perm),
            Err(AuditError::InvalidArgument(_))
        ));
    }

    #[test]
    fn dispersion_closed_forms() {
        let (mean, sigma) =
            shuffle_dispersion(&[run_from(5, 10, 1), run_from(7, 10, 2)]).unwrap();
        assert!((mean - 0.6).abs() < 1e-15);
        assert!((sigma - 0.1).abs() < 1e-15);

        let same: Vec<_> = (0..8).map(|s| run_from(7, 10, s)).collect();
        let (mean, sigma) = shuffle_dispersion(&same).unwrap();
        assert_eq!(mean, 0.7);
        assert_eq!(sigma, 0.0);

        assert!(shuffle_dispersion(&[]).is_err());
    }

    #[test]
    fn mpds_conflation_example() {
        assert_eq!(mpds(0.5, 0.5), Some(1.0));
        assert_eq!(mpds(0.8, 0.8), Some(1.0));
        assert_eq!(mpds(0.3, 0.0), None);
        // binary chance 0.5: the first system is at chance, the second is not
        assert_eq!(chance_corrected_mpds(0.5, 0.5, 0.5), None);
        assert_eq!(chance_corrected_mpds(0.8, 0.8, 0.5), Some(1.0));
        let low = chance_corrected_mpds(0.45, 0.5, 0.4).unwrap();
        let high = chance_corrected_mpds(0.75, 0.8, 0.4).unwrap();
        assert!((low - 0.5).abs() < 1e-12);
        assert!((high - 0.875).abs() < 1e-12);
        assert_eq!(chance_corrected_mpds(0.5, 0.4, 0.4), None);
    }

    #[test]
    fn region_examples() {
        let th = Thresholds::default();
        let direct = classify_region(&stats(1.0, 1.0, 0.0, 0.0), &diag(0.3, None), &th);
        assert_eq!(direct.region, Region::DirectCoupling);
        assert!(direct.near_zero && direct.screening_only);

        let latent = classify_region(&stats(0.5466, 0.85, 0.0, 0.0), &diag(0.25, Some(0.85)), &th);
        assert_eq!(latent.region, Region::LatentCoupling);

        let warning =
            classify_region(&stats(0.9633, 0.975, 0.0, 0.001), &diag(0.963, Some(0.975)), &th);
        assert_eq!(warning.region, Region::WarningQuestionDominant);
        assert!(warning.rationale.iter().any(|r| r.contains("label skew")));
        assert!(warning.rationale.iter().any(|r| r.contains("query-only accuracy")));

        let sensitive = classify_region(&stats(0.2, 1.0, 0.808, 0.01), &diag(0.2, Some(0.2)), &th);
        assert_eq!(sensitive.region, Region::EvidenceSensitive);
        assert!(!sensitive.near_zero);

        let unstable = classify_region(&stats(0.6, 0.9, 0.0, 0.03), &diag(0.3, None), &th);
        assert_eq!(unstable.region, Region::Indeterminate);
        let middling = classify_region(&stats(0.6, 0.9, 0.03, 0.0), &diag(0.3, None), &th);
        assert_eq!(middling.region, Region::Indeterminate);
    }

    #[test]
    fn query_dominance_only_warns_when_metadata_falls_short() {
        let th = Thresholds::default();
        let explained = classify_region(&stats(1.0, 1.0, 0.0, 0.0), &diag(0.3, Some(1.0)), &th);
        assert_eq!(explained.region, Region::DirectCoupling);
        assert!(explained.rationale.iter().any(|r| r.contains("explained by metadata")));

        let dominant = classify_region(&stats(0.6, 0.95, 0.0, 0.0), &diag(0.3, Some(0.95)), &th);
        assert_eq!(dominant.region, Region::WarningQuestionDominant);
    }

    #[test]
    fn thresholds_validation() {
        assert!(Thresholds::default().validate().is_ok());
        let neg = Thresholds {
            epsilon: -0.1,
            ..Thresholds::default()
        };
        assert!(neg.validate().is_err());
        let inverted = Thresholds {
            delta_pos: 0.005,
            ..Thresholds::default()
        };
        assert!(inverted.validate().is_err());
    }

    #[test]
    fn shuffle_runs_serialize_bits_compactly() {
        let run = run_from(2, 4, 3);
        let json = serde_json::to_value(&run).unwrap();
        assert_eq!(json["per_item_correct"], "1100");
        let back: ShuffleRun = serde_json::from_value(json).unwrap();
        assert_eq!(back, run);
    }
}
