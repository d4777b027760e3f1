//! Text metrics over candidate/reference pairs: accuracy, match, corpus
//! BLEU, ROUGE-L, CIDEr-D, and the blended final score.
//!
//! All metrics share one tokenizer ([`normalize`]) and operate on
//! [`EvalPair`]s. Corpus-level metrics (BLEU, CIDEr-D) aggregate counts or
//! document frequencies across the whole pair list, so the same pair can
//! score differently depending on the corpus it is evaluated in — that is
//! intentional and matches how these metrics are defined.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{FinalWeights, MetricConfig, ObjectTag, TaskCategory};
use crate::tags::extract_tags;

/// Joins n-gram tokens into one hash key; never appears in normalized
/// tokens because the tokenizer splits on whitespace.
const GRAM_SEP: char = '\u{1}';

/// CIDEr-D always works over 1..=4-grams.
const CIDER_ORDERS: usize = 4;

/// Function words ignored when comparing answer content. Deliberately does
/// not include "yes"/"no"/"not" or direction words — those carry the whole
/// meaning of many driving answers.
const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "am", "was", "were", "be", "been", "being", "to", "of", "in",
    "on", "at", "by", "for", "with", "and", "or", "as", "it", "its", "this", "that", "these",
    "those", "there", "then", "than", "from", "into", "onto", "over", "under", "about", "after",
    "before", "while", "during", "will", "would", "shall", "should", "can", "could", "may",
    "might", "must", "do", "does", "did", "have", "has", "had", "having", "i", "we", "you", "he",
    "she", "they", "them", "his", "her", "their", "our",
];

/// One scoring unit: a candidate answer against one or more references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub qa_id: String,
    pub category: TaskCategory,
    /// Question text; carried for the judge prompt, ignored by the text
    /// metrics.
    #[serde(default)]
    pub question: String,
    /// May be empty (a missing or blank prediction scores zero).
    pub candidate: String,
    /// At least one reference.
    pub references: Vec<String>,
    pub candidate_tags: Vec<ObjectTag>,
    /// Tags derived from the first reference (the ground-truth answer).
    pub gt_tags: Vec<ObjectTag>,
}

impl EvalPair {
    pub fn new(
        qa_id: impl Into<String>,
        category: TaskCategory,
        candidate: impl Into<String>,
        references: Vec<String>,
    ) -> Result<EvalPair> {
        if references.is_empty() {
            return Err(CoreError::EmptyInput);
        }
        let candidate = candidate.into();
        let candidate_tags = extract_tags(&candidate);
        let gt_tags = extract_tags(&references[0]);
        Ok(EvalPair {
            qa_id: qa_id.into(),
            category,
            question: String::new(),
            candidate,
            references,
            candidate_tags,
            gt_tags,
        })
    }

    pub fn with_question(mut self, question: impl Into<String>) -> EvalPair {
        self.question = question.into();
        self
    }
}

/// Lowercase, split on whitespace, strip trailing `.`, `,`, `!`, `?` from
/// each token, and drop tokens that become empty. Object tags like `<c1>`
/// survive as single tokens.
pub fn normalize(text: &str) -> Vec<String> {
    normalize_opts(text, true, true)
}

/// [`normalize`] honoring the normalization flags in `cfg`.
pub fn normalize_with(text: &str, cfg: &MetricConfig) -> Vec<String> {
    normalize_opts(text, cfg.lowercase, cfg.strip_terminal_punct)
}

fn normalize_opts(text: &str, lowercase: bool, strip_terminal_punct: bool) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|word| {
            let word = if lowercase {
                word.to_lowercase()
            } else {
                word.to_string()
            };
            let word = if strip_terminal_punct {
                word.trim_end_matches(['.', ',', '!', '?']).to_string()
            } else {
                word
            };
            if word.is_empty() {
                None
            } else {
                Some(word)
            }
        })
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window.join(&GRAM_SEP.to_string())).or_insert(0) += 1;
    }
    counts
}

fn ensure_pairs(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(CoreError::EmptyEvalSet);
    }
    Ok(())
}

/// Fraction of pairs whose normalized candidate exactly equals a normalized
/// reference.
pub fn accuracy(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<f64> {
    ensure_pairs(pairs)?;
    let hits = pairs
        .iter()
        .filter(|p| {
            let cand = normalize_with(&p.candidate, cfg);
            p.references
                .iter()
                .any(|r| normalize_with(r, cfg) == cand)
        })
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

fn content_words(tokens: &[String]) -> BTreeSet<String> {
    let filtered: BTreeSet<String> = tokens
        .iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .cloned()
        .collect();
    if filtered.is_empty() {
        // All-stopword answers ("It is.") still need something to compare.
        tokens.iter().cloned().collect()
    } else {
        filtered
    }
}

/// Recall-style overlap score in [0, 1].
///
/// When the ground truth mentions object tags, the score is the fraction of
/// ground-truth tag ids the candidate also mentions. Otherwise it falls
/// back to content-word recall against the reference, taking the best
/// reference when several are given.
pub fn match_score(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<f64> {
    ensure_pairs(pairs)?;
    let total: f64 = pairs.iter().map(|p| pair_match(p, cfg)).sum();
    Ok(total / pairs.len() as f64)
}

fn pair_match(pair: &EvalPair, cfg: &MetricConfig) -> f64 {
    if !pair.gt_tags.is_empty() {
        let gt_ids: BTreeSet<&str> = pair.gt_tags.iter().map(|t| t.id()).collect();
        let cand_ids: BTreeSet<&str> = pair.candidate_tags.iter().map(|t| t.id()).collect();
        let hit = gt_ids.intersection(&cand_ids).count();
        return hit as f64 / gt_ids.len() as f64;
    }
    let cand_words = content_words(&normalize_with(&pair.candidate, cfg));
    pair.references
        .iter()
        .map(|r| {
            let gt_words = content_words(&normalize_with(r, cfg));
            if gt_words.is_empty() {
                return 0.0;
            }
            let hit = gt_words.intersection(&cand_words).count();
            hit as f64 / gt_words.len() as f64
        })
        .fold(0.0, f64::max)
}

struct BleuStats {
    /// Per order (index 0 = unigrams): clipped matches and candidate totals.
    clipped: Vec<u64>,
    totals: Vec<u64>,
    candidate_len: u64,
    effective_ref_len: u64,
}

fn bleu_stats(pairs: &[EvalPair], max_n: usize, cfg: &MetricConfig) -> BleuStats {
    let mut stats = BleuStats {
        clipped: vec![0; max_n],
        totals: vec![0; max_n],
        candidate_len: 0,
        effective_ref_len: 0,
    };
    for pair in pairs {
        let cand = normalize_with(&pair.candidate, cfg);
        let refs: Vec<Vec<String>> = pair
            .references
            .iter()
            .map(|r| normalize_with(r, cfg))
            .collect();

        stats.candidate_len += cand.len() as u64;
        // Closest reference length; ties go to the shorter reference.
        let closest = refs
            .iter()
            .map(|r| r.len() as u64)
            .min_by_key(|&len| (len.abs_diff(cand.len() as u64), len))
            .unwrap_or(0);
        stats.effective_ref_len += closest;

        for n in 1..=max_n {
            let cand_counts = ngram_counts(&cand, n);
            if cand_counts.is_empty() {
                continue;
            }
            let ref_counts: Vec<BTreeMap<String, u64>> =
                refs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &count) in &cand_counts {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                stats.clipped[n - 1] += count.min(max_ref);
            }
            stats.totals[n - 1] += cand_counts.values().sum::<u64>();
        }
    }
    stats
}

/// Corpus-level BLEU-n: geometric mean of modified 1..n-gram precisions
/// with a corpus brevity penalty. With smoothing disabled (the default),
/// any order with zero clipped matches zeroes the score.
pub fn bleu(pairs: &[EvalPair], n: usize, cfg: &MetricConfig) -> Result<f64> {
    ensure_pairs(pairs)?;
    if n == 0 || n > cfg.bleu_max_order {
        return Err(CoreError::InvalidConfig(format!(
            "BLEU order must be between 1 and {}, got {n}",
            cfg.bleu_max_order
        )));
    }
    let stats = bleu_stats(pairs, n, cfg);
    bleu_from_stats(&stats, n, cfg.bleu_smoothing_epsilon)
}

/// BLEU-1..max_order in one pass over the corpus.
pub fn bleu_all(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<Vec<f64>> {
    ensure_pairs(pairs)?;
    let max_n = cfg.bleu_max_order;
    let stats = bleu_stats(pairs, max_n, cfg);
    (1..=max_n)
        .map(|n| bleu_from_stats(&stats, n, cfg.bleu_smoothing_epsilon))
        .collect()
}

fn bleu_from_stats(stats: &BleuStats, n: usize, epsilon: Option<f64>) -> Result<f64> {
    if stats.candidate_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for i in 0..n {
        let precision = if stats.clipped[i] == 0 {
            match epsilon {
                Some(eps) => eps,
                None => return Ok(0.0),
            }
        } else {
            stats.clipped[i] as f64 / stats.totals[i] as f64
        };
        log_sum += precision.ln();
    }
    let c = stats.candidate_len as f64;
    let r = stats.effective_ref_len as f64;
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(brevity * (log_sum / n as f64).exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Corpus ROUGE-L: mean over pairs of the best F-measure against any
/// reference, with recall weighted by `rouge_beta`.
pub fn rouge_l(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<f64> {
    ensure_pairs(pairs)?;
    let beta2 = cfg.rouge_beta * cfg.rouge_beta;
    let total: f64 = pairs
        .iter()
        .map(|pair| {
            let cand = normalize_with(&pair.candidate, cfg);
            pair.references
                .iter()
                .map(|r| {
                    let rf = normalize_with(r, cfg);
                    let lcs = lcs_len(&cand, &rf) as f64;
                    if lcs == 0.0 {
                        return 0.0;
                    }
                    let p = lcs / cand.len() as f64;
                    let rec = lcs / rf.len() as f64;
                    (1.0 + beta2) * p * rec / (rec + beta2 * p)
                })
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Corpus CIDEr-D with a Gaussian length penalty (`cider_sigma`) and output
/// scale (`cider_scale`).
///
/// TF vectors use counts normalized by the sentence's n-gram total and are
/// weighted by corpus IDF, where document frequency counts the pairs whose
/// reference set mentions the n-gram. Candidate counts are clipped against
/// the reference being scored. An order contributes to a pair's mean only
/// if the candidate or a reference has n-grams of that order at all, so
/// short sentences are not punished for orders that cannot exist.
pub fn cider(pairs: &[EvalPair], cfg: &MetricConfig) -> Result<f64> {
    ensure_pairs(pairs)?;
    let tokenized: Vec<(Vec<String>, Vec<Vec<String>>)> = pairs
        .iter()
        .map(|p| {
            (
                normalize_with(&p.candidate, cfg),
                p.references
                    .iter()
                    .map(|r| normalize_with(r, cfg))
                    .collect(),
            )
        })
        .collect();

    // Document frequency per order: in how many pairs' reference sets does
    // each n-gram occur?
    let n_docs = pairs.len() as f64;
    let mut df: Vec<HashMap<String, u64>> = vec![HashMap::new(); CIDER_ORDERS];
    for (_, refs) in &tokenized {
        for (n, df_n) in df.iter_mut().enumerate() {
            let mut grams: BTreeSet<String> = BTreeSet::new();
            for r in refs {
                grams.extend(ngram_counts(r, n + 1).into_keys());
            }
            for g in grams {
                *df_n.entry(g).or_insert(0) += 1;
            }
        }
    }
    let idf = |order: usize, gram: &str| -> f64 {
        let d = df[order].get(gram).copied().unwrap_or(0).max(1);
        n_docs.ln() - (d as f64).ln()
    };

    let two_sigma2 = 2.0 * cfg.cider_sigma * cfg.cider_sigma;
    let mut corpus_total = 0.0;
    for (cand, refs) in &tokenized {
        let mut pair_total = 0.0;
        let mut included_orders = 0usize;
        for order in 0..CIDER_ORDERS {
            let n = order + 1;
            let cand_counts = ngram_counts(cand, n);
            let cand_total: u64 = cand_counts.values().sum();
            let ref_counts: Vec<(BTreeMap<String, u64>, u64, usize)> = refs
                .iter()
                .map(|r| {
                    let counts = ngram_counts(r, n);
                    let total = counts.values().sum();
                    (counts, total, r.len())
                })
                .collect();
            // Skip orders that cannot exist on either side: a 3-token
            // sentence has no 4-grams, and that is not a mismatch.
            if cand_total == 0 && ref_counts.iter().all(|(_, t, _)| *t == 0) {
                continue;
            }
            included_orders += 1;

            let mut order_sum = 0.0;
            for (rc, ref_total, ref_len) in &ref_counts {
                let mut dot = 0.0;
                let mut cand_norm2 = 0.0;
                let mut ref_norm2 = 0.0;
                for (gram, &cc) in &cand_counts {
                    let rcount = rc.get(gram).copied().unwrap_or(0);
                    let w = idf(order, gram);
                    let tf_c = cc.min(rcount) as f64 / cand_total as f64;
                    let wc = tf_c * w;
                    cand_norm2 += wc * wc;
                    if rcount > 0 && *ref_total > 0 {
                        let wr = (rcount as f64 / *ref_total as f64) * w;
                        dot += wc * wr;
                    }
                }
                for (gram, &rcount) in rc {
                    let wr = (rcount as f64 / *ref_total as f64) * idf(order, gram);
                    ref_norm2 += wr * wr;
                }
                let cos = if cand_norm2 == 0.0 || ref_norm2 == 0.0 {
                    0.0
                } else {
                    dot / (cand_norm2.sqrt() * ref_norm2.sqrt())
                };
                let len_diff = cand.len() as f64 - *ref_len as f64;
                let gauss = (-(len_diff * len_diff) / two_sigma2).exp();
                order_sum += gauss * cos;
            }
            pair_total += cfg.cider_scale * order_sum / refs.len() as f64;
        }
        if included_orders > 0 {
            corpus_total += pair_total / included_orders as f64;
        }
    }
    Ok(corpus_total / n_docs)
}

/// Language quality in [0, 1]: mean of (mean BLEU, ROUGE-L, CIDEr rescaled
/// back to [0, 1]).
pub fn language_score(bleu: &[f64], rouge_l: f64, cider: f64, cider_scale: f64) -> f64 {
    let bleu_mean = if bleu.is_empty() {
        0.0
    } else {
        bleu.iter().sum::<f64>() / bleu.len() as f64
    };
    (bleu_mean + rouge_l + cider / cider_scale) / 3.0
}

/// Corpus-level inputs to the blended final score. `judge` is on the 0..100
/// scale; everything else lives in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalComponents {
    pub judge: Option<f64>,
    pub language: f64,
    pub r#match: f64,
    pub accuracy: f64,
}

/// The weights actually applied: identical to the configured weights when
/// the judge runs, otherwise the judge weight redistributed proportionally
/// over the remaining components.
pub fn effective_weights(weights: &FinalWeights, judge_enabled: bool) -> Result<FinalWeights> {
    weights.validate()?;
    if judge_enabled {
        return Ok(*weights);
    }
    let rest = 1.0 - weights.judge;
    if rest <= 1e-12 {
        return Err(CoreError::WeightsInvalid(
            "judge is disabled but the judge weight is 1.0, leaving nothing to score".to_string(),
        ));
    }
    Ok(FinalWeights {
        judge: 0.0,
        language: weights.language / rest,
        r#match: weights.r#match / rest,
        accuracy: weights.accuracy / rest,
    })
}

/// Weighted blend of judge (rescaled to [0, 1]), language, match, and
/// accuracy. With the judge absent its weight is redistributed, so the
/// result always stays a convex combination.
pub fn final_score(components: &FinalComponents, weights: &FinalWeights) -> Result<f64> {
    let w = effective_weights(weights, components.judge.is_some())?;
    let judge_part = components.judge.map(|j| j / 100.0).unwrap_or(0.0);
    Ok(w.judge * judge_part
        + w.language * components.language
        + w.r#match * components.r#match
        + w.accuracy * components.accuracy)
}

/// Every corpus metric in one bundle; the shape of one row of the final
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub accuracy: f64,
    pub r#match: f64,
    /// BLEU-1..BLEU-n, index 0 = BLEU-1.
    pub bleu: Vec<f64>,
    pub rouge_l: f64,
    pub cider: f64,
    /// Mean judge score on the 0..100 scale, when judging ran.
    pub judge: Option<f64>,
    pub language: f64,
    pub r#final: f64,
}

/// Compute every metric over `pairs`. `judge_mean` is the mean 0..100 judge
/// score when judging ran, `None` otherwise.
pub fn corpus_scores(
    pairs: &[EvalPair],
    cfg: &MetricConfig,
    judge_mean: Option<f64>,
) -> Result<CorpusScores> {
    cfg.validate()?;
    ensure_pairs(pairs)?;
    let accuracy = accuracy(pairs, cfg)?;
    let r#match = match_score(pairs, cfg)?;
    let bleu = bleu_all(pairs, cfg)?;
    let rouge = rouge_l(pairs, cfg)?;
    let cider_score = cider(pairs, cfg)?;
    let language = language_score(&bleu, rouge, cider_score, cfg.cider_scale);
    let final_value = final_score(
        &FinalComponents {
            judge: judge_mean,
            language,
            r#match,
            accuracy,
        },
        &cfg.final_weights,
    )?;
    Ok(CorpusScores {
        accuracy,
        r#match,
        bleu,
        rouge_l: rouge,
        cider: cider_score,
        judge: judge_mean,
        language,
        r#final: final_value,
    })
}
