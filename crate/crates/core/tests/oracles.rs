//! Library outputs against independent reimplementations.

use std::collections::{BTreeMap, BTreeSet};

use evaudit_core::audit::{sample_derangement, shuffle_dispersion, EvidencePermutation, ShuffleRun};
use evaudit_core::data::{AuditItem, Dimension, MetadataSchema};
use evaudit_core::readers::{
    train_majority, train_tfidf_lr, InputView, LrHyper, LrObjective, SparseRow, TfidfVectorizer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema(labels: &[&str]) -> MetadataSchema {
    MetadataSchema::new(
        vec![
            Dimension {
                name: "question_type".into(),
                categories: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
            },
            Dimension {
                name: "answer_type".into(),
                categories: ["x", "y", "z"].iter().map(|s| s.to_string()).collect(),
            },
        ],
        labels.iter().map(|s| s.to_string()).collect(),
    )
    .unwrap()
}

fn item(id: usize, query: &str, evidence: &[&str], label: &str, qt: &str, at: &str) -> AuditItem {
    AuditItem {
        id: format!("i{id}"),
        query: query.into(),
        evidence: evidence.iter().map(|s| s.to_string()).collect(),
        gold_label: label.into(),
        metadata: [("question_type", qt), ("answer_type", at)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    }
}

#[test]
fn population_sd_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let n = 37 + trial;
        let runs: Vec<ShuffleRun> = (0..8)
            .map(|k| {
                let p = rng.gen_range(0.1..0.9);
                let flags = (0..n).map(|_| rng.gen_bool(p)).collect();
                let perm = EvidencePermutation {
                    seed: k,
                    mapping: (0..n).collect(),
                };
                ShuffleRun::new(perm, flags)
            })
            .collect();
        let accs: Vec<f64> = runs
            .iter()
            .map(|r| r.per_item_correct.iter().filter(|&&c| c).count() as f64 / n as f64)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
        let (m, s) = shuffle_dispersion(&runs).unwrap();
        assert!((m - mean).abs() <= 1e-12, "mean {m} vs {mean}");
        assert!((s - var.sqrt()).abs() <= 1e-12, "sd {s} vs {}", var.sqrt());
    }
}

fn all_derangements(n: usize) -> BTreeSet<Vec<usize>> {
    fn rec(n: usize, prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut BTreeSet<Vec<usize>>) {
        let i = prefix.len();
        if i == n {
            out.insert(prefix.clone());
            return;
        }
        for v in 0..n {
            if !used[v] && v != i {
                used[v] = true;
                prefix.push(v);
                rec(n, prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = BTreeSet::new();
    rec(n, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

#[test]
fn derangements_match_enumeration() {
    let valid = all_derangements(5);
    assert_eq!(valid.len(), 44);
    let mut hit = BTreeMap::new();
    for seed in 0..1000 {
        let p = sample_derangement(5, seed).unwrap();
        assert!(valid.contains(&p.mapping), "seed {seed}: {:?}", p.mapping);
        assert_eq!(p, sample_derangement(5, seed).unwrap());
        *hit.entry(p.mapping).or_insert(0usize) += 1;
    }
    // 1000 draws over 44 outcomes: every derangement shows up
    assert_eq!(hit.len(), 44);
    assert!(hit.values().all(|&c| c > 5 && c < 50), "{hit:?}");
    assert_eq!(sample_derangement(2, 9).unwrap().mapping, vec![1, 0]);
}

#[test]
fn majority_matches_recount_on_random_data() {
    let labels = ["A", "B", "C"];
    let sch = schema(&labels);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cats = ["a", "b", "c"];
    let ats = ["x", "y", "z"];
    for trial in 0..25 {
        let n = 5 + trial * 3;
        let train: Vec<AuditItem> = (0..n)
            .map(|i| {
                // leave (c, z) unseen so the fallback is exercised
                let (qt, at) = loop {
                    let qt = cats[rng.gen_range(0..3)];
                    let at = ats[rng.gen_range(0..3)];
                    if (qt, at) != ("c", "z") {
                        break (qt, at);
                    }
                };
                item(i, "q", &["e"], labels[rng.gen_range(0..3)], qt, at)
            })
            .collect();
        let model = train_majority(&train, &sch).unwrap();

        let recount = |subset: Vec<&AuditItem>| -> String {
            let mut counts = BTreeMap::new();
            for it in &subset {
                *counts.entry(it.gold_label.clone()).or_insert(0) += 1;
            }
            let best = counts.values().max().copied().unwrap();
            // BTreeMap iterates labels in lexicographic order
            counts.into_iter().find(|(_, c)| *c == best).unwrap().0
        };
        let global = recount(train.iter().collect());
        assert_eq!(model.global_majority(), global);
        for qt in cats {
            for at in ats {
                let members: Vec<&AuditItem> = train
                    .iter()
                    .filter(|it| it.metadata["question_type"] == qt && it.metadata["answer_type"] == at)
                    .collect();
                let expected = if members.is_empty() {
                    global.clone()
                } else {
                    recount(members)
                };
                let probe = item(0, "q", &["e"], "A", qt, at);
                let got = model.predict(&[probe], InputView::MetadataOnly).unwrap();
                assert_eq!(got[0].label, expected, "trial {trial} {qt}/{at}");
            }
        }
    }
}

#[test]
fn tfidf_three_document_oracle() {
    let docs: Vec<Vec<String>> = ["a b a", "b c", "c c d"]
        .iter()
        .map(|d| d.split(' ').map(String::from).collect())
        .collect();
    let v = TfidfVectorizer::fit(&docs, 50_000);
    let idf = |df: f64| (4.0 / (1.0 + df)).ln() + 1.0;
    let expected: Vec<Vec<(usize, f64)>> = vec![
        vec![(0, 2.0 * idf(1.0)), (1, idf(2.0))],
        vec![(1, idf(2.0)), (2, idf(2.0))],
        vec![(2, 2.0 * idf(2.0)), (3, idf(1.0))],
    ];
    assert_eq!(
        v.vocabulary.keys().collect::<Vec<_>>(),
        ["a", "b", "c", "d"]
    );
    for (doc, raw) in docs.iter().zip(expected) {
        let norm = raw.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        let row = v.transform(doc);
        assert_eq!(row.len(), raw.len());
        for ((j, x), (ej, ex)) in row.iter().zip(&raw) {
            assert_eq!(j, ej);
            assert!((x - ex / norm).abs() <= 1e-9, "{x} vs {}", ex / norm);
        }
    }
    assert!((v.idf[0] - (1.0 + 2f64.ln())).abs() <= 1e-12);
}

#[test]
fn vocabulary_cap_keeps_most_frequent_with_lexicographic_ties() {
    let docs: Vec<Vec<String>> = ["z z z y y x w", "y w v"]
        .iter()
        .map(|d| d.split(' ').map(String::from).collect())
        .collect();
    // frequencies: y 3, z 3, w 2, v 1, x 1
    let v = TfidfVectorizer::fit(&docs, 4);
    assert_eq!(v.vocabulary.keys().collect::<Vec<_>>(), ["v", "w", "y", "z"]);
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<SparseRow>, Vec<usize>, usize, usize) {
    let (n, d, k) = (12, 7, 3);
    let rows = (0..n)
        .map(|_| {
            let mut row = Vec::new();
            for j in 0..d {
                if rng.gen_bool(0.5) {
                    row.push((j, rng.gen_range(-1.0..1.0)));
                }
            }
            row
        })
        .collect();
    let targets = (0..n).map(|_| rng.gen_range(0..k)).collect();
    (rows, targets, k, d)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (rows, targets, k, d) = random_problem(&mut rng);
    let obj = LrObjective::new(&rows, &targets, k, d, 0.05);
    let h = 1e-5;
    for point in 0..20 {
        let params: Vec<f64> = (0..obj.n_params()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let grad = obj.gradient(&params);
        let numeric: Vec<f64> = (0..params.len())
            .map(|i| {
                let mut up = params.clone();
                let mut down = params.clone();
                up[i] += h;
                down[i] -= h;
                (obj.loss(&up) - obj.loss(&down)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(
            numeric.iter().map(|g| g * g).sum::<f64>().sqrt(),
        );
        let rel = diff / scale.max(1e-12);
        assert!(rel <= 1e-4, "point {point}: relative error {rel}");
    }
}

/// Dense, straight-line reimplementation of TF-IDF + softmax regression
/// trained by gradient descent, recording the loss before every update.
fn dense_gd_oracle(docs: &[Vec<String>], targets: &[usize], k: usize, hyper: &LrHyper) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut vocab: Vec<String> = docs.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let n = docs.len();
    let d = vocab.len();
    let mut x = vec![vec![0.0; d]; n];
    for (i, doc) in docs.iter().enumerate() {
        for t in doc {
            x[i][vocab.binary_search(t).unwrap()] += 1.0;
        }
    }
    for j in 0..d {
        let df = (0..n).filter(|&i| x[i][j] > 0.0).count() as f64;
        let idf = ((1.0 + n as f64) / (1.0 + df)).ln() + 1.0;
        for row in x.iter_mut() {
            row[j] *= idf;
        }
    }
    for row in x.iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    let mut w = vec![vec![0.0; d]; k];
    let mut b = vec![0.0; k];
    let mut losses = Vec::new();
    for _ in 0..hyper.epochs {
        let mut gw = vec![vec![0.0; d]; k];
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        for i in 0..n {
            let z: Vec<f64> = (0..k)
                .map(|c| b[c] + (0..d).map(|j| w[c][j] * x[i][j]).sum::<f64>())
                .collect();
            let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
            let p: Vec<f64> = z.iter().map(|v| (v - zmax).exp() / denom).collect();
            loss -= p[targets[i]].ln();
            for c in 0..k {
                let r = p[c] - if c == targets[i] { 1.0 } else { 0.0 };
                for j in 0..d {
                    gw[c][j] += r * x[i][j] / n as f64;
                }
                gb[c] += r / n as f64;
            }
        }
        let sq: f64 = w.iter().flatten().map(|v| v * v).sum();
        losses.push(loss / n as f64 + hyper.l2 / 2.0 * sq);
        for c in 0..k {
            for j in 0..d {
                w[c][j] -= hyper.learning_rate * (gw[c][j] + hyper.l2 * w[c][j]);
            }
            b[c] -= hyper.learning_rate * gb[c];
        }
    }
    (losses, w)
}

#[test]
fn lr_training_matches_straight_line_oracle() {
    let labels = ["A", "B", "C"];
    let sch = schema(&labels);
    let words = ["red", "green", "blue", "cat", "dog", "sun", "moon", "tree"];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let items: Vec<AuditItem> = (0..20)
        .map(|i| {
            let label = labels[i % 3];
            let mut q: Vec<&str> = (0..3).map(|_| words[rng.gen_range(0..words.len())]).collect();
            q.push(["alpha", "beta", "gamma"][i % 3]);
            let e1: Vec<&str> = (0..4).map(|_| words[rng.gen_range(0..words.len())]).collect();
            let e2: Vec<&str> = (0..2).map(|_| words[rng.gen_range(0..words.len())]).collect();
            item(i, &q.join(" "), &[&e1.join(" "), &e2.join(" ")], label, "a", "x")
        })
        .collect();
    let hyper = LrHyper {
        epochs: 5,
        ..LrHyper::default()
    };
    let model = train_tfidf_lr(&items, &sch, InputView::Full, &hyper).unwrap();

    // the oracle sees the same token stream, written out by hand
    let docs: Vec<Vec<String>> = items
        .iter()
        .map(|it| {
            let mut t: Vec<String> = it.query.split(' ').map(String::from).collect();
            for p in &it.evidence {
                t.push("[sep]".into());
                t.extend(p.split(' ').map(String::from));
            }
            t
        })
        .collect();
    let targets: Vec<usize> = (0..20).map(|i| i % 3).collect();
    let (losses, w) = dense_gd_oracle(&docs, &targets, 3, &hyper);
    assert_eq!(model.training_trace.len(), 5);
    for (entry, oracle) in model.training_trace.iter().zip(&losses) {
        assert!((entry.loss - oracle).abs() <= 1e-6, "epoch {}: {} vs {oracle}", entry.epoch, entry.loss);
    }
    assert!((losses[0] - 3f64.ln()).abs() <= 1e-12);
    for (row, orow) in model.weights.iter().zip(&w) {
        for (a, b) in row.iter().zip(orow) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
