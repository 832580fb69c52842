//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use clap::Parser;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eagat::activation_sort::{make_labels, rank_map, LabelScheme};
use eagat::autodiff::{Tape, Tensor};
use eagat::data::{evaluate, generate_synthetic, Corpus, Prediction, SyntheticSpec};
use eagat::egat::split_adjacency;
use eagat::model::{
    gradient_audit, stop_gradient_audit, ModelConfig, ModelState, StopGradientStatus,
};
use eagat::segmentation::{build_multimask, mask_partition, Clause, Document};
use eagat_cli::{cmd_train, Cli, Command, RunRecord};

/// Gradient audit: largest relative error allowed.
const GRAD_REL_TOL: f64 = 1e-4;
/// Depth telescoping tolerance.
const TELESCOPE_TOL: f64 = 1e-9;
/// Ablation: sort may trail tanh by at most this much pair-F1.
const ABLATION_MARGIN: f64 = 0.02;
const OVERFIT_STEPS: usize = 500;
const ABLATION_STEPS: usize = 500;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_labels() -> Outcome {
    let got = make_labels(10, LabelScheme::Log2).map_err(|e| e.to_string())?;
    let want = vec![1, 1, 1, 2, 2, 2, 2, 4, 4, 8];
    check(got == want, format!("{got:?}"))
}

fn audit_doc() -> (Corpus, ModelConfig) {
    let spec = SyntheticSpec {
        clauses: (5, 5),
        sentences: (2, 2),
        pairs: (1, 2),
    };
    let corpus = generate_synthetic(1, 0, spec).expect("valid spec");
    (corpus, ModelConfig::default())
}

fn c2_gradient_audit() -> Outcome {
    let (corpus, cfg) = audit_doc();
    let doc = &corpus.documents[0];
    if doc.len() != 5 || doc.num_sentences() != 2 {
        return Err(format!(
            "document shape {}x{}",
            doc.len(),
            doc.num_sentences()
        ));
    }
    let state = ModelState::new(cfg, corpus.vocabulary.clone()).map_err(|e| e.to_string())?;
    let report = gradient_audit(doc, &state).map_err(|e| e.to_string())?;
    let worst = report
        .groups
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("groups");
    let all = report.groups.iter().all(|g| g.max_rel_error < GRAD_REL_TOL);
    check(
        all,
        format!(
            "{} groups, worst {} rel err {:.2e}",
            report.groups.len(),
            worst.name,
            worst.max_rel_error
        ),
    )
}

fn c3_stop_gradient() -> Outcome {
    let (corpus, cfg) = audit_doc();
    let doc = &corpus.documents[0];
    let mut details = Vec::new();
    let mut ok = true;
    for layers in [2, 3] {
        let cfg = ModelConfig {
            num_layers: layers,
            ..cfg.clone()
        };
        let on =
            ModelState::new(cfg.clone(), corpus.vocabulary.clone()).map_err(|e| e.to_string())?;
        let off = ModelState::new(
            ModelConfig {
                disable_stop_gradient: true,
                ..cfg
            },
            corpus.vocabulary.clone(),
        )
        .map_err(|e| e.to_string())?;
        let on = stop_gradient_audit(doc, &on).map_err(|e| e.to_string())?;
        let off = stop_gradient_audit(doc, &off).map_err(|e| e.to_string())?;
        let zero = on
            .transitions
            .iter()
            .all(|t| t.term_grad == 0.0 && t.gap_grad == 0.0);
        let flips = off.transitions.iter().all(|t| t.gap_grad > 0.0);
        ok &= zero
            && flips
            && on.status == StopGradientStatus::Pass
            && off.status == StopGradientStatus::ExpectedFail;
        let max_off = off
            .transitions
            .iter()
            .map(|t| t.gap_grad)
            .fold(0.0, f64::max);
        details.push(format!(
            "L={layers}: enabled max 0, disabled max {max_off:.2e}"
        ));
    }
    check(ok, details.join("; "))
}

fn random_document(rng: &mut ChaCha8Rng, k: usize) -> Document {
    let n = rng.gen_range(1..=12);
    let mut sid = 1;
    let clauses = (0..n)
        .map(|i| {
            if i > 0 && rng.gen_bool(0.35) {
                sid += 1;
            }
            Clause::new(format!("clause {i}"), sid)
        })
        .collect();
    Document::unlabeled(format!("d{k}"), clauses).expect("valid document")
}

fn c4_mask_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..200 {
        let doc = random_document(&mut rng, k);
        let n = doc.len();
        let ids = doc.sentence_ids();
        let mask = build_multimask(&doc);
        for i in 0..n {
            for j in 0..n {
                let oracle = if i == j {
                    0
                } else if ids[i] == ids[j] {
                    1
                } else {
                    2
                };
                if mask.get(i, j) != oracle {
                    return Err(format!(
                        "doc {k}: M[{i}][{j}] = {} vs {oracle}",
                        mask.get(i, j)
                    ));
                }
            }
        }
        let parts: Vec<Vec<Vec<bool>>> = (0..3)
            .map(|m| mask_partition(&mask, m).expect("valid relation"))
            .collect();
        for i in 0..n {
            for j in 0..n {
                let hits = parts.iter().filter(|p| p[i][j]).count();
                if hits != 1 {
                    return Err(format!("doc {k}: ({i}, {j}) lies in {hits} partitions"));
                }
            }
        }
        let a = Tensor::from_fn(n, n, |_, _| rng.gen_range(-3.0..3.0));
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let [a0, a1, a2] = split_adjacency(&mut tape, av, &mask).map_err(|e| e.to_string())?;
        let sum = tape
            .value(a0)
            .zip_map(tape.value(a1), |x, y| x + y)
            .zip_map(tape.value(a2), |x, y| x + y);
        if sum.data() != a.data() {
            return Err(format!("doc {k}: sum of A_m differs from A"));
        }
    }
    Ok("200 documents".into())
}

fn c5_telescoping() -> Outcome {
    let corpus = generate_synthetic(10, 5, SyntheticSpec::default()).expect("valid spec");
    let cfg = ModelConfig {
        num_layers: 3,
        ..Default::default()
    };
    let state = ModelState::new(cfg, corpus.vocabulary.clone()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for doc in &corpus.documents {
        let trace = state.forward(doc).map_err(|e| e.to_string())?;
        let l = &trace.layers;
        let g2 = l[1].rank_grid.as_ref().ok_or("layer 2 has no rank grid")?;
        let g3 = l[2].rank_grid.as_ref().ok_or("layer 3 has no rank grid")?;
        let lhs = l[2].adjacency.zip_map(&l[0].adjacency, |a, b| a - b);
        let rhs = g2.zip_map(g3, |a, b| a + b);
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    check(
        worst <= TELESCOPE_TOL,
        format!("max |diff| {worst:.2e} over 10 documents"),
    )
}

/// Task loss of the output layer, summed over the corpus.
fn output_layer_loss(state: &ModelState, docs: &[Document]) -> f64 {
    docs.iter()
        .map(|d| {
            let r = state.loss(d).expect("finite loss");
            let l = r.per_layer.last().expect("at least one layer");
            l.loss_e + l.loss_c + l.loss_pair
        })
        .sum()
}

fn c6_overfit() -> Outcome {
    let corpus = generate_synthetic(20, 0, SyntheticSpec::default()).expect("valid spec");
    let docs = &corpus.documents;
    let mut f1 = Vec::new();
    let mut loss = Vec::new();
    for layers in [2, 1] {
        let cfg = ModelConfig {
            num_layers: layers,
            ..Default::default()
        };
        let mut state =
            ModelState::new(cfg, corpus.vocabulary.clone()).map_err(|e| e.to_string())?;
        state
            .train(docs, OVERFIT_STEPS, |_, _| {})
            .map_err(|e| e.to_string())?;
        let preds = state
            .predict_all(docs, state.config.threshold)
            .map_err(|e| e.to_string())?;
        f1.push(evaluate(&preds, docs).map_err(|e| e.to_string())?.pair.f1);
        loss.push(output_layer_loss(&state, docs));
    }
    check(
        f1[0] == 1.0 && loss[0] <= loss[1],
        format!(
            "L=2 pair-F1 {:.3}; output-layer loss L=2 {:.3} vs L=1 {:.3}",
            f1[0], loss[0], loss[1]
        ),
    )
}

fn c7_ablation() -> Outcome {
    let mut means = Vec::new();
    for bridge in ["sort", "tanh"] {
        let mut total = 0.0;
        for seed in 0..5u64 {
            let full =
                generate_synthetic(40, 100 + seed, SyntheticSpec::default()).expect("valid spec");
            let train = Corpus::new(full.documents[..20].to_vec()).map_err(|e| e.to_string())?;
            let test = &full.documents[20..];
            let mut cfg = ModelConfig {
                seed,
                ..Default::default()
            };
            cfg.set("bridge", bridge).map_err(|e| e.to_string())?;
            let mut state =
                ModelState::new(cfg, train.vocabulary.clone()).map_err(|e| e.to_string())?;
            state
                .train(&train.documents, ABLATION_STEPS, |_, _| {})
                .map_err(|e| e.to_string())?;
            let preds = state
                .predict_all(test, state.config.threshold)
                .map_err(|e| e.to_string())?;
            total += evaluate(&preds, test).map_err(|e| e.to_string())?.pair.f1;
        }
        means.push(total / 5.0);
    }
    check(
        means[0] >= means[1] - ABLATION_MARGIN,
        format!(
            "held-out pair-F1 sort {:.4} vs tanh {:.4}",
            means[0], means[1]
        ),
    )
}

fn random_set<T: Ord>(rng: &mut ChaCha8Rng, all: Vec<T>, p: f64) -> BTreeSet<T> {
    all.into_iter().filter(|_| rng.gen_bool(p)).collect()
}

fn f1_oracle(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn c8_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..100 {
        let mut docs = Vec::new();
        let mut preds = Vec::new();
        // [emotion, cause, pair, negative pair] x [tp, fp, fn]
        let mut counts = [[0usize; 3]; 4];
        for k in 0..rng.gen_range(1..=6) {
            let n = rng.gen_range(1..=7);
            let grid: Vec<(usize, usize)> =
                (1..=n).flat_map(|i| (1..=n).map(move |j| (i, j))).collect();
            let pairs = random_set(&mut rng, grid.clone(), 0.15);
            let mut emo: BTreeSet<usize> = pairs.iter().map(|p| p.0).collect();
            let mut cau: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
            emo.extend((1..=n).choose_multiple(&mut rng, 1));
            cau.extend(random_set(&mut rng, (1..=n).collect(), 0.2));
            let clauses = (1..=n).map(|i| Clause::new(format!("c{i}"), 1)).collect();
            let doc = Document::new(format!("t{trial}-{k}"), clauses, emo, cau, pairs)
                .map_err(|e| e.to_string())?;
            let pred = Prediction::new(
                doc.doc_id(),
                random_set(&mut rng, (1..=n).collect(), 0.4),
                random_set(&mut rng, (1..=n).collect(), 0.4),
                random_set(&mut rng, grid.clone(), 0.2),
            );
            for i in 1..=n {
                for (slot, (p, g)) in [
                    (pred.emotions.contains(&i), doc.emotions().contains(&i)),
                    (pred.causes.contains(&i), doc.causes().contains(&i)),
                ]
                .into_iter()
                .enumerate()
                {
                    tally(&mut counts[slot], p, g);
                }
            }
            for pair in &grid {
                let p = pred.pairs.contains(pair);
                let g = doc.pairs().contains(pair);
                tally(&mut counts[2], p, g);
                tally(&mut counts[3], !p, !g);
            }
            docs.push(doc);
            preds.push(pred);
        }
        preds.reverse();
        let r = evaluate(&preds, &docs).map_err(|e| e.to_string())?;
        let got = [r.emotion, r.cause, r.pair, r.pair_negative];
        for (s, c) in got.iter().zip(&counts) {
            if [s.tp, s.fp, s.fn_] != *c || s.f1 != f1_oracle(c[0], c[1], c[2]) {
                return Err(format!("trial {trial}: {s:?} vs counts {c:?}"));
            }
        }
        if r.avg_f1 != (r.pos_f1 + r.neg_f1) / 2.0 || r.pos_f1 != r.pair.f1 {
            return Err(format!(
                "trial {trial}: avgF1 {} pos {} neg {}",
                r.avg_f1, r.pos_f1, r.neg_f1
            ));
        }
    }
    Ok("100 random prediction/gold sets".into())
}

fn tally(c: &mut [usize; 3], predicted: bool, gold: bool) {
    match (predicted, gold) {
        (true, true) => c[0] += 1,
        (true, false) => c[1] += 1,
        (false, true) => c[2] += 1,
        (false, false) => {}
    }
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = generate_synthetic(6, 9, SyntheticSpec::default()).expect("valid spec");
    let corpus_path = dir.path().join("corpus.jsonl");
    corpus.save(&corpus_path).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(format!("{run}.json"));
        let cli = Cli::try_parse_from([
            "eagat",
            "train",
            "--corpus",
            corpus_path.to_str().expect("utf-8 path"),
            "--seed",
            "3",
            "--steps",
            "25",
            "--set",
            "hidden_size=16",
            "--out",
            out.to_str().expect("utf-8 path"),
        ])
        .map_err(|e| e.to_string())?;
        let Command::Train(args) = cli.command else {
            return Err("parsed a different command".into());
        };
        cmd_train(args, &mut RunRecord::default()).map_err(|e| e.message)?;
        let log = fs::read(format!("{}.losses.jsonl", out.display())).map_err(|e| e.to_string())?;
        let ckpt = fs::read(&out).map_err(|e| e.to_string())?;
        outputs.push((log, ckpt));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    check(
        a.0 == b.0 && a.1 == b.1 && !a.0.is_empty(),
        format!(
            "loss log {} bytes, checkpoint {} bytes",
            a.0.len(),
            a.1.len()
        ),
    )
}

fn c10_rank_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..1000 {
        let n = rng.gen_range(1..=40);
        let yhat: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        // The clip bounds contain the image of [0, 1], so the map stays
        // strictly increasing.
        let moved: Vec<f64> = yhat
            .iter()
            .map(|y| (2.0 * y - 0.1).clamp(-0.1, 1.9))
            .collect();
        for scheme in [LabelScheme::Log2, LabelScheme::Linear] {
            let labels = make_labels(n, scheme).map_err(|e| e.to_string())?;
            let a = rank_map(&yhat, &labels).map_err(|e| e.to_string())?;
            let b = rank_map(&moved, &labels).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("sequence {k} ({scheme}): {a:?} vs {b:?}"));
            }
        }
    }
    Ok("1000 sequences, both schemes".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("label-scheme fidelity", c1_labels),
        ("gradient audit", c2_gradient_audit),
        ("stop-gradient contract", c3_stop_gradient),
        ("mask algebra", c4_mask_algebra),
        ("depth telescoping", c5_telescoping),
        ("overfit oracle", c6_overfit),
        ("sort vs tanh ablation", c7_ablation),
        ("metric oracle", c8_metrics),
        ("training determinism", c9_determinism),
        ("rank_map monotone invariance", c10_rank_invariance),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.2}s]", k + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
