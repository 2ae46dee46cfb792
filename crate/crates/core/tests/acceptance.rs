//! Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Includes one full run of the reference benchmark, so it takes
//! several minutes.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::Instant;

use common::invariants::{self, random_records};
use common::{gradcheck, random_item, GradReport};
use gcrn::experiment::{build_dataset, evaluate, train_models_observed, ExperimentConfig, Method, Mode};
use gcrn::gcn::{GcnModel, DEFAULT_WIDTHS};
use gcrn::gcrn::{EmPhase, Gcrn};
use gcrn::ingest::{coco_box, parse_coco_annotations, IngestOptions};
use gcrn::metrics::{auc, roc_area, roc_curve};
use gcrn::ooc::DEFAULT_FREE_WIDTHS;
use gcrn::rng::{self, SeededRng};
use gcrn::scene::{Violation, GEOMETRY_DIM};
use gcrn::Error;
use rand::Rng;

struct Outcome {
    passed: usize,
    failed: usize,
}

impl Outcome {
    fn record(&mut self, name: &str, ok: bool, detail: String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn gradient_soundness() -> (bool, String) {
    let cases: [(&str, &[usize], usize, bool, Option<usize>); 3] = [
        ("residual GCN 12/8/6/6, all coordinates", &[12, 8, 6, 6], 10, false, None),
        ("residual GCN 256/128/64/64, sampled coordinates", &DEFAULT_WIDTHS, 16 + GEOMETRY_DIM, false, Some(6)),
        ("context-free MLP 64/64, all coordinates", &DEFAULT_FREE_WIDTHS, 16 + GEOMETRY_DIM, true, None),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (k, (name, widths, input, identity, per_tensor)) in cases.into_iter().enumerate() {
        let mut r = rng::seeded(100 + k as u64);
        let mut total = GradReport::default();
        for i in 0..20u64 {
            let model = GcnModel::new(input, widths, 12, 7000 + 100 * k as u64 + i);
            let item = random_item(&model, !identity && i % 2 == 0, identity, &mut r);
            total.merge(gradcheck(&model, &item, 1e-4, per_tensor, &mut r));
        }
        ok &= total.max_rel_error < 1e-4 && total.checked > 0;
        details.push(format!(
            "{name}: {} checked, {} kink-skipped, max rel err {:.2e}",
            total.checked, total.skipped_kinks, total.max_rel_error
        ));
    }
    (ok, details.join("; "))
}

fn auc_oracle() -> (bool, String) {
    let mut r = rng::seeded(2024);
    let mut sets = 0;
    let mut worst_trapezoid: f64 = 0.0;
    let mut mismatches = 0;
    while sets < 1000 {
        let n = r.random_range(2..=50);
        // Half the sets draw from four score levels, so ties dominate.
        let levels = if sets % 2 == 0 { 4 } else { 1_000_000 };
        let recs = random_records(n, levels, &mut r);
        let pos = recs.iter().filter(|x| x.truth).count() as u64;
        let neg = recs.len() as u64 - pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        let mut doubled = 0u64;
        for p in recs.iter().filter(|x| x.truth) {
            for q in recs.iter().filter(|x| !x.truth) {
                doubled += if p.score > q.score {
                    2
                } else if p.score == q.score {
                    1
                } else {
                    0
                };
            }
        }
        let brute = doubled as f64 / (2 * pos * neg) as f64;
        let rank = auc(&recs).unwrap();
        if rank != brute {
            mismatches += 1;
        }
        worst_trapezoid = worst_trapezoid.max((roc_area(&roc_curve(&recs).unwrap()) - rank).abs());
        sets += 1;
    }
    (
        mismatches == 0 && worst_trapezoid < 1e-12,
        format!("{sets} sets, {mismatches} exact mismatches, max trapezoid gap {worst_trapezoid:.1e}"),
    )
}

fn invariant_suites() -> (bool, String) {
    let mut failures = Vec::new();
    let mut runs = 0;
    for (name, check) in invariants::ALL {
        let seeds = if name.starts_with("checkpoint") || name.starts_with("dataset") { 25 } else { 300 };
        for seed in 0..seeds {
            runs += 1;
            if let Err(msg) = check(seed) {
                failures.push(format!("{name} (seed {seed}): {msg}"));
                break;
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{} suites, {runs} randomized checks", invariants::ALL.len())
    } else {
        failures.join("; ")
    };
    (failures.is_empty(), detail)
}

const CORPUS: [&str; 3] = [
    r#"{"images":[{"id":1,"width":640,"height":480}],"annotations":[{"id":1,"image_id":1,"bbox":[10,20,30,40],"category_id":18,"iscrowd":0}],"categories":[{"id":18,"name":"dog"}]}"#,
    r#"{"images":[{"id":3,"width":100,"height":100},{"id":4,"width":50,"height":80}],"annotations":[{"image_id":3,"bbox":[0,0,100,100],"category_id":1},{"image_id":4,"bbox":[5.5,6.25,10,10],"category_id":2},{"image_id":4,"bbox":[1,1,1,1],"category_id":1}],"categories":[{"id":1,"name":"a"},{"id":2,"name":"b"}],"info":{"year":2014}}"#,
    r#"{"images":[],"annotations":[],"categories":[]}"#,
];

const TOKENS: [&str; 16] = [
    "{", "}", "[", "]", ",", ":", "null", "-1", "1e999", "0", "\"", "\"bbox\":[0,0,0,0]", "\"image_id\":99",
    "\"category_id\":-7", "9223372036854775808", "\\u0000",
];

fn mutate(base: &[u8], r: &mut SeededRng) -> Vec<u8> {
    let mut v = base.to_vec();
    for _ in 0..r.random_range(1..=4) {
        let len = v.len();
        match r.random_range(0..6) {
            0 if len > 0 => {
                let i = r.random_range(0..len);
                v[i] = r.random();
            }
            1 => {
                let i = r.random_range(0..=len);
                v.insert(i, r.random());
            }
            2 if len > 0 => {
                let i = r.random_range(0..len);
                let j = r.random_range(i..=len.min(i + 16));
                v.drain(i..j);
            }
            3 if len > 0 => {
                let i = r.random_range(0..len);
                let j = r.random_range(i..=len.min(i + 32));
                let chunk = v[i..j].to_vec();
                let at = r.random_range(0..=v.len());
                v.splice(at..at, chunk);
            }
            4 => {
                let t = TOKENS[r.random_range(0..TOKENS.len())].as_bytes();
                let at = r.random_range(0..=len);
                v.splice(at..at, t.iter().copied());
            }
            _ => v.truncate(r.random_range(0..=len)),
        }
    }
    v
}

fn ingestion_robustness() -> (bool, String) {
    let mut r = rng::seeded(77);
    let previous_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let (mut panics, mut parsed, mut errors) = (0, 0, 0);
    const INPUTS: usize = 100_000;
    for k in 0..INPUTS {
        let input = mutate(CORPUS[k % CORPUS.len()].as_bytes(), &mut r);
        let options = IngestOptions { lenient: k % 2 == 1 };
        match panic::catch_unwind(AssertUnwindSafe(|| parse_coco_annotations(&input, options))) {
            Err(_) => panics += 1,
            Ok(Ok(_)) => parsed += 1,
            Ok(Err(_)) => errors += 1,
        }
    }
    panic::set_hook(previous_hook);

    let mut conversion_errors = 0;
    for _ in 0..10_000 {
        let (x, y) = (f64::from(r.random_range(-100_000..100_000)), f64::from(r.random_range(-100_000..100_000)));
        let (w, h) = (f64::from(r.random_range(1..100_000)), f64::from(r.random_range(1..100_000)));
        let b = coco_box([x, y, w, h]);
        if b.xmax - b.xmin != w || b.ymax - b.ymin != h {
            conversion_errors += 1;
        }
    }

    let mut reference_errors = 0;
    for _ in 0..1_000 {
        let bad: i64 = r.random_range(2..1_000_000);
        let image = format!(
            r#"{{"images":[{{"id":1,"width":9,"height":9}}],"annotations":[{{"image_id":{bad},"bbox":[0,0,1,1],"category_id":1}}],"categories":[{{"id":1}}]}}"#
        );
        let category = format!(
            r#"{{"images":[{{"id":1,"width":9,"height":9}}],"annotations":[{{"image_id":1,"bbox":[0,0,1,1],"category_id":{bad}}}],"categories":[{{"id":1}}]}}"#
        );
        let image_ok = matches!(
            parse_coco_annotations(image.as_bytes(), IngestOptions::default()),
            Err(Error::Reference { kind: "image", id }) if id == bad
        );
        let category_ok = matches!(
            parse_coco_annotations(category.as_bytes(), IngestOptions::default()),
            Err(Error::Reference { kind: "category", id }) if id == bad
        );
        reference_errors += usize::from(!image_ok) + usize::from(!category_ok);
    }

    (
        panics == 0 && conversion_errors == 0 && reference_errors == 0,
        format!(
            "{INPUTS} mutated inputs: {panics} panics, {parsed} parsed, {errors} structured errors; \
             {conversion_errors} inexact box conversions in 10000; {reference_errors} imprecise reference errors in 2000"
        ),
    )
}

fn bits(m: &GcnModel) -> Vec<u64> {
    m.params().iter().flat_map(|p| p.as_slice().iter().map(|v| v.to_bits())).collect()
}

struct Isolation {
    phases: usize,
    violations: Vec<String>,
}

fn main() {
    let mut out = Outcome { passed: 0, failed: 0 };

    let (ok, detail) = gradient_soundness();
    out.record("gradient soundness", ok, detail);

    let (ok, detail) = auc_oracle();
    out.record("AUC oracle equivalence", ok, detail);

    let (ok, detail) = invariant_suites();
    out.record("invariant suites", ok, detail);

    let (ok, detail) = ingestion_robustness();
    out.record("ingestion robustness", ok, detail);

    let start = Instant::now();
    let config = ExperimentConfig::default();
    let dataset = build_dataset(&config).expect("reference dataset");
    let mut isolation = Isolation {
        phases: 0,
        violations: Vec::new(),
    };
    let observer = |phase: EmPhase, before: &Gcrn, after: &Gcrn| {
        isolation.phases += 1;
        let (frozen_before, frozen_after, trained_before, trained_after) = match phase {
            EmPhase::ContextFit => (&before.repg, &after.repg, &before.cong, &after.cong),
            EmPhase::RepresentationMatch => (&before.cong, &after.cong, &before.repg, &after.repg),
        };
        if bits(frozen_before) != bits(frozen_after) {
            isolation.violations.push(format!("{phase:?} touched the frozen graph"));
        }
        if bits(trained_before) == bits(trained_after) {
            isolation.violations.push(format!("{phase:?} left the trained graph unchanged"));
        }
    };
    let models = train_models_observed(&config, &dataset.train, observer).expect("training");
    let (report, _) = evaluate(&config, &models, &dataset.test).expect("evaluation");
    let elapsed = start.elapsed();

    let auc_of = |mode, method| report.result(mode, method).map(|r| r.auc).unwrap_or(f64::NAN);
    let gcrn = auc_of(Mode::OracleLabels, Method::Gcrn);
    let no_cong = auc_of(Mode::OracleLabels, Method::NoCong);
    let softmax = auc_of(Mode::OracleLabels, Method::Softmax);
    out.record(
        "Table 1 ordering",
        gcrn >= 0.90 && gcrn > no_cong + 0.05 && no_cong >= softmax,
        format!("GCRN {gcrn:.4}, w/o ConG {no_cong:.4}, softmax confidence {softmax:.4}"),
    );

    let by_kind = &report.result(Mode::OracleLabels, Method::Gcrn).unwrap().auc_by_violation;
    let co = by_kind.get(&Violation::Cooccurrence).copied().unwrap_or(f64::NAN);
    let size = by_kind.get(&Violation::Size).copied().unwrap_or(f64::NAN);
    out.record(
        "Table 3 ordering",
        co >= size - 0.02 && co >= 0.90,
        format!("co-occurrence {co:.4}, size {size:.4}"),
    );

    let pred = auc_of(Mode::PredLabels, Method::Gcrn);
    out.record(
        "Table 4 ordering",
        gcrn >= pred,
        format!("oracle labels {gcrn:.4}, pred labels (flip 0.1) {pred:.4}"),
    );

    let acc = report.accuracy_for(Method::Gcrn).unwrap();
    let (ooc, non) = (acc.ooc_accuracy.unwrap_or(f64::NAN), acc.non_ooc_accuracy.unwrap_or(f64::NAN));
    out.record(
        "Table 2 direction",
        non >= ooc + 0.2,
        format!("non-OOC accuracy {non:.4}, OOC accuracy {ooc:.4}"),
    );

    let history = &models.em_history;
    let first = history.first().map_or(f64::NAN, |e| e.disagreement);
    let last = history.last().map_or(f64::NAN, |e| e.disagreement);
    out.record(
        "EM behaviour",
        !history.is_empty() && history.len() <= 10 && last <= first && isolation.violations.is_empty(),
        format!(
            "{} iterations, disagreement {first:.4} -> {last:.4}, {} phases checked, {} isolation violations{}",
            history.len(),
            isolation.phases,
            isolation.violations.len(),
            isolation.violations.first().map(|v| format!(" ({v})")).unwrap_or_default()
        ),
    );

    println!("reference benchmark took {:.1}s", elapsed.as_secs_f64());
    println!("{} passed, {} failed", out.passed, out.failed);
    if out.failed > 0 {
        std::process::exit(1);
    }
}
