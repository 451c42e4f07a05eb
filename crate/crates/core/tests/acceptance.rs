//! Acceptance run on phantom data. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use dcenorm::anchors::AnchorCounts;
use dcenorm::evaluation::{
    build_report, group_subjects, ks_statistic, tissue_intensities, EvaluationReport, GroupKey, GroupingSpec,
    ReportInputs, TissueIntensities,
};
use dcenorm::manifest::ScanParams;
use dcenorm::model::select_archetype;
use dcenorm::phantom::{generate_subject, PhantomGroup};
use dcenorm::segmentation::{ClassicalSegmenter, SegmentationInput, Segmenter};
use dcenorm::{
    apply_mapping, build_mapping, extract_anchors, extract_features, generate_phantom, AnchorSet, DatasetManifest,
    FeatureVector, Geometry, MappingFunction, NormalizationModel, PhantomConfig, Pipeline, PipelineConfig,
    SegmentationConfig, StudySeries, Tissue, Volume,
};

const FIXED_POINT_TOL: f64 = 1e-4;
const PIPELINE_BUDGET: Duration = Duration::from_secs(60);
const RATIO_BEFORE_MIN: f64 = 1.4;
const RATIO_AFTER: (f64, f64) = (0.98, 1.02);
const KS_AFTER_MAX: f64 = 0.15;
const N_RANDOM_MAPS: usize = 100_000;
const CONTINUITY_TOL: f64 = 1e-9;
const MAPPING_BUDGET: Duration = Duration::from_secs(2);
const SUBJECT_BUDGET: Duration = Duration::from_secs(10);

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

/// Everything one phantom run through the full pipeline produces.
struct Run {
    model: NormalizationModel,
    normalized: DatasetManifest,
    features_before: Vec<FeatureVector>,
    features_after: Vec<FeatureVector>,
    report: EvaluationReport,
    elapsed: Duration,
}

fn tissue_table(p: &Pipeline, m: &DatasetManifest) -> Vec<TissueIntensities> {
    m.subjects
        .iter()
        .map(|e| {
            let series = m.load_series(e).unwrap();
            let mask = p.subject_mask(m, e, &series, None).unwrap();
            tissue_intensities(&series, &mask).unwrap()
        })
        .collect()
}

/// phantom -> segment -> train on i % 4 != 3 -> normalize -> features -> evaluate
fn full_run(cfg: &PhantomConfig, dir: &Path) -> Run {
    let start = Instant::now();
    let p = Pipeline::new(PipelineConfig::default()).unwrap();
    let raw = generate_phantom(cfg, dir.join("raw")).unwrap();
    p.segment_dataset(&raw, &dir.join("seg")).unwrap();
    let segmented = DatasetManifest::load(dir.join("seg/manifest.json")).unwrap();
    let training = DatasetManifest::new(
        segmented.root(),
        segmented.subjects.iter().enumerate().filter(|(i, _)| i % 4 != 3).map(|(_, e)| e.clone()).collect(),
    );
    let (model, _) = p.train(&training).unwrap();
    p.normalize_dataset(&segmented, &model, &dir.join("norm"), None).unwrap();
    let normalized = DatasetManifest::load(dir.join("norm/manifest.json")).unwrap();
    let features_before = p.dataset_features(&segmented, None, None).unwrap().results;
    let features_after = p.dataset_features(&normalized, None, None).unwrap().results;
    let (tissues_before, tissues_after) = (tissue_table(&p, &segmented), tissue_table(&p, &normalized));
    let report = build_report(
        &ReportInputs {
            manifest: &raw,
            features_before: &features_before,
            features_after: &features_after,
            tissues_before: Some(&tissues_before),
            tissues_after: Some(&tissues_after),
        },
        &GroupKey::ALL,
        &GroupingSpec::default(),
    )
    .unwrap();
    report.save(dir.join("report.json")).unwrap();
    Run {
        model,
        normalized,
        features_before,
        features_after,
        report,
        elapsed: start.elapsed(),
    }
}

fn anchor_fixed_point(run: &Run) -> Outcome {
    let p = Pipeline::new(PipelineConfig::default()).unwrap();
    let anchors = p.dataset_anchors(&run.normalized).unwrap();
    let mut worst = 0.0f64;
    for a in &anchors.results {
        for (got, want) in a.values().iter().zip(run.model.values()) {
            worst = worst.max((got - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
    }
    let n = anchors.results.len();
    let pass = anchors.skipped.is_empty() && worst <= FIXED_POINT_TOL && run.elapsed < PIPELINE_BUDGET;
    outcome(
        "anchor fixed point",
        pass,
        format!(
            "max relative error {worst:.2e} over {n} subjects (tol {FIXED_POINT_TOL:e}); full pipeline {:.1} s (budget {} s)",
            run.elapsed.as_secs_f64(),
            PIPELINE_BUDGET.as_secs()
        ),
    )
}

fn group_harmonization(run: &Run) -> Outcome {
    let g = run.report.grouping(GroupKey::Te).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for t in [Tissue::Fat, Tissue::Dense] {
        let c = g.tissue(t, "post1").unwrap();
        let before = c.before.as_ref().and_then(|s| s.ratio).unwrap();
        let after = c.after.as_ref().and_then(|s| s.ratio).unwrap();
        pass &= before.max(1.0 / before) >= RATIO_BEFORE_MIN && (RATIO_AFTER.0..=RATIO_AFTER.1).contains(&after);
        parts.push(format!("{t} ratio {before:.3} -> {after:.4}"));
    }
    outcome(
        "group harmonization",
        pass,
        format!(
            "{} (need >= {RATIO_BEFORE_MIN} before, within [{}, {}] after)",
            parts.join(", "),
            RATIO_AFTER.0,
            RATIO_AFTER.1
        ),
    )
}

fn feature_alignment(run: &Run) -> Outcome {
    let g = run.report.grouping(GroupKey::Te).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for n in 10..=15 {
        let f = g.feature(n);
        let (b, a) = (f.before.ks.unwrap(), f.after.ks.unwrap());
        pass &= a < b && a < KS_AFTER_MAX;
        parts.push(format!("F{n} {b:.2}->{a:.2}"));
    }
    let f9_identical = run.features_before.iter().all(|b| {
        let a = run.features_after.iter().find(|a| a.subject_id == b.subject_id).unwrap();
        b.get(9).map(f64::to_bits) == a.get(9).map(f64::to_bits)
    });
    pass &= f9_identical;
    outcome(
        "feature alignment",
        pass,
        format!(
            "KS {} (after < {KS_AFTER_MAX}); F9 bit-identical: {f9_identical}",
            parts.join(", ")
        ),
    )
}

fn feature_ks(manifest: &DatasetManifest, features: &[FeatureVector], number: usize) -> f64 {
    let part = group_subjects(manifest, GroupKey::Te, &GroupingSpec::default()).unwrap();
    let pick = |ids: &[String]| -> Vec<f64> {
        ids.iter()
            .filter_map(|id| features.iter().find(|f| &f.subject_id == id)?.get(number))
            .collect()
    };
    ks_statistic(&pick(&part.low), &pick(&part.high)).unwrap()
}

fn noise_caveat(dir: &Path) -> Outcome {
    let mut groups = PhantomGroup::default_pair();
    groups[0].noise_scale = 5.0;
    let cfg = PhantomConfig {
        groups,
        ..PhantomConfig::default()
    };
    let run = full_run(&cfg, dir);
    let p = Pipeline::new(PipelineConfig::default()).unwrap();
    let denoised = p.dataset_features(&run.normalized, None, Some(1)).unwrap().results;
    let before = feature_ks(&run.normalized, &run.features_before, 6);
    let plain = feature_ks(&run.normalized, &run.features_after, 6);
    let filtered = feature_ks(&run.normalized, &denoised, 6);
    outcome(
        "noise caveat",
        plain >= KS_AFTER_MAX && filtered < KS_AFTER_MAX,
        format!(
            "F6 KS before {before:.2}, after {plain:.2} (must reach {KS_AFTER_MAX}), after with median radius 1 {filtered:.2} (must stay below)"
        ),
    )
}

fn mapping_properties() -> Outcome {
    let mut r = common::rng(42);
    let mut failures = Vec::new();
    let mut max_gap = 0.0f64;
    for k in 0..N_RANDOM_MAPS {
        let v0 = r.random_range(-100.0..100.0);
        let dv: [f64; 3] = [(); 3].map(|_| r.random_range(0.5..500.0));
        let m0 = r.random_range(-50.0..200.0);
        let dm: [f64; 3] = [(); 3].map(|_| r.random_range(0.0..500.0));
        let mut v = [v0, v0 + dv[0], v0 + dv[0] + dv[1], v0 + dv[0] + dv[1] + dv[2]];
        let mut m = [m0, m0 + dm[0], m0 + dm[0] + dm[1], m0 + dm[0] + dm[1] + dm[2]];
        if r.random_bool(0.5) {
            v.swap(1, 2);
            m.swap(1, 2);
        }
        let f = match MappingFunction::new(v, m, 0.0) {
            Ok(f) => f,
            Err(e) => {
                failures.push(format!("map {k}: {e}"));
                continue;
            }
        };
        let (a, b) = (r.random_range(-500.0..2500.0), r.random_range(-500.0..2500.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if f.evaluate(lo) > f.evaluate(hi) {
            failures.push(format!("map {k}: not monotone on [{lo}, {hi}]"));
        }
        for i in 0..4 {
            if f.evaluate(v[i]) != m[i] {
                failures.push(format!("map {k}: control point {i} missed"));
            }
            let gap = (f.evaluate(v[i]) - f.evaluate(v[i].next_down())).abs();
            max_gap = max_gap.max(gap);
            if gap > CONTINUITY_TOL {
                failures.push(format!("map {k}: gap {gap:e} at knot {i}"));
            }
        }
        let slope = (m[3] - m[2]) / (v[3] - v[2]);
        let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d = r.random_range(1.0..1000.0);
        let expected = f.evaluate(top) + slope * d;
        if f.upper_slope() != slope || (f.evaluate(top + d) - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            failures.push(format!("map {k}: upper slope"));
        }
    }
    outcome(
        "mapping properties",
        failures.is_empty(),
        match failures.first() {
            None => format!("{N_RANDOM_MAPS} random maps; max knot gap {max_gap:.1e} (tol {CONTINUITY_TOL:e})"),
            Some(first) => format!("{} violations, first: {first}", failures.len()),
        },
    )
}

fn oracle_equivalence() -> Outcome {
    type Checker = fn(u64) -> common::Check;
    let checks: [(&str, Checker); 6] = [
        ("percentile", common::check_percentile),
        ("median filter", common::check_median_filter),
        ("ranks", common::check_ranks),
        ("archetype", common::check_archetype),
        ("KS", common::check_ks),
        ("AUC", common::check_auc),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        match check(1000 + i as u64) {
            Ok(n) => {
                pass &= n >= 100;
                parts.push(format!("{name} {n}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} MISMATCH {e}"));
            }
        }
    }
    outcome("oracle equivalence", pass, format!("instances matched: {}", parts.join(", ")))
}

fn archetype_sanity() -> Outcome {
    let subject = |id: &str, k: f64| AnchorSet {
        subject_id: id.to_string(),
        v_air: k,
        v_fat: 100.0 * k,
        v_dense: 50.0 * k,
        v_heart: 200.0 * k,
        counts: AnchorCounts {
            air: 1,
            fat: 1,
            dense: 1,
            heart: 1,
        },
    };
    // the middle subject has neither the smallest nor the largest id
    let base = [subject("a-low", 1.0), subject("b-mid", 2.0), subject("c-high", 3.0)];
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let pass = orders.iter().all(|o| {
        let sets: Vec<AnchorSet> = o.iter().map(|&i| base[i].clone()).collect();
        sets[select_archetype(&sets).unwrap()].subject_id == "b-mid"
    });
    outcome("archetype sanity", pass, "middle of three consistently ordered subjects, all 6 input orders".into())
}

fn runtime_budget(model: &NormalizationModel) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        // mapping alone on a 256 x 256 x 60 volume
        let mut r = common::rng(7);
        let g = Geometry::new([256, 256, 60], [0.75, 0.75, 2.0]).unwrap();
        let data: Vec<f32> = (0..g.n_voxels()).map(|_| r.random_range(-10.0..600.0)).collect();
        let vol = Volume::new(g, data, "").unwrap();
        let series = StudySeries::new("timing", vol.clone(), vec![vol], ScanParams::default()).unwrap();
        let f = MappingFunction::new([0.0, 400.0, 200.0, 500.0], model.values(), 0.0).unwrap();
        let start = Instant::now();
        let mapped = apply_mapping(&f, &series).unwrap();
        let per_volume = start.elapsed() / 2;
        assert_eq!(mapped.pre().dims(), [256, 256, 60]);

        // one full-size phantom subject: segment, anchor, map, extract
        let cfg = PhantomConfig {
            n_subjects: 1,
            dims: [256, 256, 60],
            spacing_mm: [0.75, 0.75, 2.0],
            ..PhantomConfig::default()
        };
        let s = generate_subject(&cfg, 0).unwrap();
        let segmenter = ClassicalSegmenter::new(SegmentationConfig::default());
        let start = Instant::now();
        let mask = segmenter
            .segment(&SegmentationInput {
                series: &s.series,
                external_mask: None,
                tumor: Some(s.tumor()),
            })
            .unwrap();
        let anchors = extract_anchors(&s.series, &mask).unwrap();
        let f = build_mapping(&anchors, model).unwrap();
        let normalized = apply_mapping(&f, &s.series).unwrap();
        extract_features(&s.series, &mask, None).unwrap();
        extract_features(&normalized, &mask, None).unwrap();
        let per_subject = start.elapsed();

        outcome(
            "runtime budget",
            per_volume < MAPPING_BUDGET && per_subject < SUBJECT_BUDGET,
            format!(
                "mapping 256x256x60 {:.3} s (budget {} s); classical subject pipeline {:.2} s (budget {} s); single thread",
                per_volume.as_secs_f64(),
                MAPPING_BUDGET.as_secs(),
                per_subject.as_secs_f64(),
                SUBJECT_BUDGET.as_secs()
            ),
        )
    })
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let run = full_run(&PhantomConfig::default(), &dir.path().join("main"));
    let outcomes = vec![
        anchor_fixed_point(&run),
        group_harmonization(&run),
        feature_alignment(&run),
        noise_caveat(&dir.path().join("noisy")),
        mapping_properties(),
        oracle_equivalence(),
        archetype_sanity(),
        runtime_budget(&run.model),
    ];
    println!("acceptance: {} criteria", outcomes.len());
    for o in &outcomes {
        println!("{} {:<20} {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
