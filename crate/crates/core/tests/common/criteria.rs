//! One check per acceptance criterion. Each returns `Err` with a reason so the
//! same checks back both `#[test]`s and the acceptance report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use holter_core::agent::Role;
use holter_core::domain::{
    bundle_class, AgeGroup, ArrhythmiaClass, ArrhythmiaTable, BundleLoader, Gender, MetricRow, MetricValue, MetricVocabulary,
    Modality, ParamValue, PatientBundle, SubgroupKey, Tracing,
};
use holter_core::eval::{
    aggregate, export_finetune_dataset, pairwise_similarity_variance, stability_score, AggregationContext, Dimension,
    Embedder, EvalError, HashingEmbedder, MetricId, Rating, StdKind,
};
use holter_core::factcheck::{check, load_guidelines, GuidelineSet, ViolationKind};
use holter_core::pipeline::{JobState, Pipeline, PipelineConfig};
use holter_core::prompt::{
    parse_itemized, render_findings, render_interpretation, select_demos, DemoLibrary, ItemKind, ItemParser, MatchLevel,
    PromptTemplates,
};
use holter_core::report::{parse_report, render, RenderFormat};
use holter_core::domain::{parse_bundle_json, serialize_bundle};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use sha2::{Digest, Sha256};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn prop(cases: u32, name: &str, run: impl FnOnce(&mut TestRunner) -> Result<(), String>) -> Check {
    run(&mut runner(cases)).map_err(|e| format!("{name}: {e}"))
}

// ---------------------------------------------------------------------------
// Golden run

/// Runs the fixture bundle through the fixture config and returns the JSON
/// report bytes with the wall time of the run.
pub fn golden_run() -> Result<(Vec<u8>, Duration), String> {
    let dir = fixtures().join("golden");
    let start = Instant::now();
    let config = PipelineConfig::load(&dir.join("config.json")).map_err(|e| e.to_string())?;
    let pipeline = Pipeline::from_config(&config).map_err(|e| e.to_string())?;
    let bundle = BundleLoader::default().load_path(&dir.join("bundle.json")).map_err(|e| e.to_string())?;
    let outcome = pipeline.run(&bundle, &|_| {});
    let report = outcome.report.ok_or_else(|| format!("no report, state {}", outcome.state))?;
    let bytes = render(&report, RenderFormat::Json);
    Ok((bytes, start.elapsed()))
}

pub fn golden_bytes() -> Vec<u8> {
    std::fs::read(fixtures().join("golden/report.json")).expect("golden report fixture")
}

pub fn first_difference(a: &[u8], b: &[u8]) -> String {
    let at = a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
    let line = a[..at].iter().filter(|&&c| c == b'\n').count() + 1;
    format!("first difference at byte {at} (line {line}); lengths {} vs {}", a.len(), b.len())
}

pub fn golden() -> Check {
    let (bytes, elapsed) = golden_run()?;
    let want = golden_bytes();
    ensure!(bytes == want, "report differs from golden: {}", first_difference(&bytes, &want));
    ensure!(elapsed < Duration::from_secs(1), "run took {elapsed:?}");
    let report = parse_report(&bytes).map_err(|e| e.to_string())?;
    ensure!(report.meta.state == JobState::Complete, "state {}", report.meta.state);
    // Findings hold both agents' items.
    let modalities: Vec<Modality> = report.findings.iter().map(|f| f.source_modality).collect();
    ensure!(
        modalities.contains(&Modality::Metrics) && modalities.contains(&Modality::Tracing),
        "findings do not contain both modalities: {modalities:?}"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Fact check

fn pr_cell(pr_ms: f64, tag_present: bool) -> Vec<ViolationKind> {
    let parser = ItemParser::builtin();
    let finding = parser.finding("F1".into(), &format!("PR Interval: {pr_ms} ms"), Modality::Metrics, 0);
    let mut interp = parser.interpretation("I1".into(), "Sinus rhythm overall [F1]", 0);
    interp.diagnosis_tags.clear();
    if tag_present {
        interp.diagnosis_tags.insert("FIRST_DEGREE_AV_BLOCK".into());
    }
    check(&[finding], &[interp], &GuidelineSet::builtin()).into_iter().map(|v| v.kind).collect()
}

pub fn factcheck_truth_table() -> Check {
    use ViolationKind::*;
    let parser = ItemParser::builtin();
    let f = parser.finding("F1".into(), "PR Interval: 210 ms", Modality::Metrics, 0);
    ensure!(
        f.parameters.get("PR_INTERVAL_MS") == Some(&ParamValue::number(210.0, "ms")),
        "PR finding parameters: {:?}",
        f.parameters
    );
    let cells = [
        (190.0, true, vec![ContradictedInterpretation]),
        (190.0, false, vec![]),
        (210.0, true, vec![]),
        (210.0, false, vec![MissingInterpretation]),
        (200.0, false, vec![]),
    ];
    for (pr, present, want) in cells {
        let got = pr_cell(pr, present);
        ensure!(got == want, "PR {pr} ms, tag present {present}: got {got:?}, want {want:?}");
    }
    Ok(())
}

const M2F_PR: &str = "- PR Interval: 210 ms\n- AF/AFL: not present";
const F2I_BAD: &str = "- No atrial fibrillation [F2]";
const F2I_FIX: &str = "- Prolonged PR interval, suggesting a first-degree AV block [F1]";

pub fn regeneration_loop() -> Check {
    let bundle = super::metrics_bundle(vec![MetricRow::new("PR Interval", MetricValue::Number(210.0), "ms")]);

    let fixing = super::pipeline(M2F_PR, &[("contains:Fact-check", F2I_FIX), ("default", F2I_BAD)], 2);
    let out = fixing.run(&bundle, &|_| {});
    ensure!(out.state == JobState::Complete, "fixing script ended in {}", out.state);
    let report = out.report.ok_or("fixing script produced no report")?;
    ensure!(report.meta.factcheck_iterations == 1, "iterations {}", report.meta.factcheck_iterations);
    ensure!(
        !report.violations.iter().any(|v| v.is_blocking()),
        "blocking violations left: {:?}",
        report.violations
    );

    let stuck = super::pipeline(M2F_PR, &[("default", F2I_BAD)], 2);
    let out = stuck.run(&bundle, &|_| {});
    ensure!(out.state == JobState::NeedsManualReview, "never-fixing script ended in {}", out.state);
    let report = out.report.ok_or("never-fixing script produced no report")?;
    ensure!(report.meta.factcheck_iterations == 2, "iterations {}", report.meta.factcheck_iterations);
    ensure!(
        report.violations.iter().any(|v| v.is_blocking() && v.rule_id.as_deref() == Some("PR_GT_200")),
        "open PR violation not reported: {:?}",
        report.violations
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Demo selection

pub fn demo_library_50() -> DemoLibrary {
    let raw = std::fs::read_to_string(fixtures().join("demo_bank_50.json")).expect("demo bank fixture");
    DemoLibrary::from_json(&raw, &ItemParser::builtin()).expect("demo bank fixture loads")
}

/// Key number `i` of a fixed pseudo-random sequence.
pub fn random_key(i: u32) -> SubgroupKey {
    let h = Sha256::digest(format!("query-{i}").as_bytes());
    SubgroupKey {
        gender: [Gender::Male, Gender::Female, Gender::Other][h[0] as usize % 3],
        age_group: AgeGroup::ALL[h[1] as usize % 3],
        arrhythmia_class: ArrhythmiaClass::ALL[h[2] as usize % 3],
    }
}

/// Relaxation level written out from the documented order: class first,
/// then age group, then gender.
fn oracle_level(q: &SubgroupKey, d: &SubgroupKey) -> u8 {
    let same_gender = q.gender == d.gender;
    let same_age = q.age_group == d.age_group;
    let same_class = q.arrhythmia_class == d.arrhythmia_class;
    match (same_gender, same_age, same_class) {
        (true, true, true) => 0,
        (true, true, false) => 1,
        (true, false, _) => 2,
        (false, _, _) => 3,
    }
}

fn oracle_select(lib: &DemoLibrary, key: &SubgroupKey, n: usize, seed: u64) -> Vec<(String, u8)> {
    let bank = lib.bank(Role::M2F);
    let mut all: Vec<(u8, Vec<u8>, String)> = bank
        .demos()
        .iter()
        .map(|d| {
            let rank = Sha256::digest(format!("{}\n{}\n{}", bank.version(), seed, d.id).as_bytes()).to_vec();
            (oracle_level(key, &d.key), rank, d.id.clone())
        })
        .collect();
    all.sort();
    all.into_iter().take(n).map(|(level, _, id)| (id, level)).collect()
}

fn level_code(level: MatchLevel) -> u8 {
    MatchLevel::ALL.iter().position(|l| *l == level).unwrap() as u8
}

pub fn demo_selection_oracle() -> Check {
    let lib = demo_library_50();
    let bank = lib.bank(Role::M2F);
    ensure!(bank.len() == 50, "fixture bank has {} demos", bank.len());
    for i in 0..20 {
        let key = random_key(i);
        for (n, seed) in [(1, 0), (3, 7), (3, 8), (5, u64::from(i)), (12, 99), (60, 3)] {
            let got: Vec<(String, u8)> = select_demos(bank, &key, n, seed)
                .map_err(|e| e.to_string())?
                .demos
                .into_iter()
                .map(|s| (s.demo.id, level_code(s.level)))
                .collect();
            let want = oracle_select(&lib, &key, n, seed);
            ensure!(got == want, "key {key}, n {n}, seed {seed}: got {got:?}, want {want:?}");
        }
    }
    for i in 0..20 {
        let key = random_key(i);
        let first = select_demos(bank, &key, 3, 42).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            ensure!(select_demos(bank, &key, 3, 42).map_err(|e| e.to_string())? == first, "selection for {key} is not deterministic");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Classification

pub const CLASS_TABLE: &[(&str, ArrhythmiaClass)] = &[
    ("Sinus Bradycardia", ArrhythmiaClass::I),
    ("Sinus Tachycardia", ArrhythmiaClass::I),
    ("Sinus Arrhythmia", ArrhythmiaClass::I),
    ("Pause (<3s)", ArrhythmiaClass::II),
    ("Ventricular Premature Beat (PVC)", ArrhythmiaClass::II),
    ("Atrial Fibrillation (AF)", ArrhythmiaClass::II),
    ("Ventricular Flutter (VF)", ArrhythmiaClass::III),
    ("Complete Heart Block (Third-Degree AV Block)", ArrhythmiaClass::III),
    ("Atrial Fibrillation (AFib) with Rapid Ventricular Response", ArrhythmiaClass::III),
    ("Prolonged Pause", ArrhythmiaClass::III),
    ("Atrial Flutter (AFL)", ArrhythmiaClass::III),
    ("Ventricular Tachycardia (VT)", ArrhythmiaClass::III),
    ("Supraventricular Tachycardia (SVT)", ArrhythmiaClass::III),
];

fn tagged(tags: &[&str]) -> PatientBundle {
    let mut b = super::metrics_bundle(vec![]);
    b.tracings = tags
        .iter()
        .map(|t| Tracing {
            image_ref: "strip.png".into(),
            image_hash: None,
            caption: "strip".into(),
            duration_seconds: 10.0,
            arrhythmia_tag: Some(t.to_string()),
        })
        .collect();
    b
}

pub fn classification() -> Check {
    let table = ArrhythmiaTable::builtin();
    for (name, want) in CLASS_TABLE {
        let got = table.classify(name).map_err(|e| format!("{name}: {e}"))?;
        ensure!(got == *want, "{name}: got {got}, want {want}");
    }
    for (name, want) in [("Sinus Bradycardia", ArrhythmiaClass::I), ("AF", ArrhythmiaClass::II), ("VT", ArrhythmiaClass::III)] {
        let got = table.classify(name).map_err(|e| format!("{name}: {e}"))?;
        ensure!(got == want, "spot check {name}: got {got}, want {want}");
    }

    let names: Vec<&'static str> = CLASS_TABLE.iter().map(|(n, _)| *n).collect();
    let tags = || prop::collection::vec(prop::sample::select(names.clone()), 0..6);
    let class = |tags: &[&str]| bundle_class(&tagged(tags), &table).unwrap();
    let expected = |tags: &[&str]| {
        tags.iter()
            .map(|t| CLASS_TABLE.iter().find(|(n, _)| n == t).unwrap().1)
            .fold(ArrhythmiaClass::I, |a, c| if c > a { c } else { a })
    };
    prop(200, "max-severity aggregation", |r| {
        r.run(&(tags(), tags()), |(a, b)| {
            let ab: Vec<&str> = a.iter().chain(&b).copied().collect();
            let ba: Vec<&str> = b.iter().chain(&a).copied().collect();
            let aa: Vec<&str> = a.iter().chain(&a).copied().collect();
            prop_assert_eq!(class(&ab), class(&ba), "commutative");
            prop_assert_eq!(class(&aa), class(&a), "idempotent");
            prop_assert_eq!(class(&a), expected(&a), "maximum of the table classes");
            Ok(())
        })
        .map_err(|e| e.to_string())
    })
}

// ---------------------------------------------------------------------------
// Aggregation

fn rating(rater: &str, patient: &str, alias: &str, metric: MetricId, score: u8) -> Rating {
    Rating {
        rater_id: rater.into(),
        patient_id: patient.into(),
        model_alias: alias.into(),
        metric,
        score,
    }
}

pub fn aggregation() -> Check {
    let mut ratings = Vec::new();
    for r in 0..6 {
        for p in 0..3 {
            ratings.push(rating(&format!("r{r}"), &format!("P{p}"), "Model A", MetricId::FFB, 5));
            ratings.push(rating(&format!("r{r}"), &format!("P{p}"), "Model B", MetricId::FFB, 1 + ((r + p) % 5) as u8));
        }
    }
    let rows = aggregate(&ratings, &[Dimension::Model, Dimension::Metric], &AggregationContext::default(), StdKind::Population);
    let cell = rows
        .iter()
        .find(|r| r.group[&Dimension::Model] == "Model A" && r.group[&Dimension::Metric] == "FFB")
        .ok_or("no (Model A, FFB) row")?;
    ensure!(cell.display == "5.0 (±0.0)", "all-fives cell shows {}", cell.display);
    ensure!(cell.n == 18, "all-fives cell has n {}", cell.n);

    let scores = [4u8, 4, 4, 5, 5];
    let set: Vec<Rating> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| rating(&format!("r{i}"), "P1", "Model A", MetricId::ACC, s))
        .collect();
    // Two-pass oracle, then the closed form: deviations are -0.4 (x3) and 0.6 (x2).
    let mean_oracle = scores.iter().map(|&s| f64::from(s)).sum::<f64>() / 5.0;
    let var_oracle = scores.iter().map(|&s| (f64::from(s) - mean_oracle).powi(2)).sum::<f64>() / 5.0;
    let hand = ((3.0 * 0.16 + 2.0 * 0.36) / 5.0f64).sqrt();
    ensure!((var_oracle.sqrt() - hand).abs() < 1e-12, "oracle disagrees with the hand value");
    let row = &aggregate(&set, &[], &AggregationContext::default(), StdKind::Population)[0];
    ensure!((row.mean - 4.4).abs() < 1e-9, "mean {}", row.mean);
    ensure!((row.std - hand).abs() < 1e-9, "population std {} vs {hand}", row.std);
    Ok(())
}

// ---------------------------------------------------------------------------
// Stability

/// Maps texts of the form `"<degrees>"` to unit vectors in the plane.
struct AngleEmbedder;

impl Embedder for AngleEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EvalError> {
        texts
            .iter()
            .map(|t| {
                let deg: f64 = t.parse().map_err(|_| EvalError::Embedding(format!("not an angle: {t}")))?;
                Ok(vec![deg.to_radians().cos(), deg.to_radians().sin()])
            })
            .collect()
    }
}

pub fn stability() -> Check {
    let text = "- PR Interval: 212 ms\n- AF/AFL: not present\n- Longest pause of 1.8 seconds".to_string();
    let s = stability_score(&vec![text; 10], &HashingEmbedder::default()).map_err(|e| e.to_string())?;
    ensure!(s.variance == 0.0, "identical texts give variance {}", s.variance);

    let texts: Vec<String> = ["0", "0", "90", "90"].iter().map(|s| s.to_string()).collect();
    let s = stability_score(&texts, &AngleEmbedder).map_err(|e| e.to_string())?;
    // Pairs: (0,0)=1, (90,90)=1, four mixed pairs = 0. Mean 1/3; variance
    // (2*(2/3)^2 + 4*(1/3)^2)/6 = 2/9.
    let hand = 2.0 / 9.0;
    ensure!((s.variance - hand).abs() < 1e-9, "toy variance {} vs {hand}", s.variance);
    ensure!((s.mean_similarity - 1.0 / 3.0).abs() < 1e-9, "toy mean {}", s.mean_similarity);
    let (var, _) = pairwise_similarity_variance(&AngleEmbedder.embed(&texts).unwrap()).map_err(|e| e.to_string())?;
    ensure!(var == s.variance, "score and raw variance disagree");
    Ok(())
}

// ---------------------------------------------------------------------------
// Round trips

pub fn roundtrip_bundle(cases: u32) -> Check {
    prop(cases, "bundle JSON", |r| {
        r.run(&super::bundle(), |b| {
            let bytes = serialize_bundle(&b);
            let back = parse_bundle_json(&bytes, &BundleLoader::default()).unwrap();
            prop_assert_eq!(&back, &b);
            prop_assert_eq!(serialize_bundle(&back), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })
}

pub fn roundtrip_report(cases: u32) -> Check {
    prop(cases, "report JSON", |r| {
        r.run(&super::report(), |rep| {
            let bytes = render(&rep, RenderFormat::Json);
            let back = parse_report(&bytes).unwrap();
            prop_assert_eq!(&back, &rep);
            prop_assert_eq!(render(&back, RenderFormat::Json), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })
}

pub fn roundtrip_guidelines(cases: u32) -> Check {
    prop(cases, "guideline rules", |r| {
        r.run(&(super::guideline_rules(), any::<bool>()), |(rules, exhaustive)| {
            let vocab = MetricVocabulary::builtin();
            let set = GuidelineSet::new(rules, exhaustive, &vocab).unwrap();
            let back = load_guidelines(&set.to_json(), &vocab).unwrap();
            prop_assert_eq!(back.version(), set.version());
            prop_assert_eq!(back, set);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })
}

pub fn roundtrip_itemized(cases: u32) -> Check {
    let parser = ItemParser::builtin();
    prop(cases, "itemized findings", |r| {
        r.run(&super::findings(10), |items| {
            let text = render_findings(&items);
            let parsed = parse_itemized(&parser, &text, ItemKind::Findings(Modality::Metrics)).unwrap();
            let got: Vec<_> = parsed.findings().iter().map(|f| f.statement.clone()).collect();
            let want: Vec<_> = items.iter().map(|f| f.statement.clone()).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(render_findings(parsed.findings()), text);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })?;
    prop(cases, "itemized interpretation", |r| {
        r.run(&super::interpretations(6, 8), |items| {
            let text = render_interpretation(&items);
            let parsed = parse_itemized(&parser, &text, ItemKind::Interpretation).unwrap();
            let got: Vec<_> = parsed.interpretation().iter().map(|i| (i.statement.clone(), i.supports.clone())).collect();
            let want: Vec<_> = items.iter().map(|i| (i.statement.clone(), i.supports.clone())).collect();
            prop_assert_eq!(got, want);
            prop_assert_eq!(render_interpretation(parsed.interpretation()), text);
            Ok(())
        })
        .map_err(|e| e.to_string())
    })
}

pub fn roundtrips() -> Check {
    roundtrip_bundle(100)?;
    roundtrip_report(100)?;
    roundtrip_guidelines(100)?;
    roundtrip_itemized(100)
}

// ---------------------------------------------------------------------------
// Dataset export

pub fn demo_bundles() -> Vec<PatientBundle> {
    let dir = fixtures().join("demo_bundles");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .expect("demo bundles fixture")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| BundleLoader::default().load_path(p).expect("demo bundle loads")).collect()
}

pub fn dataset_export() -> Check {
    let bundles = demo_bundles();
    ensure!(!bundles.is_empty(), "no demo bundles");
    let templates = PromptTemplates::builtin();
    let guidelines = GuidelineSet::builtin();
    let parser = ItemParser::builtin();
    let export = |role| export_finetune_dataset(&bundles, role, &templates, &guidelines).map_err(|e| e.to_string());
    let by_role: BTreeMap<Role, _> = [Role::M2F, Role::T2F, Role::F2I].into_iter().map(|r| (r, export(r))).collect();

    for (i, b) in bundles.iter().enumerate() {
        let adjudicated = b.adjudicated_findings.as_ref().ok_or("demo bundle without findings")?;
        let pid = b.patient_id();
        let bio = format!("- Age: {} years", b.biostatistics.age_years);
        let rows: Vec<String> = b.metrics.rows.iter().map(|r| r.render()).collect();

        // M2F: X = (metrics, biostatistics), Y = the metrics findings.
        let m = &by_role[&Role::M2F].as_ref()?[i];
        ensure!(m.input.contains(&bio), "{pid} M2F input lacks the biostatistics");
        ensure!(rows.iter().all(|r| m.input.contains(r.as_str())), "{pid} M2F input lacks a metric row");
        ensure!(b.tracings.iter().all(|t| !m.input.contains(&t.caption)), "{pid} M2F input contains a tracing caption");
        ensure!(m.images.is_empty(), "{pid} M2F record carries images");
        let want: Vec<&str> = adjudicated
            .iter()
            .filter(|f| f.source_modality == Modality::Metrics)
            .map(|f| f.statement.as_str())
            .collect();
        let parsed = parse_itemized(&parser, &m.output, ItemKind::Findings(Modality::Metrics)).map_err(|e| format!("{pid} M2F: {e}"))?;
        let got: Vec<&str> = parsed.findings().iter().map(|f| f.statement.as_str()).collect();
        ensure!(got == want, "{pid} M2F output {got:?} != adjudicated {want:?}");

        // T2F: X = (tracings, biostatistics), Y = the tracing findings.
        let t = &by_role[&Role::T2F].as_ref()?[i];
        ensure!(t.input.contains(&bio), "{pid} T2F input lacks the biostatistics");
        ensure!(b.tracings.iter().all(|tr| t.input.contains(&tr.caption)), "{pid} T2F input lacks a caption");
        ensure!(rows.iter().all(|r| !t.input.contains(r.as_str())), "{pid} T2F input contains a metric row");
        let ids: Vec<&str> = b.tracings.iter().map(|tr| tr.content_id()).collect();
        ensure!(t.images.iter().map(String::as_str).eq(ids.iter().copied()), "{pid} T2F images {:?}", t.images);
        let want: Vec<&str> = adjudicated
            .iter()
            .filter(|f| f.source_modality == Modality::Tracing)
            .map(|f| f.statement.as_str())
            .collect();
        let parsed = parse_itemized(&parser, &t.output, ItemKind::Findings(Modality::Tracing)).map_err(|e| format!("{pid} T2F: {e}"))?;
        let got: Vec<&str> = parsed.findings().iter().map(|f| f.statement.as_str()).collect();
        ensure!(got == want, "{pid} T2F output {got:?} != adjudicated {want:?}");

        // F2I: X = (findings, guidelines), Y = the interpretation.
        let f = &by_role[&Role::F2I].as_ref()?[i];
        ensure!(adjudicated.iter().all(|x| f.input.contains(&x.statement)), "{pid} F2I input lacks a finding");
        let parsed = parse_itemized(&parser, &f.output, ItemKind::Interpretation).map_err(|e| format!("{pid} F2I: {e}"))?;
        let want: Vec<&str> = b
            .adjudicated_interpretation
            .as_ref()
            .ok_or("demo bundle without interpretation")?
            .iter()
            .map(|x| x.statement.as_str())
            .collect();
        let got: Vec<&str> = parsed.interpretation().iter().map(|x| x.statement.as_str()).collect();
        ensure!(got == want, "{pid} F2I output {got:?} != adjudicated {want:?}");
    }
    Ok(())
}
