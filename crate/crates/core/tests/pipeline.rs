use fpweak::data::combine;
use fpweak::pipeline::{fit_snapshots, run_report, FitDocument, GroupOutcome, Grouping, ModelFamily, RunConfig};
use fpweak::sim::{simulate, SimConfig};
use fpweak::weakform::Term;
use fpweak::{Mat2, SnapshotSet};

fn two_runs(d: f64) -> SnapshotSet {
    let runs: Vec<SnapshotSet> = (0..2)
        .map(|r| {
            simulate(&SimConfig {
                particles: 1000,
                diffusion: Some(Mat2::scaled(d)),
                seed: 40 + r,
                replicate_id: format!("{}", r + 1),
                ..Default::default()
            })
            .unwrap()
        })
        .collect();
    combine(&runs).unwrap()
}

fn config() -> RunConfig {
    RunConfig {
        groups: vec![Grouping::Combined, Grouping::Replicate],
        bootstrap: 50,
        ..Default::default()
    }
}

#[test]
fn hierarchy_on_isotropic_simulation() {
    let set = two_runs(8.3);
    let doc = fit_snapshots(&config(), &set).unwrap();
    let ids: Vec<&str> = doc.groups.iter().map(|g| g.id.as_str()).collect();
    assert_eq!(ids, ["combined", "run=sim/1", "run=sim/2"]);

    for g in &doc.groups {
        let GroupOutcome::Fitted(fit) = &g.outcome else {
            panic!("group {} failed: {:?}", g.id, g.outcome)
        };
        let family = |f: ModelFamily| fit.families.iter().find(|x| x.family == f).unwrap();

        let eff = family(ModelFamily::Effective);
        let d = eff.model.weight(Term::EffectiveDiffusion).unwrap();
        assert!((d - 8.3).abs() < 0.1 * 8.3, "{}: D_eff = {d}", g.id);

        let an = family(ModelFamily::Anisotropic);
        let dxy = an.model.weight(Term::DiffusionXy).unwrap();
        // σ̂ treats overlapping query points as independent and is far
        // tighter than the sampling spread, so compare against D instead.
        assert!(dxy.abs() < 0.1 * 8.3, "{}: D_xy = {dxy}", g.id);

        let full = family(ModelFamily::Full);
        let has_k = full.model.terms.iter().any(|t| matches!(t, Term::Interaction { .. }));
        assert_eq!(has_k, g.id != "combined", "{}", g.id);
        assert_eq!(full.interaction, has_k);
        assert!(full.ols.is_some());
        assert_eq!(full.comparisons.len(), 1);
        assert_eq!(an.comparisons.len(), 2);
        assert_eq!(eff.comparisons.len(), 1);
        assert!(eff.pi.is_some());
    }
}

#[test]
fn failures_are_isolated_and_reports_are_deterministic() {
    let good = simulate(&SimConfig {
        particles: 400,
        seed: 3,
        plot_id: "good".into(),
        ..Default::default()
    })
    .unwrap();
    // A single particle per frame: the KDE needs a covariance.
    let bad = simulate(&SimConfig {
        particles: 1,
        seed: 4,
        plot_id: "bad".into(),
        ..Default::default()
    })
    .unwrap();
    let set = combine(&[good, bad]).unwrap();
    let cfg = RunConfig {
        groups: vec![Grouping::Plot],
        families: vec![ModelFamily::Anisotropic, ModelFamily::Effective],
        bootstrap: 20,
        ..Default::default()
    };
    let doc = fit_snapshots(&cfg, &set).unwrap();
    let by_id = |id: &str| doc.groups.iter().find(|g| g.id == id).unwrap();
    match &by_id("plot=bad").outcome {
        GroupOutcome::Failed(f) => assert_eq!(f.stage, "kde"),
        other => panic!("expected failure, got {other:?}"),
    }
    assert!(matches!(by_id("plot=good").outcome, GroupOutcome::Fitted(_)));

    // Same data alone gives the same result for the good group.
    let alone = fit_snapshots(&cfg, &set.filter_sources(|s| s.plot_id == "good").unwrap()).unwrap();
    assert_eq!(alone.groups[0].outcome, by_id("plot=good").outcome);

    let dir = tempfile::tempdir().unwrap();
    doc.save(dir.path()).unwrap();
    assert_eq!(FitDocument::load(dir.path()).unwrap(), doc);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files_a = run_report(dir.path(), Some(a.path())).unwrap();
    let files_b = run_report(dir.path(), Some(b.path())).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (fa, fb) in files_a.iter().zip(&files_b) {
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap(), "{}", fa.display());
    }
    let fails = std::fs::read_to_string(a.path().join("failures.csv")).unwrap();
    assert!(fails.contains("plot=bad,kde"), "{fails}");
    let curves = std::fs::read_to_string(a.path().join("displacement_curves.csv")).unwrap();
    assert!(curves.lines().any(|l| l.starts_with("plot=good,weak_form_effective,")));
}

#[test]
fn empty_group_list_gives_an_empty_report() {
    let set = simulate(&SimConfig {
        particles: 50,
        ..Default::default()
    })
    .unwrap();
    let cfg = RunConfig {
        groups: Vec::new(),
        ..Default::default()
    };
    let doc = fit_snapshots(&cfg, &set).unwrap();
    assert!(doc.groups.is_empty());
    let dir = tempfile::tempdir().unwrap();
    doc.save(dir.path()).unwrap();
    let files = run_report(dir.path(), None).unwrap();
    let models = std::fs::read_to_string(dir.path().join("models.csv")).unwrap();
    assert_eq!(models.lines().count(), 1);
    assert!(files.iter().any(|p| p.ends_with("report.txt")));
}

#[test]
fn missing_fit_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_report(dir.path(), None).unwrap_err();
    assert!(matches!(err, fpweak::Error::MissingArtifact(_)), "{err}");
}
