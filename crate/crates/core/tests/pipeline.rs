use std::sync::Arc;

use gapscan::data::gen_uniform;
use gapscan::model::{Dataset, Orientation, Provenance, VariableSpec};
use gapscan::oracles::{Oracle, QuadraticBowl};
use gapscan::pipeline::{
    Brush, NeighborRequest, SearchRequest, Session, SessionConfig, Strategy, TargetFilter, VariableDelta,
    ViewRequest,
};
use gapscan::projection::fit_pca;
use gapscan::surrogate::Phase;
use gapscan::Error;

fn bowl(d: usize) -> Arc<dyn Oracle> {
    Arc::new(QuadraticBowl::new(d))
}

fn session(n: usize, d: usize, config: SessionConfig) -> Session {
    let oracle = bowl(d);
    let ds = gen_uniform(oracle.as_ref(), n, 3).unwrap();
    Session::new(ds, oracle, config).unwrap()
}

fn request(strategy: Strategy, batch_size: usize) -> SearchRequest {
    SearchRequest {
        strategy,
        batch_size,
        ..SearchRequest::default()
    }
}

/// Four corner rows of the unit square measured by the bowl oracle.
fn corners() -> Dataset {
    let oracle = QuadraticBowl::new(2);
    let mut vars = vec![VariableSpec::input("x0", 0.0, 1.0), VariableSpec::input("x1", 0.0, 1.0)];
    vars.push(VariableSpec::target("f1", 1.0, 2.0, Orientation::Maximize));
    vars.push(VariableSpec::target("f2", 1.0, 2.0, Orientation::Maximize));
    let rows = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        .into_iter()
        .map(|x| (x.to_vec(), oracle.evaluate(&x)));
    Dataset::from_raw_rows(vars, rows).unwrap()
}

#[test]
fn thresholds_must_be_ordered() {
    let oracle = bowl(2);
    let ds = gen_uniform(oracle.as_ref(), 30, 0).unwrap();
    let cfg = SessionConfig {
        t1: 10.0,
        t2: 20.0,
        ..SessionConfig::default()
    };
    assert!(matches!(Session::new(ds, oracle, cfg), Err(Error::InvalidParameter(_))));
}

#[test]
fn initial_round_verifies_nothing() {
    let mut s = session(10, 3, SessionConfig::default());
    assert_eq!(s.phase().phase, Phase::Initial);
    let before = s.version();
    let report = s.run_round(&request(Strategy::Esa, 20), 0).unwrap();
    assert_eq!(report.proposals, 20);
    assert!(report.verified.is_empty());
    assert_eq!(s.version(), before);
    assert_eq!(s.dataset().len(), 10);
}

#[test]
fn blank_strategy_yields_center() {
    let mut s = session(30, 4, SessionConfig::default());
    let out = s.search(&request(Strategy::Blank, 50)).unwrap();
    assert_eq!(out.proposals.len(), 1);
    assert_eq!(out.proposals[0].configuration.values, vec![0.5; 4]);
    assert_eq!(out.proposals[0].configuration.provenance, Provenance::Blank);
}

#[test]
fn esa_batch_of_fifty_respects_brushes() {
    let mut s = session(60, 3, SessionConfig::default());
    let out = s.search(&request(Strategy::Esa, 50)).unwrap();
    assert_eq!(out.proposals.len(), 50);

    let mut req = request(Strategy::Esa, 50);
    req.brushes = vec![Brush {
        variable: "x1".into(),
        lo: 0.2,
        hi: 0.4,
    }];
    let out = s.search(&req).unwrap();
    assert_eq!(out.proposals.len(), 50);
    for p in &out.proposals {
        let v = p.configuration.values[1];
        assert!((0.2..=0.4).contains(&v), "{v}");
    }
    req.brushes[0].hi = 1.5;
    assert!(s.search(&req).is_err());
}

#[test]
fn unknown_strategy_name_is_rejected() {
    assert!("teleport".parse::<Strategy>().is_err());
    assert_eq!("rw".parse::<Strategy>().unwrap(), Strategy::RandomWalk);
}

#[test]
fn budget_cap_refuses_sixth_verification() {
    let cfg = SessionConfig {
        budget: 5.0,
        ..SessionConfig::default()
    };
    let mut s = session(10, 2, cfg);
    let out = s.search(&request(Strategy::RandomSample, 10)).unwrap();
    let ids: Vec<u64> = out.proposals.iter().map(|p| p.id).collect();
    for &id in &ids[..5] {
        let r = s.verify(&[id], None).unwrap();
        assert_eq!(r.verified.len(), 1);
    }
    assert_eq!(s.pareto().budget_spent, 5.0);
    let refused = s.verify(&[ids[5]], None);
    assert!(matches!(refused, Err(Error::BudgetExhausted { .. })), "{refused:?}");
    assert_eq!(s.dataset().len(), 15);

    // re-verifying spends nothing and adds no row
    let again = s.verify(&[ids[0]], None).unwrap();
    assert_eq!(again.already_verified, vec![ids[0]]);
    assert!(again.verified.is_empty());
    assert!(!again.warnings.is_empty());
    assert_eq!(s.pareto().budget_spent, 5.0);
    assert_eq!(s.dataset().len(), 15);
}

#[test]
fn mixed_batch_truncates_at_budget() {
    let cfg = SessionConfig {
        budget: 2.0,
        ..SessionConfig::default()
    };
    let mut s = session(10, 2, cfg);
    let out = s.search(&request(Strategy::RandomSample, 4)).unwrap();
    let ids: Vec<u64> = out.proposals.iter().map(|p| p.id).collect();
    let r = s.verify(&ids, None).unwrap();
    assert_eq!(r.verified.len(), 2);
    assert_eq!(r.refused, ids[2..].to_vec());
}

#[test]
fn verifying_improvement_grows_area_and_copy_does_not() {
    let oracle = bowl(2);
    let mut s = Session::new(corners(), oracle, SessionConfig::default()).unwrap();
    let area0 = s.pareto().dominance_area;

    let copies = s.search(&request(Strategy::ParetoImprovement, 1)).unwrap();
    let r = s.verify(&[copies.proposals[0].id], None).unwrap();
    assert!(!r.verified[0].expanded);
    assert_eq!(r.dominance_area, area0);

    let blank = s.search(&request(Strategy::Blank, 1)).unwrap();
    let r = s.verify(&[blank.proposals[0].id], None).unwrap();
    assert!(r.verified[0].expanded);
    assert!(r.dominance_area > area0);
}

#[test]
fn stale_version_writes_are_rejected() {
    let mut s = session(10, 2, SessionConfig::default());
    let v0 = s.version();
    let out = s.search(&request(Strategy::RandomSample, 3)).unwrap();
    assert_eq!(out.dataset_version, v0);
    s.verify(&[out.proposals[0].id], Some(v0)).unwrap();
    assert_eq!(s.version(), v0 + 1);

    let mut req = request(Strategy::RandomSample, 3);
    req.expected_version = Some(v0);
    assert!(matches!(s.search(&req), Err(Error::StaleVersion { .. })));
    assert!(matches!(
        s.verify(&[out.proposals[1].id], Some(v0)),
        Err(Error::StaleVersion { .. })
    ));
    assert!(matches!(
        s.edit(out.proposals[1].id, &[], Some(v0)),
        Err(Error::StaleVersion { .. })
    ));
}

#[test]
fn sessions_on_one_dataset_are_independent() {
    let oracle = bowl(2);
    let ds = gen_uniform(oracle.as_ref(), 10, 1).unwrap();
    let mut a = Session::new(ds.clone(), Arc::clone(&oracle), SessionConfig::default()).unwrap();
    let mut b = Session::new(ds, oracle, SessionConfig::default()).unwrap();
    let pa = a.search(&request(Strategy::RandomSample, 2)).unwrap();
    let pb = b.search(&request(Strategy::Blank, 1)).unwrap();
    a.verify(&[pa.proposals[0].id], None).unwrap();
    assert_eq!(a.dataset().len(), 11);
    assert_eq!(b.dataset().len(), 10);
    assert_eq!(b.pareto().budget_spent, 0.0);
    assert_eq!(b.proposals().count(), 1);
    assert_eq!(b.proposal(pb.proposals[0].id).unwrap().configuration.values, vec![0.5, 0.5]);
}

#[test]
fn edit_displacement_follows_projection() {
    let mut s = session(80, 5, SessionConfig::default());
    let out = s.search(&request(Strategy::RandomSample, 2)).unwrap();
    let pid = out.proposals[0].id;
    let before = out.proposals[0].configuration.values.clone();

    let zero = s.edit(pid, &[], None).unwrap();
    assert_eq!(zero.displacement, [0.0, 0.0]);
    assert_eq!(zero.proposal.configuration.provenance, Provenance::UserEdited);

    let delta = (0.5 - before[2]) * 0.5;
    let moved = s
        .edit(
            pid,
            &[VariableDelta {
                variable: "x2".into(),
                delta,
            }],
            None,
        )
        .unwrap();
    let pca = fit_pca(&s.dataset().existing_points(), 2).unwrap();
    let a = pca.project(&before).unwrap();
    let b = pca.project(&moved.proposal.configuration.values).unwrap();
    for k in 0..2 {
        assert!((moved.displacement[k] - (b[k] - a[k])).abs() < 1e-12);
    }
    assert!(moved.clamped.is_empty());

    let clamped = s
        .edit(
            pid,
            &[VariableDelta {
                variable: "x0".into(),
                delta: 5.0,
            }],
            None,
        )
        .unwrap();
    assert_eq!(clamped.clamped, vec!["x0".to_string()]);
    assert_eq!(clamped.proposal.configuration.values[0], 1.0);
    assert!(matches!(s.edit(9999, &[], None), Err(Error::Unknown { .. })));
}

#[test]
fn estimates_attach_only_after_initial() {
    let mut cold = session(10, 2, SessionConfig::default());
    let out = cold.search(&request(Strategy::RandomSample, 3)).unwrap();
    assert!(out.proposals.iter().all(|p| p.estimate().is_none()));

    let warm_cfg = SessionConfig {
        t1: 1e6,
        t2: 1e5,
        ..SessionConfig::default()
    };
    let mut warm = session(60, 2, warm_cfg);
    assert_eq!(warm.phase().phase, Phase::Expert);
    let out = warm.search(&request(Strategy::RandomSample, 3)).unwrap();
    assert!(out.proposals.iter().all(|p| p.estimate().is_some()));
    assert!(warm.pareto().front_proposed().len() >= 1);
}

#[test]
fn expert_refinement_never_lowers_prediction() {
    let cfg = SessionConfig {
        t1: 1e6,
        t2: 1e5,
        budget: 100.0,
        ..SessionConfig::default()
    };
    let mut s = session(80, 3, cfg);
    let report = s.run_round(&request(Strategy::RandomSample, 10), 3).unwrap();
    assert_eq!(report.phase_before, Phase::Expert);
    assert_eq!(report.refinements.len(), 10);
    for r in &report.refinements {
        assert!(r.value >= r.start_value, "{r:?}");
    }
    assert!(report.verified.len() <= 3);
    assert_eq!(s.dataset().len(), 80 + report.verified.len());
}

#[test]
fn round_verification_respects_budgets() {
    let cfg = SessionConfig {
        t1: 1e6,
        t2: 1e-9,
        budget: 2.0,
        ..SessionConfig::default()
    };
    let mut s = session(60, 2, cfg);
    assert_eq!(s.phase().phase, Phase::Developed);
    let r = s.run_round(&request(Strategy::Esa, 30), 10).unwrap();
    assert!(r.verified.len() <= 2);
    assert!(r.refinements.is_empty());
    assert!(r.budget_spent <= 2.0);
}

#[test]
fn developed_esa_outgains_random_sampling() {
    let mut esa = Vec::new();
    let mut rs = Vec::new();
    for seed in 0..20u64 {
        for (strategy, out) in [(Strategy::Esa, &mut esa), (Strategy::RandomSample, &mut rs)] {
            let oracle = bowl(3);
            let ds = gen_uniform(oracle.as_ref(), 200, 0).unwrap();
            let cfg = SessionConfig {
                t1: 1e6,
                t2: 1e-9,
                budget: 10.0,
                seed,
                ..SessionConfig::default()
            };
            let mut s = Session::new(ds, oracle, cfg).unwrap();
            let mut req = request(strategy, 50);
            req.seed = Some(seed);
            let r = s.run_round(&req, 10).unwrap();
            out.push(r.area_after - r.area_before);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&esa) > mean(&rs), "esa {} rs {}", mean(&esa), mean(&rs));
    let test = gapscan::stats::rank_sum_test(&esa, &rs, gapscan::stats::Alternative::Greater);
    assert!(test.p_value < 0.05, "{test:?}");
}

#[test]
fn view_bundle_panels() {
    let mut s = session(120, 4, SessionConfig::default());
    let out = s.search(&request(Strategy::RandomSample, 2)).unwrap();
    let pid = out.proposals[0].id;

    let global = s.view(&ViewRequest::default()).unwrap();
    assert_eq!(global.existing.len(), 120);
    assert_eq!(global.proposals.len(), 2);
    assert_eq!(global.scree.len(), 4);
    assert_eq!(global.loading_vectors.len(), 4);
    let grid = global.density.as_ref().unwrap();
    assert!((grid.integral() - 1.0).abs() < 0.02, "{}", grid.integral());
    assert_eq!(global.bars.len(), 4);

    let subset_req = ViewRequest {
        subset: vec![TargetFilter {
            target: "f1".into(),
            lo: 1.7,
            hi: 2.0,
        }],
        use_global_pca: false,
        neighbor: Some(NeighborRequest { pid, k: 11 }),
        ..ViewRequest::default()
    };
    let subset = s.view(&subset_req).unwrap();
    let kept = subset.existing.iter().filter(|p| p.in_subset).count();
    assert!(kept > 4 && kept < 120, "{kept}");
    assert_ne!(subset.scree, global.scree);
    let nb = subset.neighbor.unwrap();
    assert_eq!(nb.neighbor_ids.len(), 11);
    assert_eq!(nb.embedding.points.len(), 11);

    let missing = ViewRequest {
        neighbor: Some(NeighborRequest { pid: 777, k: 3 }),
        ..ViewRequest::default()
    };
    assert!(s.view(&missing).is_err());
}
