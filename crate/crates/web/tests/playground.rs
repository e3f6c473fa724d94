use std::sync::OnceLock;

use advpocket_web::{grid, Playground, Statistic, CLASSES};

fn playground() -> &'static Playground {
    static P: OnceLock<Playground> = OnceLock::new();
    P.get_or_init(|| Playground::new(3, 2.0).unwrap())
}

#[test]
fn separable_blobs_are_learned() {
    assert!(playground().accuracy() > 0.95);
}

#[test]
fn decision_field_uses_every_class() {
    let field = playground().decision_field(24).unwrap();
    assert_eq!(field.len(), 24 * 24);
    for c in 0..CLASSES as u8 {
        assert!(field.contains(&c), "class {c} missing");
    }
}

#[test]
fn grid_runs_row_by_row_from_the_top() {
    let cells: Vec<(f64, f64)> = grid(2).collect();
    assert_eq!(cells, vec![(0.25, 0.75), (0.75, 0.75), (0.25, 0.25), (0.75, 0.25)]);
}

#[test]
fn statistic_fields_are_finite_and_react_to_noise() {
    let p = playground();
    let low = p.statistic_field(Statistic::Delta, 0.02, 8).unwrap();
    let high = p.statistic_field(Statistic::Delta, 0.3, 8).unwrap();
    assert!(low.iter().chain(&high).all(|v| v.is_finite() && *v >= 0.0));
    assert!(high.iter().sum::<f64>() > low.iter().sum::<f64>());
    let ku = p.statistic_field(Statistic::UntargetedSteps, 0.05, 6).unwrap();
    assert_eq!(ku.len(), 36);
    assert!(ku.iter().all(|v| v.is_finite() && *v >= 0.0));
    assert!(Statistic::parse("k_t").is_some() && Statistic::parse("nope").is_none());
}

#[test]
fn attack_paths_stay_feasible_and_reach_the_target() {
    let p = playground();
    let mut start = None;
    for (x, y) in grid(10) {
        if p.inspect(x, y, 0.05).unwrap().prediction == 0 {
            start = Some((x, y));
            break;
        }
    }
    let (x, y) = start.expect("a point of class 0");
    for lambda in [None, Some(50.0)] {
        let v = p.attack(x, y, 1, 0.02, 60, 0.6, 0.05, lambda).unwrap();
        assert_eq!(v.path.len(), 61);
        assert_eq!(v.path[0], [x, y]);
        for q in &v.path {
            assert!((q[0] - x).abs() <= 0.6 + 1e-12 && (q[1] - y).abs() <= 0.6 + 1e-12);
            assert!(q.iter().all(|c| (0.0..=1.0).contains(c)));
        }
        assert_eq!(v.l1.len(), 60);
        assert!(v.success, "{lambda:?}");
        assert_eq!(v.final_prediction, 1);
    }
    let json = serde_json::to_string(&p.inspect(x, y, 0.05).unwrap()).unwrap();
    assert!(json.contains("\"k_u\""));
}
