use hamloc::evaluation::{average_precision, evaluate, GroundTruthSegment};
use hamloc::localization::Detection;
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    iou: f64,
    ap: f64,
}

#[derive(Deserialize)]
struct Fixture {
    num_classes: usize,
    ground_truth: Vec<GroundTruthSegment>,
    predictions: Vec<Detection>,
    expected_ap: Vec<Expected>,
}

fn fixture() -> Fixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ap_golden.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn golden_ap_values() {
    let f = fixture();
    for e in &f.expected_ap {
        let got = average_precision(&f.predictions, &f.ground_truth, e.iou).value;
        assert!((got - e.ap).abs() < 1e-12, "iou {}: {got} vs {}", e.iou, e.ap);
    }
}

#[test]
fn golden_report() {
    let f = fixture();
    let ious: Vec<f64> = f.expected_ap.iter().map(|e| e.iou).collect();
    let report = evaluate(&f.predictions, &f.ground_truth, &ious, f.num_classes);
    for (m, e) in report.map_at.iter().zip(&f.expected_ap) {
        assert!((m - e.ap).abs() < 1e-12);
    }
    let mean = f.expected_ap.iter().map(|e| e.ap).sum::<f64>() / 3.0;
    assert!((report.avg_map - mean).abs() < 1e-12);
}

#[test]
fn shuffled_input_order_does_not_matter() {
    let f = fixture();
    let mut preds = f.predictions.clone();
    preds.reverse();
    let mut gt = f.ground_truth.clone();
    gt.rotate_left(1);
    for e in &f.expected_ap {
        assert!((average_precision(&preds, &gt, e.iou).value - e.ap).abs() < 1e-12);
    }
}
