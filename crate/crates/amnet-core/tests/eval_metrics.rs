//! Evaluation plumbing over real sequence records and a live (if untrained)
//! model.

use amnet_core::eval::{ope_evaluate, read_curve, CURVE_BINS};
use amnet_core::model::{AmNet, ModelConfig};
use amnet_core::synth::{synth_dataset, SynthConfig};
use amnet_core::tracker::{track_sequence, AmNetModel, TrackStats};

#[test]
fn ground_truth_echo_over_synthetic_corpus() {
    let cfg = SynthConfig { sequences: 3, frames: 8, ..Default::default() };
    let seqs = synth_dataset(&cfg).unwrap();

    let report = ope_evaluate(
        |s| Ok((s.boxes.clone(), TrackStats { tracked_frames: s.len() - 1, seconds: 0.1, fps: 0.0 })),
        &seqs,
    )
    .unwrap();

    assert_eq!(report.ious.len(), 24);
    assert!(report.precision.iter().all(|&v| v == 1.0));
    assert!((report.success_auc - 50.0 / 51.0).abs() < 1e-12);
    for seq in &report.per_sequence {
        assert_eq!(seq.mean_iou, 1.0);
        assert_eq!(seq.mean_center_error, 0.0);
    }

    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    for f in ["precision.csv", "success.csv", "per_sequence.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert_eq!(read_curve(&dir.path().join("success.csv")).unwrap().len(), CURVE_BINS);
}

#[test]
fn untrained_model_still_produces_a_box_per_frame() {
    let net = AmNet::new(ModelConfig { template_size: 16, roi_size: 48, ..Default::default() })
        .unwrap();
    let store = net.init_params::<f32>(2);
    let model = AmNetModel::new(net, store).unwrap();

    let cfg = SynthConfig { sequences: 1, frames: 5, ..Default::default() };
    let seq = &synth_dataset(&cfg).unwrap()[0];

    let (boxes, stats) = track_sequence(&model, seq).unwrap();
    assert_eq!(boxes.len(), 5);
    assert_eq!(boxes[0], seq.boxes[0]);
    assert_eq!(stats.tracked_frames, 4);
    assert!(stats.fps > 0.0);
    // Exactly one forward pass per tracked frame.
    assert_eq!(model.forward_count(), 4);

    let report = ope_evaluate(|s| track_sequence(&model, s), &seqs_slice(seq)).unwrap();
    assert_eq!(report.ious.len(), 5);
    assert_eq!(report.ious[0], 1.0);
    assert!(report.fps > 0.0);
}

fn seqs_slice(seq: &amnet_core::SequenceRecord) -> Vec<amnet_core::SequenceRecord> {
    vec![seq.clone()]
}
