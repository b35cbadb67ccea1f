//! Analytic gradients against central finite differences.

mod common;

use swinir::model::{SwinIRConfig, Task, Upsampler};
use swinir::trainer::{gradcheck, GradcheckOptions};

#[test]
fn every_op_matches_finite_differences_in_f32() {
    let cases = common::op_cases();
    assert!(cases.len() >= 25);
    for c in &cases {
        let err = common::op_error(c);
        assert!(err < 1e-3, "{}: relative gradient error {err:.3e}", c.name);
    }
}

fn tiny(task: Task, upsampler: Upsampler) -> SwinIRConfig {
    SwinIRConfig {
        num_blocks: 1,
        layers_per_block: 2,
        window: 4,
        channels: 8,
        heads: 2,
        mlp_ratio: 2,
        task,
        scale: if task == Task::Sr { 2 } else { 1 },
        in_channels: 1,
        out_channels: 1,
        upsampler,
        num_feat: 8,
        block_residual: true,
    }
}

#[test]
fn whole_tiny_model_in_f64_through_both_losses() {
    for cfg in [
        tiny(Task::Sr, Upsampler::PixelShuffle),
        tiny(Task::Denoise, Upsampler::PixelShuffle),
    ] {
        let report = gradcheck(&cfg, &GradcheckOptions::default()).unwrap();
        assert!(report.passed(), "{report}");
        assert!(report.worst() < 1e-4);
        let losses: std::collections::BTreeSet<_> = report.groups.iter().map(|g| g.loss).collect();
        assert_eq!(losses.len(), 2);
        // the shifted layer and its mask are exercised
        assert!(report.groups.iter().any(|g| g.group.starts_with("rstb.0.stl.1.")));
    }
}

#[test]
fn gradcheck_catches_a_broken_backward_rule() {
    let cfg = tiny(Task::Denoise, Upsampler::PixelShuffle);
    for op in ["layer_norm", "softmax", "conv2d"] {
        let opts = GradcheckOptions {
            max_probes: Some(3),
            fault: Some(op),
            ..Default::default()
        };
        let report = gradcheck(&cfg, &opts).unwrap();
        assert!(!report.passed(), "fault in {op} went unnoticed");
        assert!(report.worst() > 1e-2);
    }
}

#[test]
fn gradcheck_report_is_deterministic() {
    let cfg = tiny(Task::Sr, Upsampler::PixelShuffleDirect);
    let opts = GradcheckOptions {
        max_probes: Some(4),
        seed: 5,
        ..Default::default()
    };
    let a = gradcheck(&cfg, &opts).unwrap();
    let b = gradcheck(&cfg, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_string(), b.to_string());
}
