mod common;

#[test]
fn decoder_training_leaves_the_encoder_untouched() {
    let (before, after, report) = common::two_block_smoke_run();
    assert_eq!(before, after);
    assert!(!report.frozen_grad_norms.is_empty());
    assert!(report.frozen_grad_norms.iter().all(|&n| n == 0.0));
    let steps_per_epoch = report.frozen_grad_norms.len() / report.epochs.len();
    assert_eq!(steps_per_epoch * report.epochs.len(), report.frozen_grad_norms.len());
}
