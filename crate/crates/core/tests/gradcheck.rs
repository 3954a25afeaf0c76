use scenebias::gradcheck::{model_check, model_suite, primitive_suite, GradCheckConfig};
use scenebias::models::{BackboneConfig, ModelVariant};

fn cfg() -> GradCheckConfig {
    GradCheckConfig {
        max_coords: Some(4),
        ..Default::default()
    }
}

#[test]
fn every_primitive_passes() {
    for (name, rep) in primitive_suite(&cfg()).unwrap() {
        assert!(rep.passed(), "{name}: {:.3e}", rep.max_rel_error());
    }
}

#[test]
fn every_variant_passes_end_to_end() {
    let suite = model_suite(&BackboneConfig::default(), 2, &cfg()).unwrap();
    assert_eq!(suite.len(), ModelVariant::ALL.len());
    for (name, rep) in suite {
        assert!(rep.passed(), "{name}: {:.3e}", rep.max_rel_error());
        let skipped: usize = rep.params.iter().map(|p| p.skipped).sum();
        let checked: usize = rep.params.iter().map(|p| p.checked).sum();
        assert!(
            skipped * 10 < checked,
            "{name}: {skipped} of {checked} coordinates hit kinks"
        );
    }
}

#[test]
fn model_check_is_deterministic() {
    let a = model_check(ModelVariant::WeightedFocus, &BackboneConfig::default(), 1, &cfg()).unwrap();
    let b = model_check(ModelVariant::WeightedFocus, &BackboneConfig::default(), 1, &cfg()).unwrap();
    assert_eq!(a, b);
}
