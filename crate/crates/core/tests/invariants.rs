mod common;

use common::*;
use drivest::estimands::analyze_pair;

const N: usize = 800;

#[test]
fn weights_are_normalized() {
    for (name, spec, cfg) in preset_cases() {
        let a = analyze_pair(&sample(&spec, N, 3), &cfg, (0, 1)).unwrap();
        let g = weight_normalization_gap(&a);
        assert!(g <= 1e-12, "{name}: {g:e}");
    }
}

#[test]
fn sign_decomposition_holds() {
    for (name, spec, cfg) in preset_cases() {
        let a = analyze_pair(&sample(&spec, N, 4), &cfg, (0, 1)).unwrap();
        let g = decomposition_gap(&a);
        assert!(g <= 1e-10, "{name}: {g:e}");
    }
}

#[test]
fn instrument_relabel_invariance() {
    for (name, spec, cfg) in preset_cases() {
        let g = relabel_gap(&sample(&spec, N, 5), &cfg);
        assert!(g <= 1e-10, "{name}: {g:e}");
    }
}

#[test]
fn affine_equivariance() {
    for (name, spec, cfg) in preset_cases() {
        let g = affine_gap(&sample(&spec, N, 6), &cfg);
        assert!(g <= 1e-7, "{name}: {g:e}");
    }
}

#[test]
fn influence_channels_are_centered() {
    for (name, spec, cfg) in preset_cases() {
        let a = analyze_pair(&sample(&spec, N, 7), &cfg, (0, 1)).unwrap();
        let r = channel_mean_ratio(&a);
        assert!(r <= 1e-2, "{name}: {r:e}");
    }
}

#[test]
fn seed_determinism() {
    for (name, spec, cfg) in preset_cases() {
        assert!(deterministic(&spec, &cfg, N, 8), "{name}");
    }
}
