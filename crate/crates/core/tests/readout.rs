use lftomo_core::lightfield::AngularBasis;
use lftomo_core::selftest::{tiny_plenoptic_config, tiny_single_config};
use lftomo_core::system::SystemOperator;
use lftomo_core::volume::{VolumeGrid, VoxelVolume};

fn total(y: &[f32]) -> f64 {
    y.iter().map(|v| *v as f64).sum()
}

fn blob(grid: VolumeGrid) -> VoxelVolume {
    VoxelVolume::from_fn(grid, |x, y, z| (-(x * x + y * y + z * z) / 8.0).exp())
}

/// Image brightness is a pixel integral, so refining the angular grid must
/// not change it.
#[test]
fn brightness_is_independent_of_angular_resolution() {
    let grid = VolumeGrid::cube(10, 1.0).unwrap();
    let x = blob(grid);
    for basis in [AngularBasis::Pillbox, AngularBasis::Dirac] {
        let sums: Vec<f64> = [2, 4, 8]
            .iter()
            .map(|&k| total(&SystemOperator::from_config(&tiny_single_config(40, k, basis), grid).unwrap().forward(&x.data).unwrap()))
            .collect();
        for s in &sums[1..] {
            assert!((s - sums[0]).abs() <= 0.02 * sums[0], "{basis:?}: {sums:?}");
        }
    }
    let sums: Vec<f64> = [2, 4, 8]
        .iter()
        .map(|&k| {
            let cfg = tiny_plenoptic_config([5, 5], 40, k, AngularBasis::Pillbox);
            total(&SystemOperator::from_config(&cfg, grid).unwrap().forward(&x.data).unwrap())
        })
        .collect();
    for s in &sums[1..] {
        assert!((s - sums[0]).abs() <= 0.05 * sums[0], "plenoptic: {sums:?}");
    }
}

#[test]
fn bases_agree_at_fine_angular_resolution() {
    let grid = VolumeGrid::cube(10, 1.0).unwrap();
    let x = blob(grid);
    let render = |basis| SystemOperator::from_config(&tiny_single_config(40, 8, basis), grid).unwrap().forward(&x.data).unwrap();
    let p = render(AngularBasis::Pillbox);
    let d = render(AngularBasis::Dirac);
    assert!(lftomo_core::metrics::nsd(&p, &d).unwrap() < 1e-2);
}
