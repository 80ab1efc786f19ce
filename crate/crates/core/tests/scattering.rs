mod common;

use common::jacobi_eigenvalues;
use istc_core::dictionary::linf_distance;
use istc_core::io::{read_tensor, write_tensor};
use istc_core::scattering::{
    apply_reduction, build_morlet_bank, channel_count, fit_reduction, morlet_filter, morlet_mother, roll_image,
    scatter, synthetic_image, ScatteringConfig,
};
use ndarray::{s, Array2, Axis};

fn centered(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

#[test]
fn dilated_filter_matches_scaled_mother() {
    let n = 64;
    for j in 0..3 {
        let scale = (1u32 << j) as f64;
        let filter = morlet_filter(j, 0.0, n, n);
        let (mut diff, mut norm) = (0.0, 0.0);
        for y in 0..n {
            for x in 0..n {
                let expected = morlet_mother(centered(y, n) / scale, centered(x, n) / scale) / (scale * scale);
                diff += (filter[[y, x]] - expected).norm_sqr();
                norm += expected.norm_sqr();
            }
        }
        let rel = (diff / norm).sqrt();
        assert!(rel <= 0.05, "j={j}: relative error {rel}");
    }
}

#[test]
fn shift_equivariance_with_color() {
    let config = ScatteringConfig {
        j_max: 2,
        n_angles: 4,
        n_phases: 2,
        n_colors: 3,
        height: 16,
        width: 24,
    };
    let bank = build_morlet_bank(&config).unwrap();
    let x = synthetic_image(3, 16, 24, 9);
    let base = scatter(&x, &bank).unwrap().tensor;
    let shifted = scatter(&roll_image(&x, 4, 8), &bank).unwrap().tensor;
    let (h, w, c) = base.dim();
    assert_eq!(c, channel_count(&config));
    for y in 0..h {
        for xx in 0..w {
            let a = base.slice(s![y, xx, ..]);
            let b = shifted.slice(s![(y + 1) % h, (xx + 2) % w, ..]);
            assert!(linf_distance(a, b) <= 1e-10);
        }
    }
}

#[test]
fn captured_variance_matches_independent_eigensolve() {
    let config = ScatteringConfig {
        j_max: 2,
        n_angles: 4,
        n_phases: 2,
        n_colors: 1,
        height: 16,
        width: 16,
    };
    let bank = build_morlet_bank(&config).unwrap();
    let outputs: Vec<_> = (0..6)
        .map(|seed| scatter(&synthetic_image(1, 16, 16, 40 + seed), &bank).unwrap())
        .collect();
    let c = channel_count(&config);
    let target = c / 6;
    let op = fit_reduction(&outputs, target).unwrap();

    let rows: Vec<Array2<f64>> = outputs.iter().map(|o| o.position_vectors()).collect();
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let data = ndarray::concatenate(Axis(0), &views).unwrap();
    let mean = data.mean_axis(Axis(0)).unwrap();
    let centered = &data - &mean;
    let cov = centered.t().dot(&centered) / data.nrows() as f64;
    let values = jacobi_eigenvalues(&cov);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let kept: f64 = values[..target].iter().map(|v| v.max(0.0)).sum();
    assert!((op.captured_variance() - kept / total).abs() <= 1e-9);

    let reduced = apply_reduction(&op, &outputs[0]).unwrap();
    assert_eq!(reduced.dim(), (4, 4, target));
}

#[test]
fn scattered_tensor_roundtrips_through_file_format() {
    let config = ScatteringConfig::default();
    let bank = build_morlet_bank(&config).unwrap();
    let out = scatter(&synthetic_image(1, 32, 32, 3), &bank).unwrap();
    let mut bytes = Vec::new();
    write_tensor(&mut bytes, &out.tensor).unwrap();
    assert_eq!(read_tensor(bytes.as_slice()).unwrap(), out.tensor);
}
