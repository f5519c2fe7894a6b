use super::*;
use crate::tensor::{gaussian, gaussian_complex};
use crate::rng::Rng;
use proptest::prelude::*;

fn bind(kind: PrimitiveKind, pairs: Vec<(&str, ParamValue)>) -> Primitive {
    let p: Params = pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Primitive::bind(kind, &p).unwrap()
}

fn ramp(shape: &[usize]) -> Tensor {
    let n = numel(shape);
    Tensor::real(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.37).sin() + 0.1 * i as f64).collect()).unwrap()
}

fn all_linear(shape2: [usize; 2]) -> Vec<(Primitive, Vec<usize>)> {
    let [h, w] = shape2;
    let mut rng = Rng::new(11);
    let mask2 = gaussian(&mut rng, &[h, w]).unwrap();
    let mask_stack = gaussian(&mut rng, &[3, h, w]).unwrap();
    let cmask = gaussian_complex(&mut rng, &[h, w]).unwrap();
    let kernel = gaussian(&mut rng, &[3, 3]).unwrap();
    let ckernel = gaussian_complex(&mut rng, &[3, 1]).unwrap();
    vec![
        (bind(PrimitiveKind::Propagate, vec![("distance", 2e-5.into()), ("wavelength", 5e-7.into()), ("pitch", 1e-6.into())]), vec![h, w]),
        (bind(PrimitiveKind::Modulate, vec![("mask", (&mask2).into())]), vec![h, w]),
        (bind(PrimitiveKind::Modulate, vec![("mask", (&mask2).into())]), vec![h, w, 3]),
        (bind(PrimitiveKind::Modulate, vec![("mask", (&mask_stack).into())]), vec![h, w]),
        (bind(PrimitiveKind::Modulate, vec![("mask", (&cmask).into())]), vec![h, w]),
        (bind(PrimitiveKind::Project, vec![("angles", vec![0.0, 17.0, 45.0, 90.0, 133.0].into()), ("n_det", (w + 3).into()), ("offset", 0.7.into())]), vec![h, w]),
        (bind(PrimitiveKind::Encode, vec![]), vec![h, w]),
        (bind(PrimitiveKind::Encode, vec![("axes", vec![1usize].into())]), vec![h, w, 2]),
        (bind(PrimitiveKind::Convolve, vec![("kernel", (&kernel).into())]), vec![h, w]),
        (bind(PrimitiveKind::Convolve, vec![("kernel", (&ckernel).into())]), vec![h, w, 2]),
        (bind(PrimitiveKind::Accumulate, vec![("axes", vec![2usize].into())]), vec![h, w, 3]),
        (bind(PrimitiveKind::Accumulate, vec![("axes", vec![0usize, 1].into())]), vec![h, w]),
        (bind(PrimitiveKind::Detect, vec![("family", "linear_field".into()), ("gain", 2.5.into())]), vec![h, w]),
        (bind(PrimitiveKind::Sample, vec![("indices", vec![0usize, 3, 3, h * w - 1].into())]), vec![h, w]),
        (bind(PrimitiveKind::Disperse, vec![("slope", 1.3.into()), ("angle", 10.0.into())]), vec![h, w, 4]),
        (bind(PrimitiveKind::Scatter, vec![("sigma", 0.8.into()), ("energy_shift", 0.4.into())]), vec![h, w, 5]),
        (bind(PrimitiveKind::Scatter, vec![("sigma", 1.2.into())]), vec![h, w]),
    ]
}

#[test]
fn every_linear_primitive_passes_dot_product_test() {
    for (p, shape) in all_linear([8, 6]) {
        for dtype in [Dtype::Real64, Dtype::Complex128] {
            let r = dot_product_test_with_dtype(&p, &shape, dtype, 5, 7).unwrap();
            assert!(r.passed, "{} on {:?} {:?}: {:?}", p.kind(), shape, dtype, r);
        }
    }
}

#[test]
fn params_round_trip_through_bind() {
    for (p, _) in all_linear([4, 4]) {
        assert_eq!(Primitive::bind(p.kind(), &p.params()).unwrap(), p);
    }
}

#[test]
fn modulate_with_ones_is_identity() {
    let x = ramp(&[4, 5]);
    let ones = Tensor::full(&[4, 5], 1.0).unwrap();
    let m = bind(PrimitiveKind::Modulate, vec![("mask", (&ones).into())]);
    assert_eq!(m.forward(&x).unwrap(), x);
}

#[test]
fn accumulate_over_unit_axis_is_reshape() {
    let x = ramp(&[3, 1, 4]);
    let s = bind(PrimitiveKind::Accumulate, vec![("axes", vec![1usize].into())]);
    let y = s.forward(&x).unwrap();
    assert_eq!(y.shape(), &[3, 4]);
    assert_eq!(y.as_real().unwrap(), x.as_real().unwrap());
}

#[test]
fn accumulate_matches_loop_sum() {
    let x = ramp(&[3, 2, 4]);
    let s = bind(PrimitiveKind::Accumulate, vec![("axes", vec![0usize, 2].into())]);
    let y = s.forward(&x).unwrap();
    let v = x.as_real().unwrap();
    for j in 0..2 {
        let mut acc = 0.0;
        for i in 0..3 {
            for k in 0..4 {
                acc += v[(i * 2 + j) * 4 + k];
            }
        }
        assert!((y.as_real().unwrap()[j] - acc).abs() < 1e-12);
    }
}

#[test]
fn sample_adjoint_zero_fills() {
    let s = bind(PrimitiveKind::Sample, vec![("indices", vec![0usize].into())]);
    let y = Tensor::real(vec![1], vec![5.0]).unwrap();
    let x = s.adjoint(&y, &[3]).unwrap();
    assert_eq!(x.as_real().unwrap(), &[5.0, 0.0, 0.0]);
}

#[test]
fn encode_matches_dft_matrix() {
    let x = Tensor::real(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
    let f = bind(PrimitiveKind::Encode, vec![]);
    let y = f.forward(&x).unwrap();
    let y = y.as_complex().unwrap();
    let xv = x.as_real().unwrap();
    for k in 0..4 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, &v) in xv.iter().enumerate() {
            acc += Complex64::from_polar(v, -2.0 * std::f64::consts::PI * (k * n) as f64 / 4.0);
        }
        acc /= 2.0;
        assert!((acc - y[k]).norm() < 1e-12, "bin {k}");
    }
}

#[test]
fn project_axis_angles_give_line_sums() {
    let (r, c) = (5, 5);
    let x = ramp(&[r, c]);
    let v = x.as_real().unwrap();
    let p = bind(PrimitiveKind::Project, vec![("angles", vec![0.0, 90.0].into())]);
    let y = p.forward(&x).unwrap();
    let y = y.as_real().unwrap();
    for j in 0..c {
        let col: f64 = (0..r).map(|i| v[i * c + j]).sum();
        assert!((y[j] - col).abs() < 1e-9);
    }
    // at 90 degrees the detector coordinate runs bottom to top
    for i in 0..r {
        let row: f64 = v[i * c..(i + 1) * c].iter().sum();
        assert!((y[c + (r - 1 - i)] - row).abs() < 1e-9);
    }
}

#[test]
fn project_conserves_mass_when_detector_covers_image() {
    let x = ramp(&[6, 6]);
    let p = bind(PrimitiveKind::Project, vec![("angles", vec![0.0, 30.0, 61.0, 120.0].into()), ("n_det", 12usize.into())]);
    let y = p.forward(&x).unwrap();
    let y = y.as_real().unwrap();
    for a in 0..4 {
        let s: f64 = y[a * 12..(a + 1) * 12].iter().sum();
        assert!((s - x.sum_real()).abs() < 1e-9, "angle {a}");
    }
}

#[test]
fn convolve_with_shifted_delta_rolls() {
    let x = ramp(&[4, 4]);
    let mut k = vec![0.0; 9];
    k[5] = 1.0; // one column right of centre
    let kt = Tensor::real(vec![3, 3], k).unwrap();
    let c = bind(PrimitiveKind::Convolve, vec![("kernel", (&kt).into())]);
    let y = c.forward(&x).unwrap();
    let (xv, yv) = (x.as_real().unwrap(), y.as_real().unwrap());
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(yv[i * 4 + j], xv[i * 4 + (j + 3) % 4]);
        }
    }
}

#[test]
fn disperse_integer_slope_shifts_bands() {
    let x = ramp(&[3, 4, 3]);
    let d = bind(PrimitiveKind::Disperse, vec![("slope", 1.0.into())]);
    let y = d.forward(&x).unwrap();
    assert_eq!(y.shape(), &[3, 6, 3]);
    let (xv, yv) = (x.as_real().unwrap(), y.as_real().unwrap());
    for i in 0..3 {
        for j in 0..4 {
            for l in 0..3 {
                assert!((yv[(i * 6 + j + l) * 3 + l] - xv[(i * 4 + j) * 3 + l]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn propagate_zero_distance_is_identity_for_propagating_band() {
    let x = ramp(&[8, 8]);
    let p = bind(PrimitiveKind::Propagate, vec![("distance", 0.0.into()), ("wavelength", 5e-7.into()), ("pitch", 1e-6.into())]);
    let y = p.forward(&x).unwrap();
    let d = y.sub(&x.to_complex()).unwrap();
    assert!(d.norm() < 1e-10);
}

#[test]
fn nonlinear_adjoint_is_rejected() {
    let d = bind(PrimitiveKind::Detect, vec![("family", "intensity_square".into()), ("gain", 1.0.into())]);
    let y = Tensor::full(&[2, 2], 1.0).unwrap();
    assert_eq!(d.adjoint(&y, &[2, 2]).unwrap_err().code(), "ADJOINT_UNDEFINED");
    let t = bind(PrimitiveKind::Transform, vec![("family", "phase_wrap".into())]);
    assert!(t.adjoint(&y, &[2, 2]).is_err());
    assert!(dot_product_test(&t, &[2, 2], 3, 0).is_err());
}

#[test]
fn unknown_parameter_is_rejected() {
    let p: Params = [("distanse".to_string(), ParamValue::Number(1.0))].into_iter().collect();
    let e = Primitive::bind(PrimitiveKind::Propagate, &p).unwrap_err();
    assert!(e.to_string().contains("distanse"), "{e}");
}

#[test]
fn zero_trials_is_an_error() {
    let f = bind(PrimitiveKind::Encode, vec![]);
    assert!(dot_product_test(&f, &[4], 0, 0).is_err());
}

#[test]
fn broken_adjoint_is_detected() {
    let f = bind(PrimitiveKind::Convolve, vec![("kernel", (&Tensor::real(vec![3], vec![1.0, 2.0, 0.5]).unwrap()).into())]);
    let sig = MapSignature { in_shape: vec![7], in_dtype: Dtype::Real64, out_shape: vec![7], out_dtype: Dtype::Real64 };
    // forward kernel used again for the adjoint: off by the flip
    let r = adjoint_check(|x| f.forward(x), |y| f.forward(y), &sig, 5, 1).unwrap();
    assert!(!r.passed && r.delta_max > 1e-3, "{r:?}");
    let r = adjoint_check(|x| f.forward(x), |y| Ok(f.adjoint(y, &[7])?.scale(1.0 + 1e-4)), &sig, 5, 1).unwrap();
    assert!(!r.passed);
}

#[test]
fn parse_accepts_names_and_symbols() {
    assert_eq!(PrimitiveKind::parse("Π"), Some(PrimitiveKind::Project));
    assert_eq!(PrimitiveKind::parse("Sigma"), Some(PrimitiveKind::Accumulate));
    assert_eq!(PrimitiveKind::parse("scatter"), Some(PrimitiveKind::Scatter));
    assert_eq!(PrimitiveKind::parse("Q"), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_shapes_pass_adjoint(h in 2usize..9, w in 2usize..9, seed in 0u64..1000) {
        for (p, shape) in all_linear([h, w]) {
            if matches!(p, Primitive::Convolve(_)) && (h < 3 || w < 3) {
                continue;
            }
            let r = dot_product_test(&p, &shape, 2, seed).unwrap();
            prop_assert!(r.passed, "{} {:?}: {:?}", p.kind(), shape, r);
        }
    }

    #[test]
    fn linear_primitives_are_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        for (p, shape) in all_linear([6, 5]) {
            let x1 = gaussian(&mut rng, &shape).unwrap();
            let x2 = gaussian(&mut rng, &shape).unwrap();
            let lhs = p.forward(&x1.scale(a).add(&x2.scale(b)).unwrap()).unwrap();
            let rhs = p.forward(&x1).unwrap().scale(a).add(&p.forward(&x2).unwrap().scale(b)).unwrap();
            let err = lhs.sub(&rhs).unwrap().norm() / (rhs.norm() + 1e-12);
            prop_assert!(err < 1e-10, "{}: {}", p.kind(), err);
        }
    }

    #[test]
    fn encode_is_unitary(n in 1usize..33, m in 1usize..9, seed in 0u64..1000) {
        let x = gaussian_complex(&mut Rng::new(seed), &[n, m]).unwrap();
        let f = bind(PrimitiveKind::Encode, vec![]);
        let y = f.forward(&x).unwrap();
        prop_assert!((y.norm() - x.norm()).abs() < 1e-9 * x.norm().max(1.0));
        let back = f.adjoint(&y, &[n, m]).unwrap();
        prop_assert!(back.sub(&x).unwrap().norm() < 1e-9 * x.norm().max(1.0));
    }
}
