use depthcls_web::{crf_refine, infogain_matrix, quantization_error};

#[test]
fn quantization_error_shrinks_with_more_bins() {
    let coarse = quantization_error(10, "log", 32).unwrap();
    let fine = quantization_error(100, "log", 32).unwrap();
    assert_eq!(coarse.len(), 2);
    assert!(fine[0] < coarse[0], "{fine:?} vs {coarse:?}");
    assert!(fine[1] >= coarse[1]);
    assert!(quantization_error(50, "linear", 32).is_ok());
}

#[test]
fn quantization_error_rejects_bad_input() {
    assert!(quantization_error(10, "cubic", 32).is_err());
    assert!(quantization_error(0, "log", 32).is_err());
    assert!(quantization_error(10, "log", 0).is_err());
}

#[test]
fn infogain_matrix_is_square_with_unit_diagonal() {
    let b = 7;
    let h = infogain_matrix(b, 0.5).unwrap();
    assert_eq!(h.len(), b * b);
    for p in 0..b {
        assert_eq!(h[p * b + p], 1.0);
        for q in 0..b {
            assert_eq!(h[p * b + q], h[q * b + p]);
        }
    }
    assert!(infogain_matrix(4, -1.0).is_err());
}

#[test]
fn crf_refinement_improves_corrupted_scene() {
    let demo = crf_refine(3, 24, 30, 0.05, 3.0, 1.0).unwrap();
    assert_eq!((demo.width(), demo.height()), (24, 24));
    for image in [demo.rgb(), demo.before(), demo.after()] {
        assert_eq!(image.len(), 24 * 24 * 4);
    }
    assert!(demo.delta1_after() > demo.delta1_before());
    assert!((1..=10).contains(&demo.iterations()));
}

#[test]
fn crf_without_pairwise_terms_keeps_the_argmax() {
    let demo = crf_refine(3, 16, 20, 0.1, 0.0, 0.0).unwrap();
    assert_eq!(demo.before(), demo.after());
}
