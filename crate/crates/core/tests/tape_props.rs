//! Algebraic identities of the row-routing and elementwise tape ops.

use pcode_core::tensor::{Tape, Tensor};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols)
        .prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

fn case() -> impl Strategy<Value = (Tensor, Tensor, Vec<bool>)> {
    (1usize..7, 1usize..5).prop_flat_map(|(r, c)| {
        (matrix(r, c), matrix(r, c), prop::collection::vec(any::<bool>(), r))
    })
}

proptest! {
    #[test]
    fn blending_a_tensor_with_itself_is_identity((a, _b, mask) in case()) {
        let mut tape = Tape::new();
        let va = tape.constant(a.clone());
        let out = tape.mask_blend(&mask, va, va).unwrap();
        prop_assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn blend_complements_swap_sides((a, b, mask) in case()) {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let flipped: Vec<bool> = mask.iter().map(|m| !m).collect();
        let x = tape.mask_blend(&mask, va, vb).unwrap();
        let y = tape.mask_blend(&flipped, vb, va).unwrap();
        prop_assert_eq!(tape.value(x), tape.value(y));
    }

    #[test]
    fn merge_is_blend_in_compact_form((a, b, mask) in case()) {
        let rows: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
        prop_assume!(!rows.is_empty());
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let blended = tape.mask_blend(&mask, vb, va).unwrap();
        let sub = tape.select_rows(vb, &rows).unwrap();
        let merged = tape.merge_rows(va, &rows, sub).unwrap();
        prop_assert_eq!(tape.value(blended), tape.value(merged));
        let back = tape.select_rows(merged, &rows).unwrap();
        prop_assert_eq!(tape.value(back), tape.value(sub));
    }

    #[test]
    fn column_affine_inverts((a, _b, _m) in case(), seed in 0u64..1000) {
        let cols = a.shape()[1];
        let scale: Vec<f64> = (0..cols).map(|j| 0.5 + ((seed + j as u64) % 7) as f64).collect();
        let shift: Vec<f64> = (0..cols).map(|j| j as f64 - 1.5).collect();
        let inv: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
        let neg: Vec<f64> = shift.iter().zip(&scale).map(|(t, s)| -t / s).collect();
        let mut tape = Tape::new();
        let va = tape.constant(a.clone());
        let y = tape.col_affine(va, &scale, &shift).unwrap();
        let back = tape.col_affine(y, &inv, &neg).unwrap();
        for (x, z) in a.data().iter().zip(tape.value(back).data()) {
            prop_assert!((x - z).abs() < 1e-12);
        }
    }
}
