mod common;

use common::{loop_loss, random_map_set};
use graspforge_core::loss::{loss_gradients, positional_loss, standard_loss};
use graspforge_core::LossKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn losses_match_scalar_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..100 {
        let aux = case % 2 == 0;
        let (h, w) = (rng.random_range(1..24), rng.random_range(1..24));
        let batch = rng.random_range(1..4);
        let (pred, gt) = random_map_set(&mut rng, batch, h, w, aux);
        let s = standard_loss(&pred, &gt).unwrap();
        let p = positional_loss(&pred, &gt).unwrap();
        for (kind, got) in [(LossKind::Standard, s), (LossKind::Positional, p)] {
            let want = loop_loss(kind, &pred, &gt);
            let terms = [got.q, got.cos, got.sin, got.width, got.aux.unwrap_or(0.0)];
            for (g, w) in terms.iter().zip(want) {
                assert!(
                    rel(*g, w) <= 1e-6 || (*g == 0.0 && w == 0.0),
                    "case {case} {kind}: {g} vs {w}"
                );
            }
            assert!(rel(got.total, want.iter().sum()) <= 1e-6);
            assert_eq!(got.aux.is_some(), aux);
        }
        assert!(
            p.total <= s.total,
            "case {case}: positional {} > standard {}",
            p.total,
            s.total
        );
    }
}

#[test]
fn masked_pixels_have_no_influence() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let (pred, gt) = random_map_set(&mut rng, 2, 16, 16, true);
        let base = positional_loss(&pred, &gt).unwrap();
        let mut moved = pred.clone();
        let zero: Vec<bool> = gt.q.data().iter().map(|&v| v == 0.0).collect();
        assert!(zero.iter().any(|&z| z));
        for map in [&mut moved.cos, &mut moved.sin, &mut moved.width] {
            for (v, &z) in map.data_mut().iter_mut().zip(&zero) {
                if z {
                    *v += rng.random_range(-10.0..10.0);
                }
            }
        }
        assert_eq!(positional_loss(&moved, &gt).unwrap(), base);
        let (_, grads) = loss_gradients(LossKind::Positional, &moved, &gt).unwrap();
        for map in [&grads.cos, &grads.sin, &grads.width] {
            for (g, &z) in map.data().iter().zip(&zero) {
                if z {
                    assert_eq!(*g, 0.0);
                }
            }
        }
    }
}
