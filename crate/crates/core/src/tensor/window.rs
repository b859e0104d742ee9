//! Row-index builders for spatial token rearrangements.
//!
//! Token grids are stored as rows `[batch * side * side, channels]` in
//! row-major spatial order. Window partition/merge, cyclic shifts and 2x2
//! patch merging are all row permutations (or gathers), so they are expressed
//! as index lists consumed by [`Tensor::gather_rows`](super::Tensor::gather_rows).

/// Cyclic roll by `-shift` on both spatial axes: output `(r, c)` reads input
/// `((r + shift) % side, (c + shift) % side)`.
pub fn roll_indices(batch: usize, side: usize, shift: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(batch * side * side);
    for b in 0..batch {
        for r in 0..side {
            for c in 0..side {
                idx.push(b * side * side + ((r + shift) % side) * side + (c + shift) % side);
            }
        }
    }
    idx
}

/// Rows grouped window by window (window-major, then row-major within the
/// window) after a cyclic roll by `-shift`.
pub fn partition_indices(batch: usize, side: usize, window: usize, shift: usize) -> Vec<usize> {
    assert!(side % window == 0, "side {side} not divisible by window {window}");
    let per_side = side / window;
    let mut idx = Vec::with_capacity(batch * side * side);
    for b in 0..batch {
        for wr in 0..per_side {
            for wc in 0..per_side {
                for i in 0..window {
                    for j in 0..window {
                        let r = (wr * window + i + shift) % side;
                        let c = (wc * window + j + shift) % side;
                        idx.push(b * side * side + r * side + c);
                    }
                }
            }
        }
    }
    idx
}

/// Inverse permutation of `indices`.
pub fn invert(indices: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; indices.len()];
    for (pos, &src) in indices.iter().enumerate() {
        inv[src] = pos;
    }
    inv
}

/// Additive attention mask `[windows, T, T]` for shifted windows: 0 between
/// tokens from the same pre-roll region, `-100` otherwise.
pub fn shift_mask(side: usize, window: usize, shift: usize) -> Vec<f64> {
    let region = |x: usize| {
        if x < side - window {
            0
        } else if x < side - shift {
            1
        } else {
            2
        }
    };
    let per_side = side / window;
    let t = window * window;
    let mut mask = Vec::with_capacity(per_side * per_side * t * t);
    for wr in 0..per_side {
        for wc in 0..per_side {
            let ids: Vec<usize> = (0..t)
                .map(|p| region(wr * window + p / window) * 3 + region(wc * window + p % window))
                .collect();
            for &a in &ids {
                for &b in &ids {
                    mask.push(if a == b { 0.0 } else { -100.0 });
                }
            }
        }
    }
    mask
}

/// Index into a `(2w-1)^2` relative-position table for each token pair of a window.
pub fn relative_position_index(window: usize) -> Vec<usize> {
    let t = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in 0..t {
            let dy = i / window + window - 1 - j / window;
            let dx = i % window + window - 1 - j % window;
            idx.push(dy * span + dx);
        }
    }
    idx
}

/// Gathers each 2x2 neighbourhood as four consecutive rows in the order
/// (0,0), (1,0), (0,1), (1,1), one neighbourhood per merged cell.
pub fn merge_indices(batch: usize, side: usize) -> Vec<usize> {
    assert!(side % 2 == 0, "cannot merge odd side {side}");
    let half = side / 2;
    let mut idx = Vec::with_capacity(batch * side * side);
    for b in 0..batch {
        for r in 0..half {
            for c in 0..half {
                for (dr, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    idx.push(b * side * side + (2 * r + dr) * side + 2 * c + dc);
                }
            }
        }
    }
    idx
}

/// Pixel rows of `[batch, size, size, 3]` images reordered so that each
/// `patch x patch` block is contiguous, blocks in row-major order.
pub fn patch_pixel_indices(batch: usize, size: usize, patch: usize) -> Vec<usize> {
    assert!(size % patch == 0, "size {size} not divisible by patch {patch}");
    let per_side = size / patch;
    let mut idx = Vec::with_capacity(batch * size * size);
    for b in 0..batch {
        for pr in 0..per_side {
            for pc in 0..per_side {
                for i in 0..patch {
                    for j in 0..patch {
                        idx.push(b * size * size + (pr * patch + i) * size + pc * patch + j);
                    }
                }
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_then_invert_is_identity() {
        for shift in [0, 2] {
            let p = partition_indices(2, 8, 4, shift);
            let inv = invert(&p);
            let round: Vec<usize> = inv.iter().map(|&i| p[i]).collect();
            assert_eq!(round, (0..128).collect::<Vec<_>>());
        }
    }

    #[test]
    fn roll_twice_by_half_side_is_identity() {
        let once = roll_indices(1, 4, 2);
        let twice: Vec<usize> = once.iter().map(|&i| once[i]).collect();
        assert_eq!(twice, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn unshifted_mask_regions_are_single() {
        // A window fully inside region (0,0) must have an all-zero mask.
        let m = shift_mask(8, 4, 2);
        assert!(m[..256].iter().all(|&v| v == 0.0));
        // The bottom-right window mixes four regions.
        assert!(m[3 * 256..].iter().any(|&v| v < 0.0));
    }

    #[test]
    fn relative_index_diagonal_is_center() {
        let idx = relative_position_index(3);
        let center = 2 * 5 + 2;
        for i in 0..9 {
            assert_eq!(idx[i * 9 + i], center);
        }
    }

    #[test]
    fn merge_covers_each_token_once() {
        let mut m = merge_indices(2, 4);
        m.sort_unstable();
        assert_eq!(m, (0..32).collect::<Vec<_>>());
    }
}
