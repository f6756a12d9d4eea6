use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_weights, weighted_chebyshev, ContextWindow, DocumentLayout, NormalizedPosition};
use crate::error::{Error, Result};

/// Anchor plus its `s - 1` nearest boxes under the weighted Chebyshev metric.
///
/// The anchor always occupies slot 0. Remaining members follow in ascending
/// distance with ties going to the lower id. Layouts with fewer than `s`
/// boxes are padded with masked slots.
pub fn nearest_window(
    layout: &DocumentLayout,
    anchor_id: usize,
    s: usize,
    k: f64,
    m: f64,
) -> Result<ContextWindow> {
    if layout.is_empty() {
        return Err(Error::invalid("empty layout"));
    }
    check_weights(k, m)?;
    let centers = layout.centers()?;
    window_from_centers(&centers, anchor_id, s, k, m)
}

pub(crate) fn window_from_centers(
    centers: &[NormalizedPosition],
    anchor_id: usize,
    s: usize,
    k: f64,
    m: f64,
) -> Result<ContextWindow> {
    if s == 0 {
        return Err(Error::invalid("window size must be at least 1"));
    }
    let anchor = *centers
        .get(anchor_id)
        .ok_or_else(|| Error::invalid(format!("anchor {anchor_id} out of range")))?;

    let mut candidates = Vec::with_capacity(centers.len().saturating_sub(1));
    for (id, c) in centers.iter().enumerate() {
        if id != anchor_id {
            candidates.push((weighted_chebyshev(*c, anchor, k, m)?, id));
        }
    }
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    let take = (s - 1).min(candidates.len());
    if take < candidates.len() && take > 0 {
        candidates.select_nth_unstable_by(take - 1, by_distance);
    }
    candidates.truncate(take);
    candidates.sort_unstable_by(by_distance);

    let mut members = Vec::with_capacity(s);
    let mut positions = Vec::with_capacity(s);
    let mut padding_mask = Vec::with_capacity(s);
    members.push(Some(anchor_id));
    positions.push(anchor);
    padding_mask.push(true);
    for &(_, id) in &candidates {
        members.push(Some(id));
        positions.push(centers[id]);
        padding_mask.push(true);
    }
    while members.len() < s {
        members.push(None);
        positions.push(NormalizedPosition::ORIGIN);
        padding_mask.push(false);
    }
    Ok(ContextWindow { anchor_id, members, positions, padding_mask })
}

/// Covers a page with windows: pick a random unvisited anchor, take its
/// nearest window, mark every member visited, repeat until none remain.
///
/// Anchors are drawn with ChaCha8 seeded from `seed`, uniformly over the
/// still-unvisited ids kept in ascending order.
pub fn sequential_context_windows(
    layout: &DocumentLayout,
    s: usize,
    k: f64,
    m: f64,
    seed: u64,
) -> Result<Vec<ContextWindow>> {
    if layout.is_empty() {
        return Err(Error::invalid("empty layout"));
    }
    check_weights(k, m)?;
    let centers = layout.centers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut visited = vec![false; centers.len()];
    let mut unvisited: Vec<usize> = (0..centers.len()).collect();
    let mut windows = Vec::new();
    while !unvisited.is_empty() {
        let anchor = unvisited[rng.random_range(0..unvisited.len())];
        let window = window_from_centers(&centers, anchor, s, k, m)?;
        for id in window.real_members() {
            visited[id] = true;
        }
        unvisited.retain(|&id| !visited[id]);
        windows.push(window);
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WordBox;

    fn grid(n: usize) -> DocumentLayout {
        // n×n unit cells on an (n*10)×(n*10) page
        let mut boxes = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let id = boxes.len();
                let (x, y) = (c as f64 * 10.0, r as f64 * 10.0);
                boxes.push(WordBox::new(id, x + 2.0, y + 2.0, x + 8.0, y + 8.0));
            }
        }
        DocumentLayout::new((n * 10) as u32, (n * 10) as u32, boxes).unwrap()
    }

    #[test]
    fn full_window_when_n_equals_s() {
        let layout = grid(3);
        let w = nearest_window(&layout, 4, 9, 1.0, 2.0).unwrap();
        let mut ids: Vec<_> = w.real_members().collect();
        ids.sort();
        assert_eq!(ids, (0..9).collect::<Vec<_>>());
        assert!(w.padding_mask.iter().all(|&m| m));
    }

    #[test]
    fn horizontal_neighbours_come_first() {
        // center is id 4; horizontal neighbours 3,5 sit at k*d. Vertical and
        // diagonal neighbours all tie at m*d, so the lower ids 0,1 win.
        let w = nearest_window(&grid(3), 4, 5, 1.0, 2.0).unwrap();
        let ids: Vec<_> = w.real_members().collect();
        assert_eq!(ids, vec![4, 3, 5, 0, 1]);
        let w = nearest_window(&grid(3), 4, 3, 1.0, 2.0).unwrap();
        assert_eq!(w.real_members().collect::<Vec<_>>(), vec![4, 3, 5]);
    }

    #[test]
    fn single_box_is_padded() {
        let layout = DocumentLayout::new(10, 10, vec![WordBox::new(0, 1.0, 1.0, 3.0, 3.0)]).unwrap();
        let w = nearest_window(&layout, 0, 4, 1.0, 2.0).unwrap();
        assert_eq!(w.members, vec![Some(0), None, None, None]);
        assert_eq!(w.padding_mask, vec![true, false, false, false]);
        assert_eq!(w.positions[3], NormalizedPosition::ORIGIN);
    }

    #[test]
    fn bad_anchor() {
        assert!(nearest_window(&grid(2), 9, 2, 1.0, 2.0).is_err());
    }

    #[test]
    fn one_window_when_n_equals_s() {
        let ws = sequential_context_windows(&grid(3), 9, 1.0, 2.0, 11).unwrap();
        assert_eq!(ws.len(), 1);
    }

    #[test]
    fn separated_clusters_give_one_window_each() {
        let mut boxes = Vec::new();
        for cluster in 0..2 {
            for i in 0..4 {
                let id = boxes.len();
                let x = cluster as f64 * 900.0 + i as f64 * 10.0;
                boxes.push(WordBox::new(id, x, 10.0, x + 8.0, 18.0));
            }
        }
        let layout = DocumentLayout::new(1000, 100, boxes).unwrap();
        for seed in 0..20 {
            let ws = sequential_context_windows(&layout, 4, 1.0, 2.0, seed).unwrap();
            assert_eq!(ws.len(), 2);
            for w in &ws {
                let first = w.anchor_id / 4;
                assert!(w.real_members().all(|id| id / 4 == first));
            }
        }
    }

    #[test]
    fn anchors_are_fresh() {
        let layout = grid(7);
        let ws = sequential_context_windows(&layout, 5, 1.0, 2.0, 3).unwrap();
        let mut visited = std::collections::HashSet::new();
        for w in &ws {
            // an anchor can never be a member of an earlier window
            assert!(!visited.contains(&w.anchor_id));
            visited.extend(w.real_members());
        }
        let mut covered = vec![false; layout.len()];
        for w in &ws {
            for id in w.real_members() {
                covered[id] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }
}
