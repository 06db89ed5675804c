use thiserror::Error;

use crate::game::State;
use crate::strategy::{GridStrategy, Player};

/// Which end of the grid the stop region should occupy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Stop for `b` at or above the threshold.
    Upper,
    /// Stop for `b` below the threshold.
    Lower,
}

/// Threshold of one table row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowThreshold {
    pub l: u32,
    pub s: Option<State>,
    pub region: Region,
    /// Boundary grid index: the first stop cell for [`Region::Upper`], the
    /// first continue cell for [`Region::Lower`]. `K` means no boundary
    /// inside the grid.
    pub index: usize,
    /// Cells on the wrong side of the boundary.
    pub flagged: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ThresholdError {
    #[error("entry {index} of row l={l} is {value}, not within 0.01 of 0 or 1")]
    NotDeterministic { l: u32, index: usize, value: f64 },
    #[error("row l={l} s={s:?} has {} misordered cells: {cells:?}", cells.len())]
    Structure {
        l: u32,
        s: Option<State>,
        cells: Vec<usize>,
    },
}

fn fit_row(row: &[bool], region: Region) -> (usize, Vec<usize>) {
    let k = row.len();
    // stop_below[j] = number of stop cells with index < j
    let mut stop_below = vec![0usize; k + 1];
    for (i, &s) in row.iter().enumerate() {
        stop_below[i + 1] = stop_below[i] + s as usize;
    }
    let total_stop = stop_below[k];
    let cost = |j: usize| -> usize {
        let cont_below = j - stop_below[j];
        let stop_above = total_stop - stop_below[j];
        let cont_above = (k - j) - stop_above;
        match region {
            Region::Upper => stop_below[j] + cont_above,
            Region::Lower => cont_below + stop_above,
        }
    };
    // fewest misordered cells; ties go to the largest boundary
    let best = (0..=k).rev().min_by_key(|&j| cost(j)).unwrap_or(k);
    let flagged = row
        .iter()
        .enumerate()
        .filter(|&(i, &s)| match region {
            Region::Upper => s != (i >= best),
            Region::Lower => s != (i < best),
        })
        .map(|(i, _)| i)
        .collect();
    (best, flagged)
}

/// Checks that every row's stop region is an interval at the expected end
/// of the grid, up to `tolerance_cells` misordered cells.
///
/// Defender rows and attacker rows for state 1 use [`Region::Upper`];
/// attacker rows for state 0 use [`Region::Lower`].
pub fn extract_thresholds(
    gs: &GridStrategy,
    tolerance_cells: usize,
) -> Result<Vec<RowThreshold>, ThresholdError> {
    let mut out = Vec::with_capacity(gs.rows());
    for r in 0..gs.rows() {
        let l = (r % gs.stops as usize) as u32 + 1;
        let (s, region) = match gs.player {
            Player::Defender => (None, Region::Upper),
            Player::Attacker if r < gs.stops as usize => (Some(State::NoIntrusion), Region::Lower),
            Player::Attacker => (Some(State::Intrusion), Region::Upper),
        };
        let row = gs.row(r);
        let mut bits = Vec::with_capacity(row.len());
        for (index, &value) in row.iter().enumerate() {
            if value <= 0.01 {
                bits.push(false);
            } else if value >= 0.99 {
                bits.push(true);
            } else {
                return Err(ThresholdError::NotDeterministic { l, index, value });
            }
        }
        let (index, flagged) = fit_row(&bits, region);
        if flagged.len() > tolerance_cells {
            return Err(ThresholdError::Structure { l, s, cells: flagged });
        }
        out.push(RowThreshold {
            l,
            s,
            region,
            index,
            flagged,
        });
    }
    Ok(out)
}

/// True when `idx[i] >= idx[i + 1] - slack` for consecutive entries.
pub fn non_increasing_within(idx: &[usize], slack: usize) -> bool {
    idx.windows(2).all(|w| w[0] + slack >= w[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::BeliefGrid;

    fn defender_rows(rows: &[&[f64]]) -> GridStrategy {
        let k = rows[0].len();
        // pad to the minimum grid size by repeating the last cell
        let kk = k.max(BeliefGrid::MIN_POINTS);
        let table = rows
            .iter()
            .flat_map(|r| {
                let last = *r.last().unwrap();
                r.iter().copied().chain(std::iter::repeat_n(last, kk - k))
            })
            .collect();
        GridStrategy::new(Player::Defender, rows.len() as u32, BeliefGrid::new(kk).unwrap(), table).unwrap()
    }

    #[test]
    fn clean_threshold() {
        let gs = defender_rows(&[&[0.0, 0.0, 0.0, 1.0, 1.0]]);
        let t = extract_thresholds(&gs, 0).unwrap();
        assert_eq!(t[0].index, 3);
        assert!(t[0].flagged.is_empty());
    }

    #[test]
    fn one_misordered_cell_within_tolerance() {
        let gs = defender_rows(&[&[0.0, 1.0, 0.0, 1.0, 1.0]]);
        let t = extract_thresholds(&gs, 1).unwrap();
        assert_eq!(t[0].index, 3);
        assert_eq!(t[0].flagged, vec![1]);
        assert!(matches!(
            extract_thresholds(&gs, 0),
            Err(ThresholdError::Structure { .. })
        ));
    }

    #[test]
    fn fractional_entries_are_rejected() {
        let gs = defender_rows(&[&[0.0, 0.5, 1.0]]);
        assert!(matches!(
            extract_thresholds(&gs, 3),
            Err(ThresholdError::NotDeterministic { index: 1, .. })
        ));
    }

    #[test]
    fn attacker_state_zero_uses_lower_region() {
        let k = 11;
        let mut table = vec![0.0; 2 * k];
        for v in table.iter_mut().take(4) {
            *v = 1.0; // s = 0: attack while b < 4/10
        }
        for v in table.iter_mut().skip(k + 7) {
            *v = 1.0; // s = 1: abort from b = 7/10
        }
        let gs = GridStrategy::new(Player::Attacker, 1, BeliefGrid::new(k).unwrap(), table).unwrap();
        let t = extract_thresholds(&gs, 0).unwrap();
        assert_eq!((t[0].region, t[0].index), (Region::Lower, 4));
        assert_eq!((t[1].region, t[1].index), (Region::Upper, 7));
    }

    #[test]
    fn monotone_thresholds() {
        assert!(non_increasing_within(&[9, 7, 7, 3], 0));
        assert!(non_increasing_within(&[5, 6, 4], 1));
        assert!(!non_increasing_within(&[5, 7], 1));
    }
}
