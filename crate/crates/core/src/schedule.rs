//! Client selection per round and per-client coordinate masks.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::MaskMode;

/// Sorted set of exactly `M` distinct coordinates in `0..D`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionMask {
    indices: Vec<usize>,
    dim: usize,
}

impl SelectionMask {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("mask indices must be distinct".into()));
        }
        if indices.is_empty() {
            return Err(Error::Argument("mask must select at least one coordinate".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= dim {
                return Err(Error::Argument(format!("mask index {last} out of range for D={dim}")));
            }
        }
        Ok(Self { indices, dim })
    }

    pub fn full(dim: usize) -> Self {
        Self { indices: (0..dim).collect(), dim }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn contains(&self, coord: usize) -> bool {
        self.indices.binary_search(&coord).is_ok()
    }

    /// Dense 0/1 diagonal of the selection matrix.
    pub fn to_indicator(&self) -> Vec<bool> {
        let mut out = vec![false; self.dim];
        for &i in &self.indices {
            out[i] = true;
        }
        out
    }
}

/// Round-robin position of one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MaskCursor {
    pub offset: usize,
}

/// Draws the coordinate mask of one client for one iteration.
///
/// Uniform mode ignores `cursor`. Round-robin mode returns the window starting
/// at `cursor.offset` and advances the cursor by `M`.
pub fn draw_selection_mask<R: Rng + ?Sized>(
    dim: usize,
    shared: usize,
    mode: MaskMode,
    cursor: &mut MaskCursor,
    rng: &mut R,
) -> Result<SelectionMask> {
    if shared == 0 || shared > dim {
        return Err(Error::Argument(format!("1 ≤ M ≤ D violated (M={shared}, D={dim})")));
    }
    if shared == dim {
        return Ok(SelectionMask::full(dim));
    }
    let mut indices = match mode {
        MaskMode::Uniform => index::sample(rng, dim, shared).into_vec(),
        MaskMode::RoundRobin => {
            let start = cursor.offset % dim;
            cursor.offset = (start + shared) % dim;
            (0..shared).map(|j| (start + j) % dim).collect()
        }
    };
    indices.sort_unstable();
    Ok(SelectionMask { indices, dim })
}

/// Uniform sample of `round_size` distinct clients, sorted ascending.
pub fn draw_client_set<R: Rng + ?Sized>(num_clients: usize, round_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if round_size == 0 || round_size > num_clients {
        return Err(Error::Argument(format!(
            "1 ≤ round_size ≤ K violated (round_size={round_size}, K={num_clients})"
        )));
    }
    if round_size == num_clients {
        return Ok((0..num_clients).collect());
    }
    let mut set = index::sample(rng, num_clients, round_size).into_vec();
    set.sort_unstable();
    Ok(set)
}

/// Selected clients of round `n` with the masks `S_{k,n}` and `S_{k,n+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundSchedule {
    pub selected_clients: Vec<usize>,
    pub masks_current: Vec<SelectionMask>,
    pub masks_next: Vec<SelectionMask>,
}

/// Per-replica mask state for all clients.
///
/// The masks drawn for iteration `n + 1` are used both by the server
/// aggregation of round `n` and by the client blend of round `n + 1`.
#[derive(Debug, Clone)]
pub struct MaskScheduler {
    dim: usize,
    shared: usize,
    mode: MaskMode,
    cursors: Vec<MaskCursor>,
    current: Vec<SelectionMask>,
}

impl MaskScheduler {
    /// Round-robin cursors start staggered at `k·M mod D` so that clients do
    /// not all share the same window.
    pub fn new<R: Rng + ?Sized>(num_clients: usize, dim: usize, shared: usize, mode: MaskMode, rng: &mut R) -> Result<Self> {
        let mut cursors: Vec<MaskCursor> =
            (0..num_clients).map(|k| MaskCursor { offset: (k * shared) % dim.max(1) }).collect();
        let current = cursors
            .iter_mut()
            .map(|c| draw_selection_mask(dim, shared, mode, c, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, shared, mode, cursors, current })
    }

    pub fn current(&self) -> &[SelectionMask] {
        &self.current
    }

    /// Draws `S_{k,n+1}` for every client and makes it current.
    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<&[SelectionMask]> {
        for (cursor, mask) in self.cursors.iter_mut().zip(self.current.iter_mut()) {
            *mask = draw_selection_mask(self.dim, self.shared, self.mode, cursor, rng)?;
        }
        Ok(&self.current)
    }
}
