use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::tensor::{Element, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Planes of constant depth, `[c, h, w]`.
    Axial,
    /// Planes of constant height, `[c, d, w]`.
    Coronal,
    /// Planes of constant width, `[c, d, h]`.
    Sagittal,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Axial => "axial",
            Axis::Coronal => "coronal",
            Axis::Sagittal => "sagittal",
        }
    }

    /// Index of this axis in a `[d, h, w]` spatial shape.
    pub fn spatial_index(self) -> usize {
        self as usize
    }
}

/// Axis tag and position of every slice, ordered axial, coronal, sagittal
/// with ascending positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceLayout {
    pub axis_index: Vec<Axis>,
    pub slice_position: Vec<usize>,
}

impl SliceLayout {
    pub fn for_volume(d: usize, h: usize, w: usize) -> Self {
        let mut axis_index = Vec::with_capacity(d + h + w);
        let mut slice_position = Vec::with_capacity(d + h + w);
        for (axis, n) in Axis::ALL.into_iter().zip([d, h, w]) {
            axis_index.extend(std::iter::repeat_n(axis, n));
            slice_position.extend(0..n);
        }
        Self {
            axis_index,
            slice_position,
        }
    }

    pub fn len(&self) -> usize {
        self.axis_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis_index.is_empty()
    }

    /// Index of slice `(axis, position)`, if present.
    pub fn index_of(&self, axis: Axis, position: usize) -> Option<usize> {
        self.axis_index
            .iter()
            .zip(&self.slice_position)
            .position(|(&a, &p)| a == axis && p == position)
    }
}

/// All slices of one axis for the whole batch, carried as planar tensors
/// `[b·n, c, 1, p, q]`; slice `i` of sample `s` sits at row `s·n + i`.
pub struct SliceBatch<'t, T: Element> {
    pub axis: Axis,
    pub count: usize,
    pub slices: Var<'t, T>,
}

/// Slice features `[b, n_slices, f]` with their layout.
pub struct SliceSet<'t, T: Element> {
    pub features: Var<'t, T>,
    pub layout: SliceLayout,
}

/// Cuts `volume: [b, c, d, h, w]` into its d axial, h coronal and w sagittal
/// planes, in that order.
pub fn decompose_slices<'t, T: Element>(
    volume: Var<'t, T>,
) -> Result<(Vec<SliceBatch<'t, T>>, SliceLayout)> {
    let s = volume.shape();
    if s.len() != 5 {
        return Err(TensorError::ShapeMismatch {
            op: "decompose_slices",
            lhs: s,
            rhs: vec![0, 0, 0, 0, 0],
        });
    }
    if s[2..].contains(&0) {
        return Err(TensorError::Invalid {
            op: "decompose_slices",
            msg: format!("zero-extent axis in volume shape {s:?}"),
        });
    }
    let (b, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let plans = [
        (Axis::Axial, [0, 2, 1, 3, 4], d, [h, w]),
        (Axis::Coronal, [0, 3, 1, 2, 4], h, [d, w]),
        (Axis::Sagittal, [0, 4, 1, 2, 3], w, [d, h]),
    ];
    let mut out = Vec::with_capacity(3);
    for (axis, perm, n, [p, q]) in plans {
        let slices = volume.permute(&perm)?.reshape(&[b * n, c, 1, p, q])?;
        out.push(SliceBatch {
            axis,
            count: n,
            slices,
        });
    }
    Ok((out, SliceLayout::for_volume(d, h, w)))
}
