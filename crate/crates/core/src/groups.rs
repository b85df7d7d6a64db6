//! Finite groups acting on square image grids by pixel permutation.
//!
//! Every action is an exact index permutation, so transformed images are
//! bit-identical rearrangements of the input and invariance checks can be
//! exact.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    /// Trivial group containing only the identity.
    Identity,
    /// Rotations by multiples of 90 degrees, counterclockwise.
    Rot4,
    /// Cyclic shifts of the columns to the right by multiples of a third of the width.
    TransX3,
}

impl GroupKind {
    pub fn order(self) -> usize {
        match self {
            GroupKind::Identity => 1,
            GroupKind::Rot4 => 4,
            GroupKind::TransX3 => 3,
        }
    }

    /// Short name used on the command line and in reports.
    pub fn short_name(self) -> &'static str {
        match self {
            GroupKind::Identity => "id",
            GroupKind::Rot4 => "r4",
            GroupKind::TransX3 => "t3",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        match name {
            "id" | "identity" => Some(GroupKind::Identity),
            "r4" | "rot4" => Some(GroupKind::Rot4),
            "t3" | "transx3" => Some(GroupKind::TransX3),
            _ => None,
        }
    }
}

/// A finite cyclic group together with the side length of the grids it acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FiniteGroup {
    kind: GroupKind,
    grid_side: usize,
}

impl FiniteGroup {
    pub fn new(kind: GroupKind, grid_side: usize) -> Result<Self> {
        if grid_side == 0 {
            return Err(Error::InvalidGroup("grid side must be positive".into()));
        }
        if kind == GroupKind::TransX3 && !grid_side.is_multiple_of(3) {
            return Err(Error::InvalidGroup(format!(
                "TransX3 needs a grid side divisible by 3, got {grid_side}"
            )));
        }
        Ok(FiniteGroup { kind, grid_side })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn grid_side(&self) -> usize {
        self.grid_side
    }

    pub fn order(&self) -> usize {
        self.kind.order()
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement {
            group: *self,
            index: 0,
        }
    }

    pub fn element(&self, index: usize) -> Result<GroupElement> {
        if index >= self.order() {
            return Err(Error::InvalidGroup(format!(
                "element index {index} out of range for order {}",
                self.order()
            )));
        }
        Ok(GroupElement {
            group: *self,
            index,
        })
    }

    pub fn elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        (0..self.order()).map(move |index| GroupElement {
            group: *self,
            index,
        })
    }

    /// Gather tables for every element, in index order.
    pub fn permutations(&self) -> Vec<Vec<usize>> {
        self.elements().map(|g| g.permutation()).collect()
    }

    /// `[act(g, img) for g in 0..order]`; element 0 equals the input.
    pub fn orbit(&self, img: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.elements().map(|g| g.act(img)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    group: FiniteGroup,
    index: usize,
}

impl GroupElement {
    pub fn group(&self) -> FiniteGroup {
        self.group
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }

    pub fn compose(&self, other: &GroupElement) -> GroupElement {
        assert_eq!(self.group, other.group, "composing elements of different groups");
        GroupElement {
            group: self.group,
            index: (self.index + other.index) % self.group.order(),
        }
    }

    pub fn inverse(&self) -> GroupElement {
        let order = self.group.order();
        GroupElement {
            group: self.group,
            index: (order - self.index) % order,
        }
    }

    /// Row-major gather table: `out[p] = in[perm[p]]`.
    pub fn permutation(&self) -> Vec<usize> {
        let n = self.group.grid_side;
        let mut perm = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (si, sj) = self.source_pixel(i, j, n);
                perm.push(si * n + sj);
            }
        }
        perm
    }

    /// Location in the input grid of the pixel that lands at `(i, j)`.
    fn source_pixel(&self, i: usize, j: usize, n: usize) -> (usize, usize) {
        match self.group.kind {
            GroupKind::Identity => (i, j),
            GroupKind::Rot4 => match self.index {
                0 => (i, j),
                1 => (j, n - 1 - i),
                2 => (n - 1 - i, n - 1 - j),
                3 => (n - 1 - j, i),
                _ => unreachable!("Rot4 index out of range"),
            },
            GroupKind::TransX3 => {
                let shift = self.index * (n / 3);
                (i, (j + n - shift) % n)
            }
        }
    }

    fn check_grid(&self, rows: usize, cols: usize) -> Result<()> {
        let side = self.group.grid_side;
        if rows != side || cols != side {
            return Err(Error::GridMismatch {
                expected: side,
                rows,
                cols,
            });
        }
        Ok(())
    }

    pub fn act(&self, img: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (rows, cols) = img.dim();
        self.check_grid(rows, cols)?;
        let side = self.group.grid_side;
        Ok(Array2::from_shape_fn((side, side), |(i, j)| {
            let (si, sj) = self.source_pixel(i, j, side);
            img[[si, sj]]
        }))
    }

    pub fn act_inverse(&self, img: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.inverse().act(img)
    }

    /// Acts on a flattened (row-major) image.
    pub fn act_flat(&self, img: &[f64]) -> Result<Vec<f64>> {
        let side = self.group.grid_side;
        if img.len() != side * side {
            return Err(Error::GridMismatch {
                expected: side,
                rows: img.len(),
                cols: 1,
            });
        }
        Ok(self.permutation().iter().map(|&p| img[p]).collect())
    }

    /// The action as an orthogonal permutation matrix on flattened images.
    pub fn representation(&self) -> Array2<f64> {
        let perm = self.permutation();
        let d = perm.len();
        let mut m = Array2::zeros((d, d));
        for (row, &col) in perm.iter().enumerate() {
            m[[row, col]] = 1.0;
        }
        m
    }
}

/// Applies one gather table to every row of a batch of flattened images.
pub fn permute_rows(batch: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    let (n, d) = batch.dim();
    assert_eq!(d, perm.len(), "permutation length must match row width");
    let mut out = Array2::zeros((n, d));
    for (src, mut dst) in batch.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        for (o, &p) in dst.iter_mut().zip(perm) {
            *o = src[p];
        }
    }
    out
}

/// Adjoint of [`permute_rows`]: scatters each row back, accumulating into `acc`.
pub fn scatter_add_rows(acc: &mut Array2<f64>, permuted: ArrayView2<f64>, perm: &[usize]) {
    assert_eq!(acc.dim(), permuted.dim());
    for (src, mut dst) in permuted.axis_iter(Axis(0)).zip(acc.axis_iter_mut(Axis(0))) {
        for (&v, &p) in src.iter().zip(perm) {
            dst[p] += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn all_groups(side: usize) -> Vec<FiniteGroup> {
        let mut groups = vec![
            FiniteGroup::new(GroupKind::Identity, side).unwrap(),
            FiniteGroup::new(GroupKind::Rot4, side).unwrap(),
        ];
        if side.is_multiple_of(3) {
            groups.push(FiniteGroup::new(GroupKind::TransX3, side).unwrap());
        }
        groups
    }

    fn ramp(side: usize) -> Array2<f64> {
        Array2::from_shape_fn((side, side), |(i, j)| (i * side + j) as f64 + 0.25)
    }

    #[test]
    fn rot4_quarter_turn_on_2x2() {
        let g = FiniteGroup::new(GroupKind::Rot4, 2).unwrap().element(1).unwrap();
        let img = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(g.act(img.view()).unwrap(), array![[2.0, 4.0], [1.0, 3.0]]);

        let mut x = img.clone();
        for _ in 0..4 {
            x = g.act(x.view()).unwrap();
        }
        assert_eq!(x, img);
    }

    #[test]
    fn transx3_shift_on_3x3() {
        let g = FiniteGroup::new(GroupKind::TransX3, 3).unwrap().element(1).unwrap();
        let img = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let expected = array![[3.0, 1.0, 2.0], [6.0, 4.0, 5.0], [9.0, 7.0, 8.0]];
        assert_eq!(g.act(img.view()).unwrap(), expected);

        let mut x = img.clone();
        for _ in 0..3 {
            x = g.act(x.view()).unwrap();
        }
        assert_eq!(x, img);
    }

    #[test]
    fn transx3_stride_is_a_third_of_the_width() {
        let g = FiniteGroup::new(GroupKind::TransX3, 36).unwrap().element(1).unwrap();
        let img = ramp(36);
        let out = g.act(img.view()).unwrap();
        assert_eq!(out[[5, 12]], img[[5, 0]]);
        assert_eq!(out[[5, 0]], img[[5, 24]]);
    }

    #[test]
    fn transx3_rejects_bad_side() {
        assert!(FiniteGroup::new(GroupKind::TransX3, 28).is_err());
        assert!(FiniteGroup::new(GroupKind::Rot4, 0).is_err());
    }

    #[test]
    fn identity_returns_input() {
        for group in all_groups(6) {
            let img = ramp(6);
            assert_eq!(group.identity().act(img.view()).unwrap(), img);
        }
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let g = FiniteGroup::new(GroupKind::Rot4, 36).unwrap().element(1).unwrap();
        let err = g.act(Array2::zeros((28, 28)).view()).unwrap_err();
        assert!(err.to_string().contains("grid size incompatible with group"));
        assert!(g.act_flat(&[0.0; 10]).is_err());
    }

    #[test]
    fn group_axioms_exhaustive() {
        for group in all_groups(6) {
            let elems: Vec<_> = group.elements().collect();
            let e = group.identity();
            for a in &elems {
                assert_eq!(e.compose(a), *a);
                assert_eq!(a.compose(&e), *a);
                assert_eq!(a.compose(&a.inverse()), e);
                assert_eq!(a.inverse().compose(a), e);
                for b in &elems {
                    assert!(b.index() < group.order());
                    assert_eq!(a.compose(b).index(), (a.index() + b.index()) % group.order());
                    for c in &elems {
                        assert_eq!(a.compose(b).compose(c), a.compose(&b.compose(c)));
                    }
                }
            }
        }
    }

    #[test]
    fn inverse_indices() {
        let r4 = FiniteGroup::new(GroupKind::Rot4, 6).unwrap();
        let t3 = FiniteGroup::new(GroupKind::TransX3, 6).unwrap();
        let img = ramp(6);
        let r1 = r4.element(1).unwrap();
        assert_eq!(
            r1.act_inverse(img.view()).unwrap(),
            r4.element(3).unwrap().act(img.view()).unwrap()
        );
        let t2 = t3.element(2).unwrap();
        assert_eq!(
            t2.act_inverse(img.view()).unwrap(),
            t3.element(1).unwrap().act(img.view()).unwrap()
        );
    }

    #[test]
    fn orbit_shapes() {
        let r4 = FiniteGroup::new(GroupKind::Rot4, 6).unwrap();
        let zeros = Array2::zeros((6, 6));
        let orbit = r4.orbit(zeros.view()).unwrap();
        assert_eq!(orbit.len(), 4);
        assert!(orbit.iter().all(|o| *o == zeros));

        let img = ramp(6);
        assert_eq!(r4.orbit(img.view()).unwrap()[0], img);

        let t3 = FiniteGroup::new(GroupKind::TransX3, 3).unwrap();
        let img = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let mut reference: Vec<f64> = img.sum_axis(Axis(0)).to_vec();
        reference.sort_by(f64::total_cmp);
        for member in t3.orbit(img.view()).unwrap() {
            let mut sums = member.sum_axis(Axis(0)).to_vec();
            sums.sort_by(f64::total_cmp);
            assert_eq!(sums, reference);
        }
    }

    #[test]
    fn representation_is_orthogonal_permutation() {
        let g = FiniteGroup::new(GroupKind::Rot4, 4).unwrap().element(1).unwrap();
        let p = g.representation();
        let eye = Array2::<f64>::eye(16);
        assert_eq!(p.dot(&p.t()), eye);
        let img = ramp(4);
        let flat: ndarray::Array1<f64> = img.iter().copied().collect();
        let via_matrix = p.dot(&flat);
        assert_eq!(via_matrix.to_vec(), g.act_flat(flat.as_slice().unwrap()).unwrap());
    }

    #[test]
    fn permute_and_scatter_are_adjoint() {
        let g = FiniteGroup::new(GroupKind::Rot4, 3).unwrap().element(3).unwrap();
        let perm = g.permutation();
        let batch = Array2::from_shape_fn((2, 9), |(i, j)| (i * 9 + j) as f64);
        let permuted = permute_rows(batch.view(), &perm);
        let mut back = Array2::zeros((2, 9));
        scatter_add_rows(&mut back, permuted.view(), &perm);
        assert_eq!(back, batch);
    }

    fn grid_strategy(side: usize) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(-1e3f64..1e3, side * side)
            .prop_map(move |v| Array2::from_shape_vec((side, side), v).unwrap())
    }

    proptest! {
        #[test]
        fn action_is_compatible_with_composition(img in grid_strategy(6)) {
            for group in all_groups(6) {
                for a in group.elements() {
                    for b in group.elements() {
                        let lhs = a.compose(&b).act(img.view()).unwrap();
                        let rhs = a.act(b.act(img.view()).unwrap().view()).unwrap();
                        prop_assert_eq!(lhs, rhs);
                    }
                }
            }
        }

        #[test]
        fn generator_has_period_equal_to_order(img in grid_strategy(9)) {
            for group in all_groups(9) {
                let generator = group.element(group.order().min(2) - 1).unwrap();
                let mut x = img.clone();
                for _ in 0..group.order() {
                    x = generator.act(x.view()).unwrap();
                }
                prop_assert_eq!(&x, &img);
            }
        }

        #[test]
        fn inverse_undoes_action(img in grid_strategy(6)) {
            for group in all_groups(6) {
                for g in group.elements() {
                    let back = g.act_inverse(g.act(img.view()).unwrap().view()).unwrap();
                    prop_assert_eq!(&back, &img);
                }
            }
        }

        #[test]
        fn action_commutes_with_pixelwise_affine(
            img in grid_strategy(6), scale in -3.0f64..3.0, shift in -5.0f64..5.0
        ) {
            for group in all_groups(6) {
                for g in group.elements() {
                    let lhs = g.act(img.mapv(|v| scale * v + shift).view()).unwrap();
                    let rhs = g.act(img.view()).unwrap().mapv(|v| scale * v + shift);
                    prop_assert_eq!(lhs, rhs);
                }
            }
        }

        #[test]
        fn action_is_a_value_preserving_bijection(img in grid_strategy(6)) {
            for group in all_groups(6) {
                for g in group.elements() {
                    let mut perm = g.permutation();
                    perm.sort_unstable();
                    prop_assert_eq!(perm, (0..36).collect::<Vec<_>>());
                    let mut before: Vec<f64> = img.iter().copied().collect();
                    let mut after: Vec<f64> = g.act(img.view()).unwrap().iter().copied().collect();
                    before.sort_by(f64::total_cmp);
                    after.sort_by(f64::total_cmp);
                    prop_assert_eq!(before, after);
                }
            }
        }
    }
}
