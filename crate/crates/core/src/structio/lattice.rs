use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three lattice vectors as rows, in Å.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lattice(pub [[f64; 3]; 3]);

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl Lattice {
    /// Cell from lengths (Å) and angles (degrees): a along x, b in the xy-plane.
    pub fn from_parameters(
        a: f64,
        b: f64,
        c: f64,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<Self> {
        let (ca, cb, cg) = (
            alpha.to_radians().cos(),
            beta.to_radians().cos(),
            gamma.to_radians().cos(),
        );
        let sg = gamma.to_radians().sin();
        if [a, b, c].iter().any(|&x| !(x > 0.0) || !x.is_finite()) || sg.abs() < 1e-12 {
            return Err(Error::SingularLattice(0.0));
        }
        let cx = c * cb;
        let cy = c * (ca - cb * cg) / sg;
        let cz2 = c * c - cx * cx - cy * cy;
        if !(cz2 > 0.0) {
            return Err(Error::SingularLattice(0.0));
        }
        Ok(Lattice([
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [cx, cy, cz2.sqrt()],
        ]))
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    /// Signed volume `a · (b × c)`.
    pub fn volume(&self) -> f64 {
        dot(self.0[0], cross(self.0[1], self.0[2]))
    }

    /// Distance between adjacent lattice planes spanned by the other two vectors.
    pub fn plane_heights(&self) -> [f64; 3] {
        let v = self.volume().abs();
        let [a, b, c] = self.0;
        [
            v / norm(cross(b, c)),
            v / norm(cross(c, a)),
            v / norm(cross(a, b)),
        ]
    }

    pub fn to_cartesian(&self, frac: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = frac[0] * m[0][k] + frac[1] * m[1][k] + frac[2] * m[2][k];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angle(u: [f64; 3], v: [f64; 3]) -> f64 {
        (dot(u, v) / (norm(u) * norm(v))).acos().to_degrees()
    }

    #[test]
    fn cubic_is_diagonal() {
        let l = Lattice::from_parameters(3.0, 3.0, 3.0, 90.0, 90.0, 90.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 3.0 } else { 0.0 };
                assert!((l.0[i][j] - want).abs() < 1e-15);
            }
        }
        assert!((l.volume() - 27.0).abs() < 1e-12);
        assert_eq!(l.plane_heights().map(|h| (h * 1e9).round()), [3e9; 3]);
    }

    #[test]
    fn triclinic_recovers_parameters() {
        let (a, b, c, al, be, ga) = (3.0, 4.0, 5.0, 70.0, 80.0, 60.0);
        let l = Lattice::from_parameters(a, b, c, al, be, ga).unwrap();
        let [ra, rb, rc] = l.0;
        for (got, want) in [(norm(ra), a), (norm(rb), b), (norm(rc), c)] {
            assert!((got - want).abs() / want < 1e-9);
        }
        for (got, want) in [
            (angle(rb, rc), al),
            (angle(ra, rc), be),
            (angle(ra, rb), ga),
        ] {
            assert!((got - want).abs() / want < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn impossible_angles_rejected() {
        assert!(Lattice::from_parameters(1.0, 1.0, 1.0, 170.0, 10.0, 10.0).is_err());
        assert!(Lattice::from_parameters(0.0, 1.0, 1.0, 90.0, 90.0, 90.0).is_err());
    }
}
