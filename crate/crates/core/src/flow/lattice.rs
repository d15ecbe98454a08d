//! D3Q19 velocity set.

pub const Q: usize = 19;

pub const EX: [i32; Q] = [0, 1, -1, 0, 0, 0, 0, 1, -1, 1, -1, 1, -1, 1, -1, 0, 0, 0, 0];
pub const EY: [i32; Q] = [0, 0, 0, 1, -1, 0, 0, 1, -1, -1, 1, 0, 0, 0, 0, 1, -1, 1, -1];
pub const EZ: [i32; Q] = [0, 0, 0, 0, 0, 1, -1, 0, 0, 0, 0, 1, -1, -1, 1, 1, -1, -1, 1];

pub const W: [f64; Q] = [
    1.0 / 3.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 18.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
    1.0 / 36.0,
];

pub const OPP: [usize; Q] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15, 18, 17];

pub const CS2: f64 = 1.0 / 3.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_is_consistent() {
        let sum: f64 = W.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        for q in 0..Q {
            let o = OPP[q];
            assert_eq!(EX[o], -EX[q]);
            assert_eq!(EY[o], -EY[q]);
            assert_eq!(EZ[o], -EZ[q]);
            assert_eq!(W[o], W[q]);
        }
        // Second moment is isotropic with c_s^2 = 1/3.
        let mut m = [[0.0; 3]; 3];
        for q in 0..Q {
            let e = [EX[q] as f64, EY[q] as f64, EZ[q] as f64];
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += W[q] * e[a] * e[b];
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { CS2 } else { 0.0 };
                assert!((m[a][b] - want).abs() < 1e-15);
            }
        }
    }
}
