use crate::model::HeadPose;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Head axes: x points to the side, y down, z along the facing direction.
/// Yaw turns about y, pitch about x and roll about z; the combined rotation
/// is `R_z(roll) · R_y(yaw) · R_x(pitch)`. Angles are in degrees.
pub fn euler_to_rotation(pose: HeadPose) -> Mat3 {
    let (y, p, r) = (pose.yaw.to_radians(), pose.pitch.to_radians(), pose.roll.to_radians());
    let rx = [[1.0, 0.0, 0.0], [0.0, p.cos(), -p.sin()], [0.0, p.sin(), p.cos()]];
    let ry = [[y.cos(), 0.0, y.sin()], [0.0, 1.0, 0.0], [-y.sin(), 0.0, y.cos()]];
    let rz = [[r.cos(), -r.sin(), 0.0], [r.sin(), r.cos(), 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&mat_mul(&rz, &ry), &rx)
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

pub fn determinant(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn recover(m: &Mat3) -> HeadPose {
        HeadPose::new(
            (-m[2][0]).asin().to_degrees(),
            m[2][1].atan2(m[2][2]).to_degrees(),
            m[1][0].atan2(m[0][0]).to_degrees(),
        )
    }

    #[test]
    fn zero_pose_is_identity() {
        assert_eq!(euler_to_rotation(HeadPose::default()), IDENTITY);
    }

    #[test]
    fn yaw_ninety_turns_facing_to_side() {
        let r = euler_to_rotation(HeadPose::new(90.0, 0.0, 0.0));
        let v = apply(&r, [0.0, 0.0, 1.0]);
        for (a, b) in v.iter().zip([1.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    proptest! {
        #[test]
        fn rotations_are_orthonormal(y in -180.0..180.0f64, p in -180.0..180.0f64, r in -180.0..180.0f64) {
            let m = euler_to_rotation(HeadPose::new(y, p, r));
            let rtr = mat_mul(&transpose(&m), &m);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((rtr[i][j] - IDENTITY[i][j]).abs() < 1e-6);
                }
            }
            prop_assert!((determinant(&m) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn recovery_round_trips(y in -89.0..89.0f64, p in -89.0..89.0f64, r in -89.0..89.0f64) {
            let back = recover(&euler_to_rotation(HeadPose::new(y, p, r)));
            prop_assert!((back.yaw - y).abs() < 1e-4);
            prop_assert!((back.pitch - p).abs() < 1e-4);
            prop_assert!((back.roll - r).abs() < 1e-4);
        }
    }
}
