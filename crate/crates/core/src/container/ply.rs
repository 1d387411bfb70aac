use crate::model::GaussianFrame;

/// Binary little-endian PLY with one vertex per primitive: `x y z opacity
/// scale_0..2 rot_0..3` as float and `red green blue` as uchar
/// (`round(c * 255)` of the clamped color).
pub fn export_ply(frame: &GaussianFrame) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\ncomment timestamp {}\nelement vertex {}\n",
        frame.timestamp,
        frame.primitives.len()
    );
    for name in [
        "x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ] {
        out.push_str("property float ");
        out.push_str(name);
        out.push('\n');
    }
    for name in ["red", "green", "blue"] {
        out.push_str("property uchar ");
        out.push_str(name);
        out.push('\n');
    }
    out.push_str("end_header\n");
    let mut bytes = out.into_bytes();
    bytes.reserve(frame.primitives.len() * (11 * 4 + 3));
    for p in &frame.primitives {
        for v in p.position.iter().chain([&p.opacity]).chain(&p.scaling).chain(&p.rotation) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for c in p.color {
            bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    bytes
}
