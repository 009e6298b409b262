//! Binary PGM grids of square frames.

/// Side length when `d` is a square of at least 4 pixels.
pub fn square_side(d: usize) -> Option<usize> {
    let side = (d as f64).sqrt().round() as usize;
    (side >= 2 && side * side == d).then_some(side)
}

/// A `rows × cols` grid of `side × side` frames with values in `[0, 1]`,
/// separated by one-pixel mid-grey lines. `frame(r, c)` returns the pixels.
pub fn pgm_grid(rows: usize, cols: usize, side: usize, frame: impl Fn(usize, usize) -> Vec<f64>) -> Vec<u8> {
    let (w, h) = (cols * (side + 1) - 1, rows * (side + 1) - 1);
    let mut pixels = vec![128u8; w * h];
    for r in 0..rows {
        for c in 0..cols {
            let f = frame(r, c);
            for i in 0..side {
                for j in 0..side {
                    let v = (f[i * side + j].clamp(0.0, 1.0) * 255.0).round() as u8;
                    pixels[(r * (side + 1) + i) * w + c * (side + 1) + j] = v;
                }
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sides() {
        assert_eq!(square_side(784), Some(28));
        assert_eq!(square_side(4), Some(2));
        assert_eq!(square_side(3), None);
        assert_eq!(square_side(1), None);
    }

    #[test]
    fn grid_layout() {
        let bytes = pgm_grid(2, 3, 2, |r, c| vec![(r * 3 + c) as f64 / 5.0; 4]);
        let header = b"P5\n8 5\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 40);
        assert_eq!(px[0], 0);
        assert_eq!(px[2], 128);
        assert_eq!(px[3 * 8 + 6], 255);
    }
}
