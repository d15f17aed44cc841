//! ASCII PGM (P2) images of operators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// pixel = round(scale · value + offset), mapping min to 0 and max to 255.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
    pub min: f64,
    pub max: f64,
}

pub fn affine_for(values: &[f64]) -> Affine {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { 255.0 / (max - min) } else { 0.0 };
    Affine {
        scale,
        offset: -scale * min,
        min,
        max,
    }
}

/// Renders a row-major image of the given width.
pub fn render(values: &[f64], width: usize) -> Result<(String, Affine)> {
    if width == 0 || values.is_empty() || values.len() % width != 0 {
        return Err(Error::invalid("image data does not fill whole rows"));
    }
    let aff = affine_for(values);
    let height = values.len() / width;
    let mut s = format!("P2\n{width} {height}\n255\n");
    for row in values.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((aff.scale * v + aff.offset).round().clamp(0.0, 255.0) as u8).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    Ok((s, aff))
}

pub fn write(path: &Path, values: &[f64], width: usize) -> Result<Affine> {
    let (s, aff) = render(values, width)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))?;
    Ok(aff)
}

/// Lays out an operator on p×p patches as a p×p grid of p×p tiles: tile
/// (r, c) shows the weights feeding the change at pixel (r, c).
pub fn tile_operator(op: &[Vec<f64>], side: usize) -> Result<Vec<f64>> {
    let d = side * side;
    if op.len() != d || op.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("operator is not (side²)×(side²)"));
    }
    let width = side * side;
    let mut img = vec![0.0; width * width];
    for (q, row) in op.iter().enumerate() {
        let (tr, tc) = (q / side, q % side);
        for (p, v) in row.iter().enumerate() {
            let (r, c) = (p / side, p % side);
            img[(tr * side + r) * width + tc * side + c] = *v;
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_bright_diagonal() {
        let n = 4;
        let v: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
        let (s, aff) = render(&v, n).unwrap();
        let rows: Vec<&str> = s.lines().skip(3).collect();
        for (i, r) in rows.iter().enumerate() {
            let px: Vec<u8> = r.split(' ').map(|x| x.parse().unwrap()).collect();
            for (j, p) in px.iter().enumerate() {
                assert_eq!(*p, if i == j { 255 } else { 0 });
            }
        }
        assert_eq!((aff.min, aff.max), (0.0, 1.0));
    }

    #[test]
    fn constant_image_is_black() {
        let (s, _) = render(&[2.0; 4], 2).unwrap();
        assert!(s.ends_with("0 0\n0 0\n"));
    }

    #[test]
    fn tiles_place_rows() {
        let op: Vec<Vec<f64>> = (0..9).map(|q| (0..9).map(|p| (q * 9 + p) as f64).collect()).collect();
        let img = tile_operator(&op, 3).unwrap();
        // tile (0, 1) = row 1; its pixel (0, 0) sits at image (0, 3)
        assert_eq!(img[3], 9.0);
        // tile (2, 2) = row 8; its pixel (2, 2) sits at image (8, 8)
        assert_eq!(img[80], 80.0);
    }
}
