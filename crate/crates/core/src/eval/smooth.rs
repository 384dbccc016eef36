use crate::error::{Error, Result};

/// Normalized Gaussian taps for offsets `-r..=r`, `r = round(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Contract(format!(
            "gaussian sigma must be positive, got {sigma}"
        )));
    }
    let r = (3.0 * sigma + 0.5).floor() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Symmetric reflection including the edge sample: `.. b a | a b ..`.
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Separable Gaussian filter of a row-major `height x width` map.
pub fn gaussian_smooth(map: &[f64], height: usize, width: usize, sigma: f64) -> Result<Vec<f64>> {
    if map.len() != height * width || map.is_empty() {
        return Err(Error::Contract(format!(
            "{} values do not form a {height}x{width} map",
            map.len()
        )));
    }
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as i64;
    let mut rows = vec![0.0; map.len()];
    let mut pad = vec![0.0; width + 2 * r as usize];
    for y in 0..height {
        let src = &map[y * width..(y + 1) * width];
        for (i, p) in pad.iter_mut().enumerate() {
            *p = src[reflect(i as i64 - r, width)];
        }
        for (x, out) in rows[y * width..(y + 1) * width].iter_mut().enumerate() {
            *out = k.iter().zip(&pad[x..]).fold(0.0, |acc, (t, v)| acc + t * v);
        }
    }
    let mut out = vec![0.0; map.len()];
    for y in 0..height {
        let acc = &mut out[y * width..(y + 1) * width];
        for (j, t) in k.iter().enumerate() {
            let src = reflect(y as i64 + j as i64 - r, height);
            for (a, v) in acc.iter_mut().zip(&rows[src * width..(src + 1) * width]) {
                *a += t * v;
            }
        }
    }
    Ok(out)
}
