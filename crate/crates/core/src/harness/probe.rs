use crate::error::{Error, Result};
use crate::repr_loss::{LabelMatrix, Representation};

/// Training accuracy of a nearest class-mean classifier on the rows of `z`.
///
/// No held-out split: this gauges separability, not generalization. A pixel
/// equidistant from both centroids is assigned the majority class.
pub fn linear_probe_accuracy(z: &Representation, y: &LabelMatrix) -> Result<f64> {
    let x = z.raw();
    let n = x.rows();
    if y.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} embeddings", y.len())));
    }
    if n < 4 {
        return Err(Error::invalid(format!("the probe needs at least 4 pixels, got {n}")));
    }
    let classes = y.classes();
    let mut counts = [0usize; 2];
    let mut centroids = [vec![0.0; x.cols()], vec![0.0; x.cols()]];
    for (row, &c) in x.row_iter().zip(&classes) {
        counts[c as usize] += 1;
        centroids[c as usize].iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    if counts.contains(&0) {
        return Err(Error::invalid("the probe needs both classes present"));
    }
    for (centroid, &count) in centroids.iter_mut().zip(&counts) {
        centroid.iter_mut().for_each(|a| *a /= count as f64);
    }
    let majority = if counts[1] > counts[0] { 1 } else { 0 };
    let dist = |row: &[f64], c: &[f64]| row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let correct = x
        .row_iter()
        .zip(&classes)
        .filter(|(row, &c)| {
            let (d0, d1) = (dist(row, &centroids[0]), dist(row, &centroids[1]));
            let predicted = if d0 < d1 {
                0
            } else if d1 < d0 {
                1
            } else {
                majority
            };
            predicted == c
        })
        .count();
    Ok(correct as f64 / n as f64)
}
