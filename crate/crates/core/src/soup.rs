//! Weight-space averaging of checkpoints.

use crate::error::{Error, Result};

/// Flat parameters of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub tag: String,
}

impl ParamVector {
    pub fn new(tag: impl Into<String>, values: Vec<f64>) -> Self {
        Self { values, tag: tag.into() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_ingredients(ingredients: &[&ParamVector]) -> Result<usize> {
    let first = ingredients.first().ok_or_else(|| Error::invalid("a soup needs at least one ingredient"))?;
    let len = first.len();
    if let Some(bad) = ingredients.iter().find(|p| p.len() != len) {
        return Err(Error::Shape(format!(
            "ingredient `{}` has {} parameters, `{}` has {len}",
            bad.tag,
            bad.len(),
            first.tag
        )));
    }
    Ok(len)
}

/// Elementwise mean. Each coordinate is summed in sorted order, so the result
/// does not depend on the order of the ingredients.
fn average(ingredients: &[&ParamVector], tag: &str) -> Result<ParamVector> {
    let len = check_ingredients(ingredients)?;
    let count = ingredients.len() as f64;
    let mut column = Vec::with_capacity(ingredients.len());
    let values = (0..len)
        .map(|k| {
            column.clear();
            column.extend(ingredients.iter().map(|p| p.values[k]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / count
        })
        .collect();
    Ok(ParamVector::new(tag, values))
}

pub fn uniform_soup(ingredients: &[ParamVector]) -> Result<ParamVector> {
    average(&ingredients.iter().collect::<Vec<_>>(), "uniform-soup")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedySoup {
    pub soup: ParamVector,
    /// Tags of the kept ingredients, in the order they were added.
    pub selected: Vec<String>,
    /// Metric of the final soup.
    pub metric: f64,
    /// Best single-ingredient metric.
    pub best_individual: f64,
}

/// Greedy soup: rank ingredients by their own metric (higher is better, ties
/// by input order), start from the best, and keep each next ingredient when
/// averaging it in does not lower the metric.
pub fn greedy_soup<F>(ingredients: &[ParamVector], mut metric: F) -> Result<GreedySoup>
where
    F: FnMut(&ParamVector) -> f64,
{
    check_ingredients(&ingredients.iter().collect::<Vec<_>>())?;
    let mut eval = |p: &ParamVector, tag: &str| -> Result<f64> {
        let v = metric(p);
        if v.is_nan() {
            Err(Error::NanMetric(tag.to_string()))
        } else {
            Ok(v)
        }
    };

    let mut scored = Vec::with_capacity(ingredients.len());
    for p in ingredients {
        scored.push((eval(p, &p.tag)?, p));
    }
    // Stable sort keeps input order among equal scores.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let (best_individual, first) = scored[0];
    let mut kept = vec![first];
    let mut soup = average(&kept, "greedy-soup")?;
    let mut current = best_individual;
    for &(_, candidate) in &scored[1..] {
        kept.push(candidate);
        let trial = average(&kept, "greedy-soup")?;
        let score = eval(&trial, &candidate.tag)?;
        if score >= current {
            soup = trial;
            current = score;
        } else {
            kept.pop();
        }
    }
    Ok(GreedySoup {
        soup,
        selected: kept.iter().map(|p| p.tag.clone()).collect(),
        metric: current,
        best_individual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(tag: &str, v: &[f64]) -> ParamVector {
        ParamVector::new(tag, v.to_vec())
    }

    fn neg_dist(target: &[f64]) -> impl Fn(&ParamVector) -> f64 + '_ {
        move |p| -p.values.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn uniform_examples() {
        let a = pv("a", &[1.0, -2.0, 3.5]);
        assert_eq!(uniform_soup(std::slice::from_ref(&a)).unwrap().values, a.values);
        let zeros = pv("z", &[0.0; 3]);
        let twos = pv("t", &[2.0; 3]);
        assert_eq!(uniform_soup(&[zeros, twos]).unwrap().values, vec![1.0; 3]);
    }

    #[test]
    fn uniform_errors() {
        assert!(uniform_soup(&[]).is_err());
        assert!(matches!(uniform_soup(&[pv("a", &[1.0]), pv("b", &[1.0, 2.0])]), Err(Error::Shape(_))));
    }

    #[test]
    fn uniform_is_order_independent() {
        let a = pv("a", &[0.1, 1e16, -3.0]);
        let b = pv("b", &[0.2, 1.0, 7.0]);
        let c = pv("c", &[0.3, -1e16, 1e-3]);
        let abc = uniform_soup(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let cab = uniform_soup(&[c, a, b]).unwrap();
        assert_eq!(abc.values, cab.values);
    }

    #[test]
    fn greedy_identical_ingredients() {
        let ing = vec![pv("a", &[1.0, 2.0]), pv("b", &[1.0, 2.0]), pv("c", &[1.0, 2.0])];
        let out = greedy_soup(&ing, neg_dist(&[0.0, 0.0])).unwrap();
        assert_eq!(out.soup.values, vec![1.0, 2.0]);
        assert_eq!(out.selected, vec!["a", "b", "c"]);
    }

    #[test]
    fn greedy_hand_trace() {
        // p* = (1, 1); ingredients p*+e1, p*-e1, p*+10e2.
        let target = [1.0, 1.0];
        let ing = vec![pv("plus", &[2.0, 1.0]), pv("minus", &[0.0, 1.0]), pv("far", &[1.0, 11.0])];
        let out = greedy_soup(&ing, neg_dist(&target)).unwrap();
        assert_eq!(out.selected, vec!["plus", "minus"]);
        assert_eq!(out.soup.values, vec![1.0, 1.0]);
        assert_eq!(out.metric, 0.0);
        assert_eq!(out.best_individual, -1.0);
    }

    #[test]
    fn greedy_nan_names_tag() {
        let ing = vec![pv("good", &[1.0]), pv("bad", &[f64::NAN])];
        let err = greedy_soup(&ing, |p| p.values[0]).unwrap_err();
        assert!(err.to_string().contains("`bad`"), "{err}");
    }

    #[test]
    fn greedy_empty() {
        assert!(greedy_soup(&[], |_| 0.0).is_err());
    }
}
