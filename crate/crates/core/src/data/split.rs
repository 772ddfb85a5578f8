use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::records::DataPoint;
use super::schema::Attribute;
use crate::error::{Error, Result};

/// Split sizes for `n` items: rounded for all but the last part, which takes
/// the remainder.
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    let total: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let mut sizes: Vec<usize> = fractions[..fractions.len() - 1]
        .iter()
        .map(|f| (f * n as f64).round() as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    if used > n {
        return Err(Error::Invalid(format!("split fractions {fractions:?} overflow {n} items")));
    }
    sizes.push(n - used);
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Invalid(format!("split {i} of {n} items would be empty")));
    }
    Ok(sizes)
}

/// Seeded, disjoint split stratified by change class.
///
/// Items are shuffled, grouped by change class, then dealt in order to the
/// part furthest below its quota, so every class is spread proportionally
/// and the part sizes are exact.
pub fn split(data: Vec<DataPoint>, fractions: &[f64], seed: u64) -> Result<Vec<Vec<DataPoint>>> {
    let n = data.len();
    let sizes = split_sizes(n, fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| data[i].label(Attribute::Change));

    let mut assignment = vec![0; n];
    let mut counts = vec![0usize; sizes.len()];
    for (seen, &i) in order.iter().enumerate() {
        let part = (0..sizes.len())
            .filter(|&p| counts[p] < sizes[p])
            .max_by(|&a, &b| {
                let deficit = |p: usize| sizes[p] as f64 * (seen + 1) as f64 / n as f64 - counts[p] as f64;
                deficit(a).total_cmp(&deficit(b)).then(b.cmp(&a))
            })
            .expect("quotas sum to n");
        assignment[i] = part;
        counts[part] += 1;
    }

    let mut parts: Vec<Vec<DataPoint>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (i, dp) in data.into_iter().enumerate() {
        parts[assignment[i]].push(dp);
    }
    for p in &mut parts {
        p.shuffle(&mut rng);
    }
    Ok(parts)
}
