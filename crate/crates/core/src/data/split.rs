use super::{DatasetManifest, Split, Splits};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Target sizes by largest remainder, ties to the earlier split.
fn apportion(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Stratified, seeded split into train/valid/test.
///
/// Groups are ordered by disease label and then by `hash(seed, group id)`;
/// walking that order, each group goes to the split furthest behind its
/// target share. Totals are exact (largest-remainder apportionment) and each
/// class lands in every split within one group of its proportional share.
pub fn split_dataset(manifest: &DatasetManifest, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetManifest> {
    let ratios = [ratios.0, ratios.1, ratios.2];
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::config(format!("split ratios must all be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios must sum to 1, got {sum}")));
    }
    let n = manifest.groups.len();
    if n < 3 {
        return Err(Error::config(format!("need at least 3 groups to split, got {n}")));
    }

    let targets = apportion(n, ratios);
    let mut keyed: Vec<(usize, u64, &str)> = manifest
        .groups
        .iter()
        .map(|g| (g.disease.index(), derive_seed(seed, 0, &g.id), g.id.as_str()))
        .collect();
    keyed.sort();

    let mut splits = Splits::default();
    let mut assigned = [0usize; 3];
    for (i, (_, _, id)) in keyed.iter().enumerate() {
        let progress = (i + 1) as f64 / n as f64;
        let mut best = None;
        let mut best_deficit = f64::NEG_INFINITY;
        for s in 0..3 {
            if assigned[s] >= targets[s] {
                continue;
            }
            let deficit = targets[s] as f64 * progress - assigned[s] as f64;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = Some(s);
            }
        }
        let s = best.expect("targets sum to n");
        assigned[s] += 1;
        splits.get_mut(Split::ALL[s]).push(id.to_string());
    }
    for split in Split::ALL {
        splits.get_mut(split).sort();
    }

    let mut out = manifest.clone();
    out.splits = splits;
    Ok(out)
}
