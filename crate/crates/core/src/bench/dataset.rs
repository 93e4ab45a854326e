use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoopError, Result};
use crate::geometry::{distance, Pose, OBJECT_EDGE, TABLE_HALF_X, TABLE_HALF_Y};
use crate::graph::{mix, Instance, TaskSpec};

const MAX_TRIES: usize = 10_000;

/// A reproducible set of instances of one size.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub n: usize,
    pub seed: u64,
    pub instances: Vec<Instance>,
}

impl Dataset {
    pub fn count(&self) -> usize {
        self.instances.len()
    }

    /// Writes `n{n}_{k:03}.json` files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir.as_ref())?;
        self.instances
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                let path = dir.as_ref().join(format!("n{}_{k:03}.json", self.n));
                inst.save(&path)?;
                Ok(path)
            })
            .collect()
    }

    /// Loads every `*.json` instance in `dir`, sorted by file name.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let instances = paths.iter().map(Instance::load).collect::<Result<Vec<_>>>()?;
        let n = instances.first().map_or(0, |i| i.n);
        if instances.iter().any(|i| i.n != n) {
            return Err(CoopError::Format("mixed instance sizes in one dataset".into()));
        }
        Ok(Self { n, seed: instances.first().map_or(0, |i| i.seed), instances })
    }
}

/// Draws `count` points on the table, pairwise at least `min_sep` apart.
pub fn sample_separated(rng: &mut impl Rng, count: usize, min_sep: f64, taken: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_TRIES {
            let p = [rng.gen_range(-TABLE_HALF_X..=TABLE_HALF_X), rng.gen_range(-TABLE_HALF_Y..=TABLE_HALF_Y), 0.0];
            if pts.iter().chain(taken).all(|q| distance(p, *q) >= min_sep) {
                pts.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CoopError::SamplingExhausted(count + taken.len()));
        }
    }
    Ok(pts)
}

pub fn random_yaw(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-PI..PI)
}

/// One instance with `n` tasks drawn from `seed`.
pub fn sample_instance(n: usize, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_separated(&mut rng, 2 * n, OBJECT_EDGE, &[])?;
    let tasks = (0..n)
        .map(|i| {
            let pick = pts[i];
            let place = pts[n + i];
            TaskSpec {
                pick: Pose::on_table(pick[0], pick[1], random_yaw(&mut rng)),
                place: Pose::on_table(place[0], place[1], random_yaw(&mut rng)),
            }
        })
        .collect();
    let mut inst = Instance::new(tasks, seed);
    inst.round_floats();
    Ok(inst)
}

/// `count` instances of size `n`; instance `k` uses a seed derived from
/// `(seed, n, k)`.
pub fn generate_dataset(n: usize, count: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n % 2 == 1 {
        return Err(CoopError::OddTaskCount(n));
    }
    let instances = (0..count)
        .map(|k| sample_instance(n, mix(seed ^ mix((n as u64) << 32 | k as u64)) >> 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { n, seed, instances })
}
