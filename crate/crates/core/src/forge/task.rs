use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::patterns::{catalog, PatternFamily};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const DEFAULT_IMAGE_SIZE: usize = 16;

/// A binary classification task: `class_a` is label 0, `class_b` label 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub class_a: PatternFamily,
    pub class_b: PatternFamily,
    pub noise_std: f64,
    pub image_size: usize,
}

impl TaskSpec {
    pub fn name(&self) -> String {
        format!("{}/{}", self.class_a.name, self.class_b.name)
    }

    pub fn validate(&self) -> Result<()> {
        self.class_a.validate()?;
        self.class_b.validate()?;
        if self.class_a == self.class_b {
            return Err(Error::Precondition(format!(
                "task {} uses the same family for both classes",
                self.task_id
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || self.image_size == 0 {
            return Err(Error::Precondition(format!(
                "task {} has invalid noise or image size",
                self.task_id
            )));
        }
        Ok(())
    }
}

/// Number of tasks `generate_task_suite` can produce. Tasks never share a
/// family, so this is half the catalog.
pub fn suite_capacity() -> usize {
    catalog().len() / 2
}

/// Deterministically pairs up catalog families into `n_tasks` tasks. No
/// family appears in more than one task.
pub fn generate_task_suite(n_tasks: usize, seed: u64) -> Result<Vec<TaskSpec>> {
    if n_tasks < 2 {
        return Err(Error::Precondition(format!(
            "a task suite needs at least 2 tasks, got {}",
            n_tasks
        )));
    }
    if n_tasks > suite_capacity() {
        return Err(Error::Capacity {
            requested: n_tasks,
            capacity: suite_capacity(),
        });
    }
    let mut families = catalog();
    let mut rng = rng::stream(seed, &[0x7A5C]);
    families.shuffle(&mut rng);
    let mut it = families.into_iter();
    Ok((0..n_tasks)
        .map(|task_id| {
            let class_a = it.next().expect("capacity checked");
            let class_b = it.next().expect("capacity checked");
            TaskSpec {
                task_id,
                class_a,
                class_b,
                noise_std: rng.random_range(0.02..0.08),
                image_size: DEFAULT_IMAGE_SIZE,
            }
        })
        .collect())
}

/// A labelled batch of images `(n, 3, S, S)`; sample `i` has label `i % 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        self.images.slice0(i)
    }

    pub fn one_hot(&self, i: usize) -> [f64; 2] {
        let mut y = [0.0; 2];
        y[self.labels[i]] = 1.0;
        y
    }

    /// Image `i` as a standalone `(3, S, S)` tensor.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        let s = self.images.shape();
        Tensor::from_parts(vec![s[1], s[2], s[3]], self.image(i).to_vec())
    }
}

/// Renders `n` noisy images with alternating labels; each image has its own
/// seed stream so the batch is a pure function of `(task, n, seed)`.
pub fn sample_batch(task: &TaskSpec, n: usize, seed: u64) -> Result<Batch> {
    if n == 0 {
        return Err(Error::Precondition("batch size must be >= 1".into()));
    }
    task.validate()?;
    let s = task.image_size;
    let per = 3 * s * s;
    let mut data = vec![0.0; n * per];
    let mut labels = Vec::with_capacity(n);
    let noise = Normal::new(0.0, task.noise_std.max(0.0))
        .map_err(|e| Error::Precondition(format!("noise distribution: {}", e)))?;
    for (i, img) in data.chunks_mut(per).enumerate() {
        let label = i % 2;
        let mut r = rng::stream(seed, &[task.task_id as u64, i as u64]);
        let fam = if label == 0 { &task.class_a } else { &task.class_b };
        fam.render(s, &mut r, img);
        if task.noise_std > 0.0 {
            for v in img.iter_mut() {
                *v = (*v + noise.sample(&mut r)).clamp(0.0, 1.0);
            }
        }
        labels.push(label);
    }
    Ok(Batch {
        images: Tensor::new(vec![n, 3, s, s], data)?,
        labels,
    })
}
