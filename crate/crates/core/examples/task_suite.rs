//! Generates a task suite and writes one sample grid per task as a PPM image.
//!
//!     cargo run --release --example task_suite -- [out_dir] [n_tasks]

use std::fs;
use std::path::PathBuf;

use wsk::forge::{generate_task_suite, sample_batch, suite_capacity};

const PER_CLASS: usize = 6;

fn main() -> wsk::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "task-suite".into()));
    let n: usize = std::env::args().nth(2).map_or(16, |s| s.parse().expect("n_tasks"));
    fs::create_dir_all(&out).map_err(|e| wsk::Error::io(&out, e))?;
    println!("{} of at most {} tasks", n, suite_capacity());

    for task in generate_task_suite(n, 7)? {
        let batch = sample_batch(&task, 4 * PER_CLASS, task.task_id as u64)?;
        let s = task.image_size;
        // row 0 holds class a, row 1 class b
        let mut rows: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &y) in batch.labels.iter().enumerate() {
            if rows[y].len() < PER_CLASS {
                rows[y].push(i);
            }
        }
        let (w, h) = (PER_CLASS * s, 2 * s);
        let mut pixels = vec![0u8; w * h * 3];
        for (r, idx) in rows.iter().enumerate() {
            for (col, &i) in idx.iter().enumerate() {
                let img = batch.image(i);
                for y in 0..s {
                    for x in 0..s {
                        for c in 0..3 {
                            let v = img[c * s * s + y * s + x].clamp(0.0, 1.0);
                            pixels[((r * s + y) * w + col * s + x) * 3 + c] = (v * 255.0).round() as u8;
                        }
                    }
                }
            }
        }
        let mut ppm = format!("P6\n{} {}\n255\n", w, h).into_bytes();
        ppm.extend_from_slice(&pixels);
        let path = out.join(format!("task-{:02}.ppm", task.task_id));
        fs::write(&path, ppm).map_err(|e| wsk::Error::io(&path, e))?;
        println!("task {:2}  noise {:.3}  {}", task.task_id, task.noise_std, task.name());
    }
    println!("wrote {}", out.display());
    Ok(())
}
