//! Prints text Gantt charts for a synchronous and an asynchronous schedule
//! over the same heterogeneous duration table, illustrating how completion
//! triggers reduce worker idle time.

use eivar::scheduler::{idle_time, makespan, simulate_async, simulate_sync, Job};

const DURATIONS: [f64; 12] = [
    2.442, 2.051, 3.789, 1.584, 2.436, 1.944, 2.5, 1.0, 2.096, 3.641, 1.669, 1.005,
];

fn gantt(label: &str, trace: &[Job], k: usize) {
    let span = makespan(trace);
    let width = 72;
    let scale = width as f64 / span;
    println!("{label} (makespan {span:.2}s, idle {:.2} worker-seconds)", idle_time(trace, k));
    for w in 0..k {
        let mut row = vec![b'.'; width];
        for job in trace.iter().filter(|j| j.worker_id == w) {
            let start = (job.start_time * scale) as usize;
            let end = ((job.end_time * scale) as usize).min(width);
            let glyph = char::from_digit((job.generation_id % 10) as u32, 10).unwrap() as u8;
            for cell in row.iter_mut().take(end).skip(start) {
                *cell = glyph;
            }
        }
        println!("  W{w} {}", String::from_utf8(row).unwrap());
    }
    println!();
}

fn main() {
    let k = 4;
    gantt("sync k=4 b=4", &simulate_sync(k, &DURATIONS, 4), k);
    gantt("async k=4 c=2 a=2", &simulate_async(k, &DURATIONS, 2, 2), k);
    println!("digits mark each job's acquisition generation");
}
