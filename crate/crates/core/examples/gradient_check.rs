//! Finite-difference gradient check of the tiny classification and
//! segmentation networks.

use pointseq::model::{ModelConfig, Task};
use pointseq::training::gradient_check;

fn main() -> pointseq::Result<()> {
    for task in [Task::Classification, Task::Segmentation] {
        let report = gradient_check(&ModelConfig::tiny(task), 1e-4)?;
        println!("{task:?}\n{}", report.table());
        println!("max relative error {:.3e}, passed {}\n", report.max_error(), report.passed());
    }
    Ok(())
}
