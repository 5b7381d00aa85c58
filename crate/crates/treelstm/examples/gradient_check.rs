//! Compares backpropagated gradients against central finite differences
//! for every parameter of a small model on a random tree.
//!
//!     cargo run --example gradient_check

use treelstm::training::gradient_check;

fn main() {
    let report = gradient_check(1).expect("gradient check failed to run");
    println!("{:<16} relative error", "parameter");
    for (name, rel) in &report.per_param {
        println!("{name:<16} {rel:.3e}");
    }
    println!("\nmax relative error: {:.3e}", report.max_rel_error);
    if report.max_rel_error < 1e-4 {
        println!("gradients agree with finite differences");
    } else {
        println!("MISMATCH: backpropagation disagrees with finite differences");
        std::process::exit(3);
    }
}
