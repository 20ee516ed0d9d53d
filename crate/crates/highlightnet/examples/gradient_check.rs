//! Verify every autodiff op and the composed pipeline loss against fp64
//! central finite differences.
//!
//!     cargo run --example gradient_check

fn main() -> highlightnet::Result<()> {
    let ops = highlightnet::gradsuite::run_op_suite(0)?;
    let mut ops_max = 0.0f64;
    for (name, err) in &ops {
        println!("{name:>16}: {err:.3e}");
        ops_max = ops_max.max(*err);
    }
    let pipeline = highlightnet::gradsuite::run_pipeline_check(16, 0)?;
    println!("---");
    println!("ops max rel err      = {ops_max:.3e}  (tolerance 1e-4)");
    println!("pipeline max rel err = {pipeline:.3e}  (tolerance 1e-3)");
    Ok(())
}
