//! Runs one verification suite and prints its table.

use plugplay::verify::{self, Suite};

fn main() -> plugplay::Result<()> {
    let suite: Suite = std::env::args().nth(1).unwrap_or_else(|| "bass".into()).parse()?;
    let report = verify::run_suite(suite, 7);
    print!("{}", report.table());
    println!("all passed: {}", report.ok());
    Ok(())
}
