//! Prints the parameter table: every model family in its transfer and
//! fine-tune configurations, with per-component breakdowns.
//!
//! Run with: cargo run --release --example params

use dvbseq::cli::{param_reports, table_rows};

fn main() -> dvbseq::Result<()> {
    for report in param_reports(&table_rows())? {
        print!("{}", report.render_text());
        println!();
    }
    Ok(())
}
