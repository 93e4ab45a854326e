//! Finite-difference checks of every policy block.

use coop_mtsp::policy::{gradient_checks, PolicyConfig};
use coop_nn::GradCheckConfig;

fn main() -> coop_mtsp::Result<()> {
    let check = GradCheckConfig { coords_per_param: Some(4), ..GradCheckConfig::default() };
    let mut all = true;
    for (name, report) in gradient_checks(&PolicyConfig::default(), 4, &check)? {
        println!("{name:<18} {:>5} coords  max relative error {:.2e}", report.checked, report.max_rel_error);
        all &= report.passed();
    }
    println!("{}", if all { "all blocks pass" } else { "some block failed" });
    Ok(())
}
