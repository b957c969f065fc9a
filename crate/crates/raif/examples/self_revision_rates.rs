//! Shows how the post-episode self-revision pass assigns preference rates
//! for a few canonical episode shapes.
//!
//!     cargo run -p raif --example self_revision_rates

use raif::self_revision::{compute_preference_rates, EpisodeFlags, RevisionConfig};

fn show(label: &str, expert: &[bool], success: &[bool]) {
    let k = success.iter().any(|&d| d);
    let flags = EpisodeFlags::new(expert.to_vec(), success.to_vec(), k).unwrap();
    let rho = compute_preference_rates(&flags, &RevisionConfig::default()).unwrap();
    let short: Vec<String> = rho.iter().map(|r| format!("{r:+.2}")).collect();
    println!("{label:32} rho = [{}]", short.join(", "));
}

fn main() {
    show("failure, no expert", &[false; 8], &[false; 8]);
    show("success at the end", &[false; 8], &{
        let mut d = [false; 8];
        d[7] = true;
        d
    });
    show("success mid-episode", &[false; 8], &{
        let mut d = [false; 8];
        d[4] = true;
        d
    });
    show("expert demo (all success)", &[true; 8], &[true; 8]);
    show("expert steps in failed episode", &[true, true, false, false, false, false, false, false], &[false; 8]);
}
