use clap::Parser;

use state_auction_cli::{run, RunConfig};

fn main() {
    let config = RunConfig::parse();
    match run(config) {
        Ok(text) => print!("{text}"),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
