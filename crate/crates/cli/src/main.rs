use clap::Parser;
use conformance_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((written, advisories)) => {
            for a in advisories {
                eprintln!("advisory: {a}");
            }
            for p in written {
                println!("{}", p.display());
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
