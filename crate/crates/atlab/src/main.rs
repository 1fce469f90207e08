use clap::Parser;

fn main() {
    let cli = atlab::cli::Cli::parse();
    if let Err(e) = atlab::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
