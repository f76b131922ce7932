use clap::Parser;

fn main() {
    let cli = egohpo_cli::Cli::parse();
    if let Err(e) = egohpo_cli::execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
