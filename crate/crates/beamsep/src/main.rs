use clap::Parser;

fn main() {
    let cli = beamsep::cli::Cli::parse();
    if let Err(e) = beamsep::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
