use clap::Parser;
use ou_levy_cli::cli::Cli;

fn main() {
    let cli = Cli::parse();
    match ou_levy_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
