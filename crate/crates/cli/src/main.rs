use clap::Parser;

fn main() {
    let cli = towcheck::cli::Cli::parse();
    match towcheck::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
