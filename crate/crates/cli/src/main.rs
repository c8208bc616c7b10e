use clap::Parser;

fn main() {
    let cli = dpcount_cli::Cli::parse();
    match dpcount_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}
