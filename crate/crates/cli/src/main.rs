use clap::Parser;
use detkit_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr();
    if let Err(e) = run(cli, &mut out, &mut err) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
