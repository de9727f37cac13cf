fn main() {
    let mut out = String::new();
    let code = yahtzee_cli::run_with(std::env::args_os(), &mut out);
    print!("{out}");
    std::process::exit(code);
}
