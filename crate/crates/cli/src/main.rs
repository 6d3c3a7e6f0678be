fn main() {
    std::process::exit(addconc_cli::run(std::env::args_os()));
}
