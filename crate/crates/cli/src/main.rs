fn main() {
    std::process::exit(mgs_cli::run(std::env::args_os()));
}
