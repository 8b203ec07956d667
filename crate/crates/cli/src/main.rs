fn main() {
    std::process::exit(rwta_cli::run(std::env::args_os()));
}
