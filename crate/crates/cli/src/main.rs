fn main() {
    std::process::exit(gwib_cli::run(std::env::args_os()));
}
