fn main() {
    std::process::exit(prince_cli::run(std::env::args_os()));
}
