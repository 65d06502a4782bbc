fn main() {
    std::process::exit(grassnet::cli::run(std::env::args_os()));
}
