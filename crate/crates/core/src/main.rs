fn main() {
    std::process::exit(rigidreg::cli::run(std::env::args_os()));
}
