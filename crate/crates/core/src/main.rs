fn main() {
    std::process::exit(biliseg::cli::run(std::env::args_os()));
}
