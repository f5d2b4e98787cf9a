fn main() {
    std::process::exit(hiermil_cli::run(std::env::args_os()));
}
