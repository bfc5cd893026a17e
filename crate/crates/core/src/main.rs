fn main() {
    std::process::exit(cryptostock::cli::dispatch(std::env::args_os()));
}
