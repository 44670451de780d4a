fn main() {
    std::process::exit(lps::cli::main(std::env::args_os()));
}
