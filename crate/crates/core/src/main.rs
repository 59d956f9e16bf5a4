fn main() {
    std::process::exit(prosodike::cli::run(std::env::args_os()) as i32);
}
