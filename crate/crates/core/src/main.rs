fn main() { std::process::exit(corrkd::cli::run(std::env::args_os())); }
