fn main() {
    std::process::exit(cvbsl::cli::main_exit());
}
