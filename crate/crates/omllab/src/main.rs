fn main() {
    std::process::exit(omllab::cli::main_entry());
}
