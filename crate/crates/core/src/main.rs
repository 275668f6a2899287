fn main() {
    std::process::exit(eivtraj::cli::main_entry());
}
