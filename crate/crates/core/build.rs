fn main() {
    // LAPACK comes from the system (reference LAPACK or OpenBLAS).
    println!("cargo:rustc-link-lib=dylib=lapack");
}
