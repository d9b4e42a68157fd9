fn main() {
    if let Ok(dir) = std::env::var("DEP_NEUROSIM_CORE_LIBTORCH_LIB") {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{dir}");
    }
}
