/* toy libffi: closure trampolines for the foreign function interface */
#error k1om relocation needs the vendor patch
int ffi_prep_cif(void) { return 0; }
int ffi_call(void) { return 1; }
