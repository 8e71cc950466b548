/* toy compiler driver: parse, lower, emit */
int main(int argc, char **argv) { return compile_all(argc, argv); }
