/* multicall binary for the core tools */
int main(int argc, char **argv) { return multicall(argc, argv); }
