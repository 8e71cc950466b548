/* toy interpreter entry point */
static const char *version = "toy python";

int main(int argc, char **argv) {
    (void)argc;
    (void)argv;
    return run_repl(version);
}
