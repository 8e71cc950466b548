/* toy shell: read, expand, execute */
int main(void) { return repl(); }
