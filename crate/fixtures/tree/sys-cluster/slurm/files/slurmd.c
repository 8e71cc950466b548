/* toy slurm worker daemon */
int main(void) { return serve_node(); }
