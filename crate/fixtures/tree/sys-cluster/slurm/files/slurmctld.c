/* toy slurm controller daemon */
int main(void) { return schedule_jobs(); }
