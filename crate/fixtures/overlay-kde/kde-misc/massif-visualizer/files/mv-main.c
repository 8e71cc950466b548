/* toy heap profile viewer */
int main(void) { return render_snapshots(); }
