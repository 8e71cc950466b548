/* toy R driver */
int main(void) { return eval_loop(); }
