/* toy zlib inflate, overlay variant */
int inflate(void) { return 0; }
