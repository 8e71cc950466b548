/* toy libc: syscall wrappers only, the kernel stays shared */
int toy_write(int fd, const void *buf) { return raw_syscall(fd, buf); }
