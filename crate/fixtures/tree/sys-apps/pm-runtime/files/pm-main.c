/* package manager stub shipped into the prefix */
int main(int argc, char **argv) { return dispatch(argc, argv); }
