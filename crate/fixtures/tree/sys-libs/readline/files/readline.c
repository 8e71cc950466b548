/* toy readline: history and line editing */
char *readline(const char *prompt) { return history_get(prompt); }
