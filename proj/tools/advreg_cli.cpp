// Placeholder main; subcommands are added with the harness module.
int main() { return 0; }
