// abloop command-line entry point. Subcommands are filled in as the
// library lands; see README for usage.

#include <cstdio>

int main() {
    std::puts("abloop: not yet wired");
    return 1;
}
