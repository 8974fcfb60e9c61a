#include <cstdio>
int main() { std::puts("glyphstyle: cli under construction"); return 0; }
