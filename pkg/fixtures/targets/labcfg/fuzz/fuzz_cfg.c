#include <stddef.h>
#include <stdint.h>
#include <string.h>
#include "../src/cfg.h"

int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size)
{
    struct cfg c;
    memset(&c, 0, sizeof(c));
    cfg_parse(&c, data, size);
    return 0;
}
