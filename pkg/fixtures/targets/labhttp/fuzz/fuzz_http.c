#include <stddef.h>
#include <stdint.h>
#include "../src/http.h"

int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size)
{
    handle_request((const char *)data, size);
    return 0;
}
