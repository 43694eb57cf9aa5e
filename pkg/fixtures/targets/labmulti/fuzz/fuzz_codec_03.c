#include <stddef.h>
#include <stdint.h>
#include "../src/codec.h"

int LLVMFuzzerTestOneInput(const uint8_t *data, size_t size)
{
    codec_decode(3, data, size);
    return 0;
}
