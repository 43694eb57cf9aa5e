#include <stddef.h>
#include "codec.h"

int codec_decode(int kind, const unsigned char *data, size_t len)
{
    unsigned char table[16];
    if (len < 2)
        return -1;
    table[data[0]] = data[1];
    return kind + table[0];
}
