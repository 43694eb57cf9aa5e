#include <stddef.h>
int codec_decode(int kind, const unsigned char *data, size_t len);
