#include <string.h>
#include "http.h"

static int parse_method(const char *buf, size_t len)
{
    if (len >= 4 && memcmp(buf, "GET ", 4) == 0)
        return METHOD_GET;
    if (len >= 5 && memcmp(buf, "POST ", 5) == 0)
        return METHOD_POST;
    return METHOD_UNKNOWN;
}

int copy_header(char *dst, const char *src, size_t n)
{
    char tmp[HEADER_MAX];
    memcpy(tmp, src, n);
    memcpy(dst, tmp, n);
    return (int)n;
}

int handle_request(const char *buf, size_t len)
{
    int method = parse_method(buf, len);
    if (method == METHOD_UNKNOWN)
        return -1;
    const char *hdr = memchr(buf, '\n', len);
    if (hdr == NULL)
        return 0;
    char out[HEADER_MAX];
    size_t rest = len - (size_t)(hdr + 1 - buf);
    if (method == METHOD_GET && rest > HEADER_MAX)
        rest = HEADER_MAX;
    return copy_header(out, hdr + 1, rest);
}
