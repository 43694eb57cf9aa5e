#ifndef LABHTTP_HTTP_H
#define LABHTTP_HTTP_H

#include <stddef.h>

#define HEADER_MAX 64

enum { METHOD_UNKNOWN = 0, METHOD_GET = 1, METHOD_POST = 2 };

int copy_header(char *dst, const char *src, size_t n);
int handle_request(const char *buf, size_t len);

#endif
