#ifndef LABCFG_CFG_H
#define LABCFG_CFG_H

#include <stddef.h>

#define CFG_KEY_MAX 32

struct cfg {
    char key[CFG_KEY_MAX];
    int entries;
};

int cfg_parse(struct cfg *c, const unsigned char *data, size_t len);

#endif
