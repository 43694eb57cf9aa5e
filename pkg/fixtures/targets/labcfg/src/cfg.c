#include <string.h>
#include "cfg.h"

static const unsigned char CFG_MAGIC[8] = {0x89, 'L', 'A', 'B', 'C', 'F', 'G', 0x1a};

static int cfg_has_magic(const unsigned char *data, size_t len)
{
    return len >= sizeof(CFG_MAGIC) && memcmp(data, CFG_MAGIC, sizeof(CFG_MAGIC)) == 0;
}

static int cfg_read_entry(struct cfg *c, const unsigned char *data, size_t len)
{
    size_t klen = data[8];
    memcpy(c->key, data + 9, klen);
    c->key[klen] = '\0';
    c->entries++;
    return 0;
}

int cfg_parse(struct cfg *c, const unsigned char *data, size_t len)
{
    if (!cfg_has_magic(data, len))
        return -1;
    if (len < 10)
        return -1;
    return cfg_read_entry(c, data, len);
}
