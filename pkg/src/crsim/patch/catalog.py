"""Small catalog of example fixes, keyed by crash class and weakness id."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

_ASAN_KIND = re.compile(r"(?:ERROR|WARNING): \w+Sanitizer: ([\w-]+)")
_JAZZER_KIND = re.compile(r"Java Exception: [\w.$]+: (.+)$", re.M)


def crash_class(report: str) -> str:
    """Coarse crash class such as ``heap-buffer-overflow`` or ``jazzer``."""
    m = _ASAN_KIND.search(report)
    if m:
        return m.group(1).lower()
    if "Java Exception" in report:
        m = _JAZZER_KIND.search(report)
        return "jazzer:" + (m.group(1).strip().lower().replace(" ", "-") if m else "exception")
    if "SEGV" in report:
        return "segv"
    return "unknown"


_BOUNDS = """\
--- a/src/buf.c
+++ b/src/buf.c
@@ -3,5 +3,7 @@
 int copy_field(char *dst, size_t cap, const char *src, size_t n)
 {
+    if (n >= cap)
+        return -1;
     memcpy(dst, src, n);
     dst[n] = '\\0';
     return 0;
"""

_UAF = """\
--- a/src/list.c
+++ b/src/list.c
@@ -10,6 +10,7 @@
 void drop_node(struct list *l, struct node *n)
 {
     unlink_node(l, n);
     free(n);
+    n = NULL;
     l->count--;
 }
"""

_NULL = """\
--- a/src/cfg.c
+++ b/src/cfg.c
@@ -20,5 +20,7 @@
 const char *cfg_name(const struct cfg *c)
 {
+    if (c == NULL || c->name == NULL)
+        return "";
     return c->name;
 }
"""

_DESER = """\
--- a/src/main/java/Loader.java
+++ b/src/main/java/Loader.java
@@ -12,6 +12,10 @@
     Object load(InputStream in) throws IOException, ClassNotFoundException {
         ObjectInputStream ois = new ObjectInputStream(in);
+        ois.setObjectInputFilter(info -> {
+            Class<?> c = info.serialClass();
+            return c == null || ALLOWED.contains(c.getName()) ? ObjectInputFilter.Status.ALLOWED : ObjectInputFilter.Status.REJECTED;
+        });
         return ois.readObject();
     }
"""

DEFAULT_ENTRIES: dict[tuple[str, Optional[str]], str] = {
    ("heap-buffer-overflow", None): _BOUNDS,
    ("stack-buffer-overflow", None): _BOUNDS,
    ("global-buffer-overflow", None): _BOUNDS,
    ("heap-use-after-free", None): _UAF,
    ("segv", "CWE-476"): _NULL,
    ("jazzer", "CWE-502"): _DESER,
}


@dataclass
class SamplePatchCatalog:
    entries: dict[tuple[str, Optional[str]], str] = field(default_factory=lambda: dict(DEFAULT_ENTRIES))

    def lookup(self, crash_cls: str, cwe: Optional[str] = None) -> Optional[str]:
        """Exact (class, cwe) first, then the class alone, then the class family."""
        for key in ((crash_cls, cwe), (crash_cls, None), (crash_cls.split(":")[0], cwe),
                    (crash_cls.split(":")[0], None)):
            if key in self.entries:
                return self.entries[key]
        return None
