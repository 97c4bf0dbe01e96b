"""Entity-name normalization shared by graph identity and enrichment."""

from __future__ import annotations

import re

_SEP_RUN = re.compile(r"([/\\]+)")
_SCHEME = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*://")
_VERSION_RUN = re.compile(r"[0-9.]*[0-9][0-9.]*")


def _strip_versions(text: str) -> str:
    return _VERSION_RUN.sub("", text)


def _split_ext(component: str) -> tuple[str, str]:
    dot = component.rfind(".")
    if dot <= 0:
        return component, ""
    return component[:dot], component[dot:]


def normalize_name_flagged(name: str) -> tuple[str, bool]:
    """Normalized form plus a flag set when normalization emptied the name."""
    if not name:
        raise ValueError("name must be non-empty")
    m = _SCHEME.match(name)
    scheme, rest = (m.group(0), name[m.end():]) if m else ("", name)

    tokens = _SEP_RUN.split(rest)
    comps, seps = tokens[0::2], [s[0] for s in tokens[1::2]]
    lead = ""
    if comps and comps[0] == "" and seps:
        lead = seps[0]
        comps, seps = comps[1:], seps[1:]
    # drop trailing separators
    while comps and comps[-1] == "":
        comps.pop()
        if seps:
            seps.pop()

    out: list[tuple[str, str]] = []  # (separator before, component)
    for i, comp in enumerate(comps):
        sep = "" if i == 0 else seps[i - 1]
        last = i == len(comps) - 1
        if last:
            base, ext = _split_ext(comp)
            stripped = _strip_versions(base)
            new = (stripped if stripped else base) + ext
        else:
            new = _strip_versions(comp)
        if new:
            out.append((sep, new))

    body = "".join((sep if j else "") + comp for j, (sep, comp) in enumerate(out))
    if not body:
        return name, True
    return scheme + lead + body, False


def normalize_entity_name(name: str) -> str:
    """Collapse separator runs and strip version-like digit runs from path parts.

    The extension of the final component is kept verbatim; case is preserved.
    """
    return normalize_name_flagged(name)[0]
