"""Regex-based indicator extraction with defang normalization.

Runs before the model-based detection pass: structured indicators (hashes,
addresses, URLs, registry keys, ...) plus CVE identifiers and ATT&CK
technique ids are matched deterministically. Overlapping matches are resolved
longest-span-first, then by class precedence (URL beats the domain embedded
in it; SHA-256 beats the MD5-sized prefix inside it).

The pattern set is embedded but can be overridden per class through a JSON
config file (class name -> regex and precedence), since defanging and naming
conventions drift across report vendors.
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .stix.types import EntityType, IndicatorSubtype

IocKind = IndicatorSubtype | EntityType

# Defang-tolerant fragments.
_DOT = r"(?:\.|\[\.\]|\(\.\)|\{\.\})"
_AT = r"(?:@|\[at\]|\(at\))"
_COLON = r"(?::|\[:\])"

_TLDS = (
    "com|net|org|info|biz|io|co|uk|de|fr|ru|cn|jp|kr|in|br|au|ca|nl|se|ch|es|it|pl|ir|"
    "us|eu|me|tv|cc|ws|name|mobi|asia|edu|gov|mil|int|xyz|top|site|online|club|link|"
    "live|store|tech|space|fun|pro|dev|app|cloud|onion"
)

_FILE_EXTS = (
    "exe|dll|sys|drv|ocx|scr|cpl|msi|bat|cmd|ps1|psm1|vbs|vbe|js|jse|wsf|hta|jar|class|"
    "py|sh|elf|bin|so|dylib|doc|docx|docm|xls|xlsx|xlsm|ppt|pptx|pdf|rtf|chm|lnk|iso|img|"
    "zip|rar|7z|tar|gz|bz2|xz|cab|apk|dmg|php|asp|aspx|jsp|tmp|dat|cfg|ini|log|txt|db|sqlite"
)

DEFAULT_PATTERNS: dict[str, str] = {
    # Order of this dict is the class precedence order (highest first).
    "URL": rf"\b(?:h(?:tt|xx)ps?|ftps?){_COLON}//[^\s\"'<>]+",
    "EMAIL_ADDR": rf"\b[A-Za-z0-9._%+-]+{_AT}(?:[A-Za-z0-9-]+{_DOT})+[A-Za-z]{{2,24}}\b",
    "WINDOWS_REGISTRY_KEY": (
        r"\b(?:HKEY_LOCAL_MACHINE|HKEY_CURRENT_USER|HKEY_CLASSES_ROOT|HKEY_USERS|"
        r"HKEY_CURRENT_CONFIG|HKLM|HKCU|HKCR|HKU|HKCC)\\[^\s\"'<>|]+"
    ),
    "MUTEX": r"(?:\b(?:Global|Local)|\\BaseNamedObjects)\\[A-Za-z0-9_.{}\-]+",
    "USER_AGENT": r"\bMozilla/\d\.\d\s*\([^)]*\)[^\r\n<>\"']*",
    "FILE_PATH": (
        r"(?:\b[A-Za-z]:\\(?:[^\\/:*?\"'<>|\r\n ]+\\)*[^\\/:*?\"'<>|\r\n ]+"
        r"|(?<![\w/])/(?:etc|tmp|var|usr|home|opt|bin|sbin|root|dev|proc|srv|data|lib)"
        r"(?:/[A-Za-z0-9._\-]+)+/?)"
    ),
    "DIRECTORY": r"\b[A-Za-z]:\\(?:[^\\/:*?\"'<>|\r\n ]+\\)+",
    "IPV4_ADDR": rf"(?<![\w.])(?:\d{{1,3}}{_DOT}){{3}}\d{{1,3}}(?![\w.])",
    "IPV6_ADDR": (
        r"(?<![\w:.])(?:(?:[0-9A-Fa-f]{1,4}:){7}[0-9A-Fa-f]{1,4}"
        r"|(?:[0-9A-Fa-f]{1,4}:)+:(?:[0-9A-Fa-f]{1,4}:)*[0-9A-Fa-f]{1,4}"
        r"|(?:[0-9A-Fa-f]{1,4}:)+:)(?![\w:])"
    ),
    "MAC_ADDR": r"(?<![\w:.-])(?:[0-9A-Fa-f]{2}:){5}[0-9A-Fa-f]{2}(?![\w:.-])",
    "DOMAIN_NAME": rf"(?<![\w.@-])(?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?{_DOT})+(?:{_TLDS})\b",
    "FILE_HASH_SHA256": r"\b[A-Fa-f0-9]{64}\b",
    "FILE_HASH_SHA1": r"\b[A-Fa-f0-9]{40}\b",
    "FILE_HASH_MD5": r"\b[A-Fa-f0-9]{32}\b",
    "FILE_NAME": rf"\b[A-Za-z0-9_][A-Za-z0-9_.\-]*\.(?:{_FILE_EXTS})\b",
    "AUTONOMOUS_SYSTEM": r"\bASN?\d{1,10}\b",
    "VULNERABILITY": r"\bCVE-\d{4}-\d{4,7}\b",
    "ATTACK_PATTERN": r"\bT\d{4}(?:\.\d{3})?\b",
}

_KIND_BY_CLASS: dict[str, IocKind] = {
    "VULNERABILITY": EntityType.VULNERABILITY,
    "ATTACK_PATTERN": EntityType.ATTACK_PATTERN,
    **{name.value: name for name in IndicatorSubtype},
}


@dataclass(frozen=True)
class IocMatch:
    value: str  # canonical, refanged
    raw: str  # exactly as present in the text
    kind: IocKind
    span: tuple[int, int]
    low_confidence: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "raw": self.raw,
            "kind": self.kind.value,
            "span": list(self.span),
            "low_confidence": self.low_confidence,
        }


_REFANG_STEPS = (
    (re.compile(r"\[\.\]|\(\.\)|\{\.\}"), "."),
    (re.compile(r"hxxp(s?)", re.IGNORECASE), lambda m: "http" + m.group(1).lower()),
    (re.compile(r"\[at\]|\(at\)", re.IGNORECASE), "@"),
    (re.compile(r"\[:\]"), ":"),
)


def refang(raw: str) -> str:
    """Undo common defanging, in fixed rule order; idempotent."""
    value = raw
    for pattern, replacement in _REFANG_STEPS:
        value = pattern.sub(replacement, value)
    return value


def _valid_ipv4(value: str) -> bool:
    parts = value.split(".")
    return len(parts) == 4 and all(p.isdigit() and 0 <= int(p) <= 255 for p in parts)


def _ip_low_confidence(value: str) -> bool:
    try:
        ip = ipaddress.ip_address(value)
    except ValueError:
        return True
    return ip.is_private or ip.is_reserved or ip.is_loopback or ip.is_link_local or ip.is_multicast


_TLD_SET = set(_TLDS.split("|"))
_CLEAN_URL_RE = re.compile(r"^(?:https?|ftps?)://[^\s/]+\S*$", re.IGNORECASE)
_CLEAN_EMAIL_RE = re.compile(r"^[A-Za-z0-9._%+-]+@(?:[A-Za-z0-9-]+\.)+[A-Za-z]{2,24}$")
_TRAILING_PUNCT = ".,;:!?)\"'>]"


class PatternSet:
    """Compiled extraction patterns with a fixed precedence order."""

    def __init__(self, patterns: dict[str, str] | None = None):
        source = patterns or DEFAULT_PATTERNS
        self.order: list[str] = list(source)
        self.compiled: dict[str, re.Pattern] = {}
        for name, pattern in source.items():
            if name not in _KIND_BY_CLASS:
                raise ValueError(f"unknown pattern class {name!r}")
            self.compiled[name] = re.compile(pattern)

    @classmethod
    def from_config(cls, path: str | Path) -> "PatternSet":
        """Load overrides from JSON: {"patterns": {class: regex}, "precedence": [...]}"""
        config = json.loads(Path(path).read_text(encoding="utf-8"))
        patterns = dict(DEFAULT_PATTERNS)
        patterns.update(config.get("patterns", {}))
        precedence = config.get("precedence")
        if precedence:
            missing = set(patterns) - set(precedence)
            if missing:
                raise ValueError(f"precedence list missing classes: {sorted(missing)}")
            patterns = {name: patterns[name] for name in precedence}
        return cls(patterns)


_DEFAULT_SET = PatternSet()


_DEFANG_TAILS = ("[.]", "(.)", "{.}", "[:]", "[at]", "(at)")


def _trim_raw_tail(raw: str) -> str:
    """Drop sentence punctuation that the greedy URL pattern swallowed,
    without breaking a trailing defang token like ``[.]``."""
    while raw and raw[-1] in _TRAILING_PUNCT and not raw.endswith(_DEFANG_TAILS):
        raw = raw[:-1]
    return raw


def _canonicalize(class_name: str, raw: str) -> tuple[str, bool] | None:
    """Refang and post-validate a raw match. Returns (value, low_confidence)
    or None when the match fails class-specific validation."""
    value = refang(raw)
    if class_name == "URL":
        return (value, False) if _CLEAN_URL_RE.match(value) else None
    if class_name == "EMAIL_ADDR":
        return (value.lower(), False) if _CLEAN_EMAIL_RE.match(value) else None
    if class_name == "DOMAIN_NAME":
        lowered = value.lower()
        return (lowered, False) if lowered.rsplit(".", 1)[-1] in _TLD_SET else None
    if class_name == "IPV4_ADDR":
        return (value, _ip_low_confidence(value)) if _valid_ipv4(value) else None
    if class_name == "IPV6_ADDR":
        try:
            ipaddress.IPv6Address(value)
        except ValueError:
            return None
        return value.lower(), _ip_low_confidence(value)
    if class_name == "MAC_ADDR":
        return value.lower(), False
    if class_name.startswith("FILE_HASH"):
        return value.lower(), False
    if class_name == "AUTONOMOUS_SYSTEM":
        return "AS" + re.sub(r"(?i)^ASN?", "", value), False
    if class_name == "VULNERABILITY":
        return value.upper(), False
    if class_name == "USER_AGENT":
        return value.rstrip(" " + _TRAILING_PUNCT), False
    return value, False


def extract_iocs(text: str, patterns: PatternSet | None = None) -> list[IocMatch]:
    """All non-overlapping indicator matches in ``text``, sorted by span.

    Overlap resolution: longer span wins; on equal spans the class listed
    earlier in the precedence order wins.
    """
    pattern_set = patterns or _DEFAULT_SET
    candidates: list[tuple[int, int, int, IocMatch]] = []
    for precedence, class_name in enumerate(pattern_set.order):
        for match in pattern_set.compiled[class_name].finditer(text):
            raw = match.group(0)
            start, _ = match.span()
            if class_name in ("URL", "USER_AGENT"):
                raw = _trim_raw_tail(raw)
                if not raw:
                    continue
            end = start + len(raw)
            canonical = _canonicalize(class_name, raw)
            if canonical is None:
                continue
            value, low_confidence = canonical
            candidates.append(
                (
                    start,
                    end,
                    precedence,
                    IocMatch(value, raw, _KIND_BY_CLASS[class_name], (start, end), low_confidence),
                )
            )

    # Longest-match-wins, then precedence, then position.
    candidates.sort(key=lambda item: (-(item[1] - item[0]), item[2], item[0]))
    taken: list[tuple[int, int]] = []
    selected: list[IocMatch] = []
    for start, end, _, match in candidates:
        if any(start < t_end and end > t_start for t_start, t_end in taken):
            continue
        taken.append((start, end))
        selected.append(match)
    selected.sort(key=lambda m: m.span)
    return selected
